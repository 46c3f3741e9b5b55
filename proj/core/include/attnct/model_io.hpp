#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "attnct/net.hpp"

namespace attnct::net {

/// Model container layout (all integers unsigned 32-bit little-endian):
///
///   "ATTNCT1\0"
///   header length, header bytes   key=value lines: net.* config, seed, epoch, extras
///   record count
///   per record: path length, path bytes, rank, extents[rank], float32 values
///
/// Batch-norm running statistics are stored as `<layer>.running_mean` and
/// `<layer>.running_var` records next to the learned tensors.
inline constexpr char kModelMagic[8] = {'A', 'T', 'T', 'N', 'C', 'T', '1', '\0'};

using HeaderEntries = std::vector<std::pair<std::string, std::string>>;

struct LoadedModel {
  Network network;
  std::size_t epoch = 0;
  HeaderEntries header;

  std::optional<std::string> header_value(const std::string& key) const;
};

std::vector<std::uint8_t> encode_model(const Network& network, std::size_t epoch, const HeaderEntries& extra = {});
LoadedModel decode_model(const std::vector<std::uint8_t>& bytes);

void save_model(const std::filesystem::path& path, const Network& network, std::size_t epoch,
                const HeaderEntries& extra = {});
LoadedModel load_model(const std::filesystem::path& path);

}  // namespace attnct::net
