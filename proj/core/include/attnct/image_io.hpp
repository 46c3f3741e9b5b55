#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "attnct/tensor.hpp"

namespace attnct::data {

/// Decodes a binary (P5) PGM into a 1 x H x W tensor scaled to [0, 1] by the
/// file's maxval. 8-bit and 16-bit (big-endian) samples are accepted.
Tensor decode_pgm(const std::vector<std::uint8_t>& bytes);
Tensor read_pgm(const std::filesystem::path& path);

/// Encodes a 1 x H x W (or H x W) tensor as 8-bit P5, round(clamp(v) * 255).
std::vector<std::uint8_t> encode_pgm(const Tensor& image);
void write_pgm(const std::filesystem::path& path, const Tensor& image);

/// Resizes a 1 x H x W image: area averaging along shrinking axes, bilinear
/// interpolation along growing ones.
Tensor resize_image(const Tensor& image, std::size_t height, std::size_t width);

}  // namespace attnct::data
