#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "attnct/augment.hpp"
#include "attnct/dataset.hpp"
#include "attnct/explain.hpp"
#include "attnct/kv.hpp"
#include "attnct/net.hpp"
#include "attnct/train.hpp"

namespace attnct::cli {

/// Every setting a command can consume, as one flat key=value namespace:
/// `seed`, `out`, `net.*`, `train.*`, `augment.*`, `data.*`, `occlusion.*`,
/// `explain.*`, `eval.*`, `sweep.*`, `synth.*`, `input.*`.
struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out;
  struct Inputs {
    std::filesystem::path data, model, image, mask, grid;
  } input;
  std::size_t synth_n = 50;  // per class, train and test together
  std::size_t synth_size = 128;
  net::AttentionNetConfig net;
  train::TrainConfig train;
  train::OptimizerConfig optimizer;
  data::AugmentationSpec augment;
  data::SplitSpec split;
  explain::OcclusionSpec occlusion;
  std::string explain_layer;  // empty: the network's default layer
  explain::Method explain_method = explain::Method::gradcam;
  enum class EvalSplit { test, train, all } eval_split = EvalSplit::test;
  bool eval_localization = false;
  std::vector<double> thresholds = metrics_default_thresholds();
  double threshold = 0.5;
  std::size_t histogram_bins = 10;
  std::vector<std::uint64_t> repeat_seeds{0};
  /// Keys set through apply(), in any source.
  std::set<std::string> explicit_keys;

  /// Throws ConfigError for unknown keys or bad values.
  void apply(const std::string& key, const std::string& value);
  /// Applies `key=value` text; errors name `source:line`.
  void apply_text(const std::string& text, const std::string& source);
  void apply_file(const std::filesystem::path& path);

  /// Propagates the global seed and image geometry into the sub-configs and
  /// validates everything.
  void resolve();

  kv::Entries to_kv() const;
  /// Serialized form; applying it to a default RunConfig reproduces this one.
  std::string text() const;

  static std::vector<double> metrics_default_thresholds();
};

/// Seed precedence: explicit flag, then a `seed` key in the config, then
/// ATTNCT_SEED, then 0.
std::uint64_t seed_from_environment(std::uint64_t fallback);

}  // namespace attnct::cli
