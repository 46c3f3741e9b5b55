#include "run_config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "attnct/errors.hpp"
#include "attnct/metrics.hpp"

namespace attnct::cli {
namespace {

using kv::format_double;

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_double(v[i]);
  return out;
}

std::string join_u64(const std::vector<std::uint64_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::vector<std::uint64_t> parse_u64s(const std::string& key, const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(kv::parse_u64(key, item));
  if (out.empty()) throw ConfigError(key + ": expected at least one seed");
  return out;
}

train::Timing parse_timing(const std::string& key, const std::string& s) {
  if (s == "wall") return train::Timing::wall;
  if (s == "off") return train::Timing::off;
  throw ConfigError(key + ": expected wall or off, got `" + s + "`");
}

explain::OcclusionTarget parse_target(const std::string& key, const std::string& s) {
  if (s == "probability") return explain::OcclusionTarget::probability;
  if (s == "logit") return explain::OcclusionTarget::logit;
  throw ConfigError(key + ": expected probability or logit, got `" + s + "`");
}

RunConfig::EvalSplit parse_split(const std::string& key, const std::string& s) {
  if (s == "test") return RunConfig::EvalSplit::test;
  if (s == "train") return RunConfig::EvalSplit::train;
  if (s == "all") return RunConfig::EvalSplit::all;
  throw ConfigError(key + ": expected test, train, or all, got `" + s + "`");
}

const char* split_name(RunConfig::EvalSplit s) {
  switch (s) {
    case RunConfig::EvalSplit::test: return "test";
    case RunConfig::EvalSplit::train: return "train";
    case RunConfig::EvalSplit::all: return "all";
  }
  return "?";
}

}  // namespace

std::vector<double> RunConfig::metrics_default_thresholds() { return metrics::default_threshold_grid(); }

void RunConfig::apply(const std::string& key, const std::string& value) {
  using kv::parse_double;
  using kv::parse_size;
  explicit_keys.insert(key);
  if (net.apply_kv(key, value) || augment.apply_kv(key, value)) return;
  if (key == "seed") seed = kv::parse_u64(key, value);
  else if (key == "out") out = value;
  else if (key == "input.data") input.data = value;
  else if (key == "input.model") input.model = value;
  else if (key == "input.image") input.image = value;
  else if (key == "input.mask") input.mask = value;
  else if (key == "input.grid") input.grid = value;
  else if (key == "synth.n") synth_n = parse_size(key, value);
  else if (key == "synth.size") synth_size = parse_size(key, value);
  else if (key == "train.epochs") train.epochs = parse_size(key, value);
  else if (key == "train.batch_size") train.batch_size = parse_size(key, value);
  else if (key == "train.eval_threshold") train.eval_threshold = parse_double(key, value);
  else if (key == "train.checkpoint_every") train.checkpoint_every = parse_size(key, value, true);
  else if (key == "train.validation_fraction") train.validation_fraction = parse_double(key, value);
  else if (key == "train.augmentation_factor") train.augmentation_factor = parse_size(key, value);
  else if (key == "train.timing") train.timing = parse_timing(key, value);
  else if (key == "train.optimizer") {
    try {
      optimizer.kind = train::parse_optimizer(value);
    } catch (const Error& e) {
      throw ConfigError(key + ": " + e.what());
    }
  }
  else if (key == "train.lr") optimizer.learning_rate = parse_double(key, value);
  else if (key == "train.momentum") optimizer.momentum = parse_double(key, value);
  else if (key == "train.beta1") optimizer.beta1 = parse_double(key, value);
  else if (key == "train.beta2") optimizer.beta2 = parse_double(key, value);
  else if (key == "train.rho") optimizer.rho = parse_double(key, value);
  else if (key == "train.epsilon") optimizer.epsilon = parse_double(key, value);
  else if (key == "data.split_file") {
    if (value.empty()) split.split_file.reset();
    else split.split_file = value;
  }
  else if (key == "data.test_fraction") split.test_fraction = parse_double(key, value);
  else if (key == "occlusion.patch") occlusion.patch = parse_size(key, value);
  else if (key == "occlusion.stride") occlusion.stride = parse_size(key, value);
  else if (key == "occlusion.fill") occlusion.fill = parse_double(key, value);
  else if (key == "occlusion.target") occlusion.target = parse_target(key, value);
  else if (key == "explain.layer") explain_layer = value;
  else if (key == "explain.method") {
    try {
      explain_method = explain::parse_method(value);
    } catch (const Error& e) {
      throw ConfigError(key + ": " + e.what());
    }
  }
  else if (key == "eval.split") eval_split = parse_split(key, value);
  else if (key == "eval.localization") eval_localization = kv::parse_bool(key, value);
  else if (key == "eval.thresholds") thresholds = kv::parse_doubles(key, value);
  else if (key == "eval.threshold") threshold = parse_double(key, value);
  else if (key == "eval.bins") histogram_bins = parse_size(key, value);
  else if (key == "sweep.repeat_seeds") repeat_seeds = parse_u64s(key, value);
  else throw ConfigError("unknown key `" + key + "`");
}

void RunConfig::apply_text(const std::string& text, const std::string& source) {
  for (const auto& line : kv::parse_text(text, source)) {
    try {
      apply(line.key, line.value);
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(line.line) + ": " + e.what());
    }
  }
}

void RunConfig::apply_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path.string() + ": cannot read config file");
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_text(ss.str(), path.string());
}

void RunConfig::resolve() {
  train.seed = seed;
  split.seed = seed;
  split.height = net.input_height;
  split.width = net.input_width;
  net.validate();
  train.validate();
  optimizer.validate();
  augment.validate();
  split.validate();
  occlusion.validate(net.input_height, net.input_width);
  if (thresholds.empty()) throw ConfigError("eval.thresholds: at least one threshold is required");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (!(thresholds[i] >= 0.0 && thresholds[i] <= 1.0)) throw ConfigError("eval.thresholds: values must lie in [0, 1]");
    if (i > 0 && !(thresholds[i] > thresholds[i - 1])) throw ConfigError("eval.thresholds: values must be ascending");
  }
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("eval.threshold: must lie in [0, 1]");
}

kv::Entries RunConfig::to_kv() const {
  kv::Entries e{{"seed", std::to_string(seed)},
                {"out", out.string()},
                {"input.data", input.data.string()},
                {"input.model", input.model.string()},
                {"input.image", input.image.string()},
                {"input.mask", input.mask.string()},
                {"input.grid", input.grid.string()},
                {"synth.n", std::to_string(synth_n)},
                {"synth.size", std::to_string(synth_size)}};
  for (auto& p : net.to_kv()) e.push_back(std::move(p));
  e.insert(e.end(), {
                        {"train.epochs", std::to_string(train.epochs)},
                        {"train.batch_size", std::to_string(train.batch_size)},
                        {"train.eval_threshold", format_double(train.eval_threshold)},
                        {"train.checkpoint_every", std::to_string(train.checkpoint_every)},
                        {"train.validation_fraction", format_double(train.validation_fraction)},
                        {"train.augmentation_factor", std::to_string(train.augmentation_factor)},
                        {"train.timing", train.timing == train::Timing::wall ? "wall" : "off"},
                        {"train.optimizer", train::to_string(optimizer.kind)},
                        {"train.lr", format_double(optimizer.learning_rate)},
                        {"train.momentum", format_double(optimizer.momentum)},
                        {"train.beta1", format_double(optimizer.beta1)},
                        {"train.beta2", format_double(optimizer.beta2)},
                        {"train.rho", format_double(optimizer.rho)},
                        {"train.epsilon", format_double(optimizer.epsilon)},
                    });
  for (auto& p : augment.to_kv()) e.push_back(std::move(p));
  e.insert(e.end(), {
                        {"data.split_file", split.split_file ? split.split_file->string() : ""},
                        {"data.test_fraction", format_double(split.test_fraction)},
                        {"occlusion.patch", std::to_string(occlusion.patch)},
                        {"occlusion.stride", std::to_string(occlusion.stride)},
                        {"occlusion.fill", format_double(occlusion.fill)},
                        {"occlusion.target",
                         occlusion.target == explain::OcclusionTarget::logit ? "logit" : "probability"},
                        {"explain.layer", explain_layer},
                        {"explain.method", explain::to_string(explain_method)},
                        {"eval.split", split_name(eval_split)},
                        {"eval.localization", eval_localization ? "true" : "false"},
                        {"eval.thresholds", join_doubles(thresholds)},
                        {"eval.threshold", format_double(threshold)},
                        {"eval.bins", std::to_string(histogram_bins)},
                        {"sweep.repeat_seeds", join_u64(repeat_seeds)},
                    });
  return e;
}

std::string RunConfig::text() const { return kv::format(to_kv()); }

std::uint64_t seed_from_environment(std::uint64_t fallback) {
  const char* env = std::getenv("ATTNCT_SEED");
  if (env == nullptr || *env == '\0') return fallback;
  return kv::parse_u64("ATTNCT_SEED", env);
}

}  // namespace attnct::cli
