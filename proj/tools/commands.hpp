#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "attnct/metrics.hpp"
#include "attnct/train.hpp"
#include "run_config.hpp"

namespace attnct::cli {

enum ExitCode : int { kOk = 0, kInternal = 1, kUsage = 2, kData = 3, kNumerical = 4 };

/// Maps an exception to its process exit code.
int exit_code_for(const std::exception& e);

struct SynthOutcome {
  std::size_t train = 0, test = 0;
  double separability_accuracy = 0.0;
};
/// Writes a synthetic dataset to cfg.out. A non-empty target is refused
/// unless `force`, and even then only when it holds nothing but a dataset.
SynthOutcome cmd_synth(RunConfig cfg, bool force, std::ostream& log);

struct TrainOutcome {
  train::TrainResult result;
  std::filesystem::path model;
};
TrainOutcome cmd_train(RunConfig cfg, std::ostream& log);

std::vector<train::SweepResult> cmd_sweep(RunConfig cfg, std::ostream& log);

struct LocalizationRow {
  std::string id;
  double mask_fraction = 0.0;
  double gradcam = 0.0;
  double occlusion = 0.0;
};

struct EvalOutcome {
  std::vector<metrics::ScoredSample> scored;
  double auc = 0.0;
  metrics::ConfusionMatrix cm;
  std::vector<LocalizationRow> localization;
};
EvalOutcome cmd_eval(RunConfig cfg, std::ostream& log);

struct ExplainOutcome {
  Tensor map;
  std::optional<double> localization;
};
ExplainOutcome cmd_explain(RunConfig cfg, std::ostream& log);

/// `optimizer learning_rate` per line; `#` comments and blank lines skipped.
std::vector<train::OptimizerConfig> parse_grid(const std::string& text, const std::string& source);

/// Full command line (args[0] is the program name). Returns the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace attnct::cli
