#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "attnct/augment.hpp"
#include "attnct/dataset.hpp"
#include "attnct/net.hpp"
#include "attnct/tape.hpp"

namespace attnct::train {

/// Mean binary cross-entropy over N x 1 scores; log arguments are clamped at 1e-12.
Var bce_loss(Tape& tape, Var scores, const std::vector<int>& labels);

enum class OptimizerKind { sgd, nesterov, adam, rmsprop };
std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& s);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::rmsprop;
  double learning_rate = 0.01;
  double momentum = 0.9;  // sgd, nesterov
  double beta1 = 0.9;     // adam
  double beta2 = 0.999;   // adam
  double rho = 0.9;       // rmsprop
  double epsilon = 1e-8;  // adam, rmsprop

  /// A zero learning rate is accepted and freezes the parameters.
  void validate() const;
  /// e.g. "rmsprop lr=0.01".
  std::string label() const;
};

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg);

  /// Updates every tensor in `params` from the gradient of the same key.
  /// Throws StateError when a gradient is missing or mis-shaped.
  void step(std::map<std::string, Tensor>& params, const std::map<std::string, Tensor>& grads);

  const OptimizerConfig& config() const { return cfg_; }
  std::size_t steps() const { return t_; }

 private:
  OptimizerConfig cfg_;
  std::size_t t_ = 0;
  std::map<std::string, Tensor> first_, second_;
};

enum class Timing { wall, off };

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  double eval_threshold = 0.5;
  /// Write a checkpoint every this many epochs; 0 disables.
  std::size_t checkpoint_every = 0;
  double validation_fraction = 0.15;
  /// Training-set multiplier from augmentation (1 = off).
  std::size_t augmentation_factor = 4;
  /// `off` writes 0 in the seconds column so epoch logs are byte-reproducible.
  Timing timing = Timing::wall;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  std::optional<double> train_sens, train_spec, val_sens, val_spec;
  double seconds = 0.0;
};

/// Header `epoch,train_loss,train_sens,train_spec,val_sens,val_spec,seconds`.
void write_epoch_header(std::ostream& os);
void write_epoch_row(std::ostream& os, const EpochRecord& r);

struct TrainData {
  std::vector<data::Sample> train;            // after augmentation
  std::vector<data::Sample> train_originals;  // before augmentation, for per-epoch metrics
  std::vector<data::Sample> validation;
};

/// Carves the seeded validation split out of the original training samples
/// and expands what remains by `cfg.augmentation_factor`.
TrainData prepare_training_data(const std::vector<data::Sample>& originals, const TrainConfig& cfg,
                                data::AugmentationSpec augmentation);

struct TrainCallbacks {
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(const net::Network&, std::size_t epoch)> on_checkpoint;
};

struct TrainResult {
  std::vector<EpochRecord> records;
  std::optional<double> train_accuracy, val_accuracy;
};

/// Mini-batch training in train mode; evaluation passes use eval mode.
/// Throws InputError for single-class data and NumericalError on a NaN loss.
TrainResult train(net::Network& network, const TrainData& data, const TrainConfig& cfg, const OptimizerConfig& opt,
                  const TrainCallbacks& callbacks = {});

/// Eval-mode scores for each sample.
std::vector<double> score_samples(const net::Network& network, const std::vector<data::Sample>& samples);
std::vector<int> labels_of(const std::vector<data::Sample>& samples);

struct SweepResult {
  OptimizerConfig optimizer;
  std::vector<double> val_accuracy;  // one per repeat seed
  std::vector<double> test_accuracy; // empty without a test set
  double val_mean = 0.0;
  /// Standard error of the mean; undefined for a single seed.
  std::optional<double> val_stderr;
  std::optional<double> test_mean, test_stderr;
};

struct SweepSpec {
  std::vector<OptimizerConfig> grid;
  std::vector<std::uint64_t> repeat_seeds{0};
  net::AttentionNetConfig network;
  TrainConfig train;
  data::AugmentationSpec augmentation;
};

/// Trains every grid entry once per repeat seed. A repeat seed fixes the
/// initial weights, the validation carve, augmentation, and shuffling, so all
/// configurations start from the same point.
std::vector<SweepResult> hyperparameter_sweep(const SweepSpec& spec, const std::vector<data::Sample>& originals,
                                              const std::vector<data::Sample>& test = {});

/// Five-row grid: adam 0.001, sgd 0.001, rmsprop 0.01 / 0.001 / 0.0001.
std::vector<OptimizerConfig> reference_grid();

/// Mean and standard error of the mean (std::nullopt for fewer than 2 values).
std::pair<double, std::optional<double>> mean_stderr(const std::vector<double>& v);

}  // namespace attnct::train
