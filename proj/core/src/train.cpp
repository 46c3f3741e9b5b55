#include "attnct/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "attnct/errors.hpp"
#include "attnct/metrics.hpp"
#include "attnct/rng.hpp"

namespace attnct::train {
namespace {

constexpr std::uint64_t kValidationStream = 101;
constexpr std::uint64_t kAugmentStream = 102;
constexpr std::uint64_t kShuffleStream = 103;
constexpr double kLogFloor = 1e-12;

void require_coefficient(double v, const char* name) {
  if (!(v >= 0.0 && v < 1.0)) throw ConfigError(std::string("optimizer: ") + name + " must be in [0, 1)");
}

std::string fmt_metric(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

void require_both_classes(const std::vector<data::Sample>& s, const char* what) {
  if (data::count_label(s, data::kCovid) == 0 || data::count_label(s, data::kNonCovid) == 0) {
    throw InputError(std::string(what) + ": both classes must be present");
  }
}

metrics::ConfusionMatrix evaluate(const net::Network& network, const std::vector<data::Sample>& samples,
                                  double threshold) {
  return metrics::confusion_at(metrics::zip_scores(labels_of(samples), score_samples(network, samples)), threshold);
}

}  // namespace

Var bce_loss(Tape& tape, Var scores, const std::vector<int>& labels) {
  const Tensor& s = tape.value(scores);
  if (s.rank() != 2 || s.dim(1) != 1) throw DimensionError("bce_loss: expected N x 1 scores, got " + shape_str(s.shape()));
  const std::size_t n = s.dim(0);
  if (labels.size() != n) {
    throw DimensionError("bce_loss: " + std::to_string(n) + " scores but " + std::to_string(labels.size()) + " labels");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw InputError("bce_loss: label must be 0 or 1, got " + std::to_string(labels[i]));
    total -= labels[i] == 1 ? std::log(std::max(s[i], kLogFloor)) : std::log(std::max(1.0 - s[i], kLogFloor));
  }
  return tape.push(Tensor::scalar(total / static_cast<double>(n)), {scores.id}, "bce_loss",
                   [scores, labels, n](Tape& t, const Tensor& dy) {
                     Tensor* ds = t.grad_buffer(scores.id);
                     if (!ds) return;
                     const Tensor& sv = t.value(scores);
                     const double scale = dy[0] / static_cast<double>(n);
                     for (std::size_t i = 0; i < n; ++i) {
                       (*ds)[i] += labels[i] == 1 ? -scale / std::max(sv[i], kLogFloor)
                                                  : scale / std::max(1.0 - sv[i], kLogFloor);
                     }
                   });
}

std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::nesterov: return "nesterov";
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::rmsprop: return "rmsprop";
  }
  return "?";
}

OptimizerKind parse_optimizer(const std::string& s) {
  for (auto k : {OptimizerKind::sgd, OptimizerKind::nesterov, OptimizerKind::adam, OptimizerKind::rmsprop}) {
    if (s == to_string(k)) return k;
  }
  throw ConfigError("unknown optimizer `" + s + "` (expected sgd, nesterov, adam, or rmsprop)");
}

void OptimizerConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("optimizer: learning rate must be >= 0");
  require_coefficient(momentum, "momentum");
  require_coefficient(beta1, "beta1");
  require_coefficient(beta2, "beta2");
  require_coefficient(rho, "rho");
  if (!(epsilon > 0.0)) throw ConfigError("optimizer: epsilon must be positive");
}

std::string OptimizerConfig::label() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s lr=%g", to_string(kind).c_str(), learning_rate);
  return buf;
}

Optimizer::Optimizer(OptimizerConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void Optimizer::step(std::map<std::string, Tensor>& params, const std::map<std::string, Tensor>& grads) {
  for (const auto& [path, value] : params) {
    const auto g = grads.find(path);
    if (g == grads.end()) throw StateError("optimizer: no gradient for parameter " + path);
    if (g->second.shape() != value.shape()) {
      throw StateError("optimizer: gradient for " + path + " has shape " + shape_str(g->second.shape()) +
                       ", parameter has " + shape_str(value.shape()));
    }
  }
  ++t_;
  const double eta = cfg_.learning_rate;
  for (auto& [path, theta] : params) {
    const Tensor& g = grads.at(path);
    const std::size_t n = theta.numel();
    auto state = [&](std::map<std::string, Tensor>& m) -> Tensor& {
      auto it = m.find(path);
      if (it == m.end()) it = m.emplace(path, Tensor(theta.shape(), 0.0)).first;
      return it->second;
    };
    switch (cfg_.kind) {
      case OptimizerKind::sgd: {
        Tensor& v = state(first_);
        for (std::size_t i = 0; i < n; ++i) {
          v[i] = cfg_.momentum * v[i] - eta * g[i];
          theta[i] += v[i];
        }
        break;
      }
      case OptimizerKind::nesterov: {
        Tensor& v = state(first_);
        for (std::size_t i = 0; i < n; ++i) {
          v[i] = cfg_.momentum * v[i] - eta * g[i];
          theta[i] += cfg_.momentum * v[i] - eta * g[i];
        }
        break;
      }
      case OptimizerKind::adam: {
        Tensor& m = state(first_);
        Tensor& v = state(second_);
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < n; ++i) {
          m[i] = cfg_.beta1 * m[i] + (1 - cfg_.beta1) * g[i];
          v[i] = cfg_.beta2 * v[i] + (1 - cfg_.beta2) * g[i] * g[i];
          theta[i] -= eta * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.epsilon);
        }
        break;
      }
      case OptimizerKind::rmsprop: {
        Tensor& s = state(second_);
        for (std::size_t i = 0; i < n; ++i) {
          s[i] = cfg_.rho * s[i] + (1 - cfg_.rho) * g[i] * g[i];
          theta[i] -= eta * g[i] / (std::sqrt(s[i]) + cfg_.epsilon);
        }
        break;
      }
    }
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("train: batch_size must be at least 1");
  if (!(eval_threshold >= 0.0 && eval_threshold <= 1.0)) throw ConfigError("train: eval_threshold must be in [0, 1]");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("train: validation_fraction must be in [0, 1)");
  }
  if (augmentation_factor < 1) throw ConfigError("train: augmentation_factor must be at least 1");
}

void write_epoch_header(std::ostream& os) { os << "epoch,train_loss,train_sens,train_spec,val_sens,val_spec,seconds\n"; }

void write_epoch_row(std::ostream& os, const EpochRecord& r) {
  char loss[32], secs[32];
  std::snprintf(loss, sizeof loss, "%.8f", r.train_loss);
  std::snprintf(secs, sizeof secs, "%.3f", r.seconds);
  os << r.epoch << ',' << loss << ',' << fmt_metric(r.train_sens) << ',' << fmt_metric(r.train_spec) << ','
     << fmt_metric(r.val_sens) << ',' << fmt_metric(r.val_spec) << ',' << secs << '\n';
}

TrainData prepare_training_data(const std::vector<data::Sample>& originals, const TrainConfig& cfg,
                                data::AugmentationSpec augmentation) {
  cfg.validate();
  TrainData out;
  auto [train, validation] = data::carve(originals, cfg.validation_fraction, derive_seed(cfg.seed, kValidationStream));
  augmentation.seed = derive_seed(derive_seed(cfg.seed, kAugmentStream), augmentation.seed);
  out.train = data::expand_training_set(train, augmentation, cfg.augmentation_factor);
  out.train_originals = std::move(train);
  out.validation = std::move(validation);
  return out;
}

std::vector<double> score_samples(const net::Network& network, const std::vector<data::Sample>& samples) {
  if (samples.empty()) return {};
  return network.predict_chunked(data::stack_images(samples));
}

std::vector<int> labels_of(const std::vector<data::Sample>& samples) {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

TrainResult train(net::Network& network, const TrainData& data, const TrainConfig& cfg, const OptimizerConfig& opt,
                  const TrainCallbacks& callbacks) {
  cfg.validate();
  if (data.train.empty()) throw InputError("train: empty training set");
  require_both_classes(data.train, "train");
  Optimizer optimizer(opt);
  Rng shuffle(derive_seed(cfg.seed, kShuffleStream));
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    shuffle.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size, ++batch_index) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + cfg.batch_size)));
      std::vector<int> labels;
      for (auto i : idx) labels.push_back(data.train[i].label);
      Tape tape(true);
      const auto fr = network.forward(tape, data::stack_images(data.train, idx), Mode::train);
      const Var loss = bce_loss(tape, fr.scores, labels);
      const double value = tape.value(loss)[0];
      if (!std::isfinite(value)) {
        throw NumericalError("train: loss is " + std::string(std::isnan(value) ? "NaN" : "infinite") + " at epoch " +
                             std::to_string(epoch) + ", batch " + std::to_string(batch_index + 1));
      }
      tape.backward(loss);
      std::map<std::string, Tensor> grads;
      for (const auto& [path, v] : fr.param_vars) grads.emplace(path, tape.grad(v));
      optimizer.step(network.params().tensors, grads);
      for (const auto& [path, t] : network.params().tensors) {
        for (double v : t.data()) {
          if (!std::isfinite(v)) {
            throw NumericalError("train: parameter " + path + " became non-finite at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(batch_index + 1));
          }
        }
      }
      loss_sum += value * static_cast<double>(idx.size());
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    const auto train_cm = evaluate(network, data.train_originals.empty() ? data.train : data.train_originals,
                                   cfg.eval_threshold);
    rec.train_sens = metrics::sensitivity(train_cm);
    rec.train_spec = metrics::specificity(train_cm);
    result.train_accuracy = metrics::accuracy(train_cm);
    if (!data.validation.empty()) {
      const auto val_cm = evaluate(network, data.validation, cfg.eval_threshold);
      rec.val_sens = metrics::sensitivity(val_cm);
      rec.val_spec = metrics::specificity(val_cm);
      result.val_accuracy = metrics::accuracy(val_cm);
    }
    if (cfg.timing == Timing::wall) {
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    result.records.push_back(rec);
    if (callbacks.on_epoch) callbacks.on_epoch(rec);
    if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 && callbacks.on_checkpoint) {
      callbacks.on_checkpoint(network, epoch);
    }
  }
  return result;
}

std::pair<double, std::optional<double>> mean_stderr(const std::vector<double>& v) {
  if (v.empty()) throw InputError("mean_stderr: no values");
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  if (v.size() < 2) return {mean, std::nullopt};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1)) / std::sqrt(n)};
}

std::vector<SweepResult> hyperparameter_sweep(const SweepSpec& spec, const std::vector<data::Sample>& originals,
                                              const std::vector<data::Sample>& test) {
  if (spec.grid.empty()) throw ConfigError("sweep: optimizer grid is empty");
  if (spec.repeat_seeds.empty()) throw ConfigError("sweep: no repeat seeds");
  if (!(spec.train.validation_fraction > 0.0)) throw ConfigError("sweep: validation_fraction must be positive");
  for (const auto& o : spec.grid) o.validate();

  std::vector<SweepResult> rows(spec.grid.size());
  for (std::size_t g = 0; g < spec.grid.size(); ++g) rows[g].optimizer = spec.grid[g];
  for (const std::uint64_t seed : spec.repeat_seeds) {
    TrainConfig cfg = spec.train;
    cfg.seed = seed;
    const TrainData data = prepare_training_data(originals, cfg, spec.augmentation);
    if (data.validation.empty()) throw ConfigError("sweep: validation split is empty");
    for (std::size_t g = 0; g < spec.grid.size(); ++g) {
      net::Network network(spec.network, seed);
      const TrainResult r = train(network, data, cfg, spec.grid[g]);
      rows[g].val_accuracy.push_back(r.val_accuracy.value_or(0.0));
      if (!test.empty()) {
        rows[g].test_accuracy.push_back(*metrics::accuracy(evaluate(network, test, cfg.eval_threshold)));
      }
    }
  }
  for (auto& row : rows) {
    std::tie(row.val_mean, row.val_stderr) = mean_stderr(row.val_accuracy);
    if (!row.test_accuracy.empty()) {
      auto [m, se] = mean_stderr(row.test_accuracy);
      row.test_mean = m;
      row.test_stderr = se;
    }
  }
  return rows;
}

std::vector<OptimizerConfig> reference_grid() {
  auto make = [](OptimizerKind k, double lr) {
    OptimizerConfig c;
    c.kind = k;
    c.learning_rate = lr;
    return c;
  };
  return {make(OptimizerKind::adam, 0.001), make(OptimizerKind::sgd, 0.001), make(OptimizerKind::rmsprop, 0.01),
          make(OptimizerKind::rmsprop, 0.001), make(OptimizerKind::rmsprop, 0.0001)};
}

}  // namespace attnct::train
