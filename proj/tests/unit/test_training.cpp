#include <cmath>
#include <sstream>

#include "attnct/errors.hpp"
#include "attnct/gradcheck.hpp"
#include "attnct/metrics.hpp"
#include "attnct/ops.hpp"
#include "attnct/train.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace attnct;
using namespace attnct::train;

namespace {

OptimizerConfig make(OptimizerKind k, double lr) {
  OptimizerConfig c;
  c.kind = k;
  c.learning_rate = lr;
  return c;
}

double minimize_scalar(OptimizerConfig cfg, double theta0, double target, std::size_t steps) {
  Optimizer opt(cfg);
  std::map<std::string, Tensor> p{{"theta", Tensor::scalar(theta0)}};
  for (std::size_t k = 0; k < steps; ++k) {
    const double th = p.at("theta")[0];
    opt.step(p, {{"theta", Tensor::scalar(2.0 * (th - target))}});
  }
  return p.at("theta")[0];
}

data::SyntheticSpec tiny_synth(std::uint64_t seed, std::size_t size, std::size_t n_train) {
  data::SyntheticSpec s;
  s.height = s.width = size;
  s.n_train_per_class = n_train;
  s.n_test_per_class = 4;
  s.seed = seed;
  return s;
}

TrainConfig quick_config(std::uint64_t seed) {
  TrainConfig c;
  c.epochs = 3;
  c.batch_size = 8;
  c.seed = seed;
  c.augmentation_factor = 2;
  c.timing = Timing::off;
  return c;
}

net::AttentionNetConfig small_net() {
  net::AttentionNetConfig c;
  c.input_height = c.input_width = 32;
  c.stage_channels = {8, 16};
  c.stem_stride = 1;
  c.stem_pool = true;
  return c;
}

}  // namespace

TEST_CASE("bce loss analytic values") {
  Tape t(false);
  CHECK(t.value(bce_loss(t, t.constant(Tensor({1, 1}, {0.5})), {1}))[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(t.value(bce_loss(t, t.constant(Tensor({2, 1}, {0.9, 0.1})), {1, 0}))[0] ==
        doctest::Approx(-std::log(0.9)).epsilon(1e-12));
  CHECK_THROWS_AS(bce_loss(t, t.constant(Tensor({1, 1}, {0.5})), {2}), InputError);
  CHECK_THROWS_AS(bce_loss(t, t.constant(Tensor({2, 1}, {0.5, 0.5})), {1}), DimensionError);
}

TEST_CASE("bce loss is non-negative and its gradient matches finite differences") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor s = oracle::random_tensor({6, 1}, rng, 0.05, 0.95);
    std::vector<int> labels(6);
    for (auto& l : labels) l = rng.bernoulli(0.5) ? 1 : 0;
    Tape t(false);
    CHECK(t.value(bce_loss(t, t.constant(s), labels))[0] >= 0.0);
    const auto rep = grad_check([&](Tape& tape, Var x) { return bce_loss(tape, x, labels); }, s, 1e-5);
    CHECK(rep.max_rel_error < 1e-6);
  }
}

TEST_CASE("optimizer single-step examples") {
  std::map<std::string, Tensor> p{{"w", Tensor::scalar(1.0)}};
  Optimizer sgd(make(OptimizerKind::sgd, 0.1));
  sgd.step(p, {{"w", Tensor::scalar(0.5)}});
  CHECK(p.at("w")[0] == doctest::Approx(0.95).epsilon(1e-15));

  std::map<std::string, Tensor> q{{"w", Tensor::scalar(1.0)}};
  Optimizer adam(make(OptimizerKind::adam, 0.01));
  adam.step(q, {{"w", Tensor::scalar(1.0)}});
  CHECK(std::abs((1.0 - q.at("w")[0]) - 0.01) < 1e-9);
}

TEST_CASE("RMSProp drives theta^2 below 1e-2 in 200 steps") {
  CHECK(std::abs(minimize_scalar(make(OptimizerKind::rmsprop, 0.01), 1.0, 0.0, 200)) < 1e-2);
}

TEST_CASE("every optimizer reaches the minimum of (theta - 3)^2 within 1000 steps") {
  const OptimizerConfig configs[] = {make(OptimizerKind::sgd, 0.1), make(OptimizerKind::nesterov, 0.05),
                                     make(OptimizerKind::adam, 0.1), make(OptimizerKind::rmsprop, 0.01)};
  for (const auto& c : configs) {
    CAPTURE(c.label());
    CHECK(std::abs(minimize_scalar(c, 0.0, 3.0, 1000) - 3.0) < 1e-2);
  }
}

TEST_CASE("Nesterov matches the explicit look-ahead formulation") {
  // v <- mu v - eta f'(theta + mu v); theta <- theta + v, reported at theta + mu v.
  const double mu = 0.9, eta = 0.02;
  auto grad = [](double x) { return 2.0 * (x - 3.0) + 0.3 * std::cos(x); };
  double theta = -1.0, v = 0.0;
  OptimizerConfig c = make(OptimizerKind::nesterov, eta);
  c.momentum = mu;
  Optimizer opt(c);
  std::map<std::string, Tensor> p{{"x", Tensor::scalar(theta)}};
  for (int k = 0; k < 50; ++k) {
    opt.step(p, {{"x", Tensor::scalar(grad(p.at("x")[0]))}});
    v = mu * v - eta * grad(theta + mu * v);
    theta += v;
    CHECK(p.at("x")[0] == doctest::Approx(theta + mu * v).epsilon(1e-12));
  }
}

TEST_CASE("zero learning rate leaves parameters bit-identical") {
  Rng rng(2);
  for (auto k : {OptimizerKind::sgd, OptimizerKind::nesterov, OptimizerKind::adam, OptimizerKind::rmsprop}) {
    std::map<std::string, Tensor> p{{"a", oracle::random_tensor({3, 4}, rng)}, {"b", oracle::random_tensor({5}, rng)}};
    const auto before = p;
    Optimizer opt(make(k, 0.0));
    for (int s = 0; s < 5; ++s) {
      opt.step(p, {{"a", oracle::random_tensor({3, 4}, rng)}, {"b", oracle::random_tensor({5}, rng)}});
    }
    CHECK(p == before);
  }
}

TEST_CASE("optimizer rejects inconsistent gradients and bad configs") {
  std::map<std::string, Tensor> p{{"a", Tensor({2}, 1.0)}, {"b", Tensor({2}, 1.0)}};
  Optimizer opt(make(OptimizerKind::sgd, 0.1));
  CHECK_THROWS_AS(opt.step(p, {{"a", Tensor({2}, 1.0)}}), StateError);
  CHECK_THROWS_AS(opt.step(p, {{"a", Tensor({2}, 1.0)}, {"b", Tensor({3}, 1.0)}}), StateError);
  CHECK(p.at("a")[0] == 1.0);
  CHECK_THROWS_AS(Optimizer{make(OptimizerKind::adam, -0.1)}, ConfigError);
  OptimizerConfig c = make(OptimizerKind::rmsprop, 0.1);
  c.rho = 1.0;
  CHECK_THROWS_AS(Optimizer{c}, ConfigError);
  CHECK(parse_optimizer("nesterov") == OptimizerKind::nesterov);
  CHECK_THROWS_AS(parse_optimizer("lbfgs"), ConfigError);
}

TEST_CASE("epoch CSV format") {
  std::ostringstream os;
  write_epoch_header(os);
  EpochRecord r;
  r.epoch = 3;
  r.train_loss = 0.25;
  r.train_sens = 1.0;
  r.train_spec = 0.5;
  r.seconds = 1.23456;
  write_epoch_row(os, r);
  CHECK(os.str() == "epoch,train_loss,train_sens,train_spec,val_sens,val_spec,seconds\n"
                    "3,0.25000000,1.000000,0.500000,,,1.235\n");
}

TEST_CASE("validation carve happens before augmentation") {
  const auto set = data::generate_synthetic(tiny_synth(1, 16, 20));
  TrainConfig cfg = quick_config(4);
  cfg.augmentation_factor = 4;
  const auto d = prepare_training_data(set.split.train, cfg, data::AugmentationSpec{});
  CHECK(d.validation.size() == 6);
  CHECK(d.train_originals.size() == 34);
  CHECK(d.train.size() == 34 * 4);
  for (const auto& v : d.validation) {
    for (const auto& t : d.train) CHECK(t.source_id.rfind(v.source_id, 0) != 0);
  }
}

TEST_CASE("training with zero learning rate keeps parameters and a full-batch loss flat") {
  const auto set = data::generate_synthetic(tiny_synth(2, 16, 6));
  TrainConfig cfg = quick_config(1);
  cfg.batch_size = 64;
  const auto d = prepare_training_data(set.split.train, cfg, data::AugmentationSpec{});
  net::Network network(net::AttentionNetConfig::tiny(), 3);
  const auto before = network.params().tensors;
  const auto r = train::train(network, d, cfg, make(OptimizerKind::adam, 0.0));
  CHECK(network.params().tensors == before);
  // Shuffling only reorders the summation inside the single batch.
  for (const auto& rec : r.records) CHECK(rec.train_loss == doctest::Approx(r.records.front().train_loss).epsilon(1e-12));
}

TEST_CASE("training is deterministic for a fixed seed") {
  const auto set = data::generate_synthetic(tiny_synth(3, 16, 8));
  auto run = [&] {
    const TrainConfig cfg = quick_config(7);
    const auto d = prepare_training_data(set.split.train, cfg, data::AugmentationSpec{});
    net::Network network(net::AttentionNetConfig::tiny(), 7);
    std::ostringstream os;
    train::train(network, d, cfg, make(OptimizerKind::rmsprop, 0.01), {[&](const EpochRecord& e) { write_epoch_row(os, e); }});
    return std::make_pair(os.str(), network.params());
  };
  const auto a = run(), b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("training rejects single-class data and NaN losses") {
  const auto set = data::generate_synthetic(tiny_synth(4, 16, 6));
  const TrainConfig cfg = quick_config(0);
  auto d = prepare_training_data(set.split.train, cfg, data::AugmentationSpec{});
  TrainData one_class = d;
  std::erase_if(one_class.train, [](const data::Sample& s) { return s.label == data::kCovid; });
  net::Network network(net::AttentionNetConfig::tiny(), 0);
  CHECK_THROWS_AS(train::train(network, one_class, cfg, make(OptimizerKind::sgd, 0.1)), InputError);

  for (auto& v : network.params().tensors.at("head.out.weight").data()) v = std::nan("");
  try {
    train::train(network, d, cfg, make(OptimizerKind::sgd, 0.1));
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("epoch 1, batch 1") != std::string::npos);
  }
}

TEST_CASE("checkpoint cadence") {
  const auto set = data::generate_synthetic(tiny_synth(5, 16, 6));
  TrainConfig cfg = quick_config(0);
  cfg.epochs = 4;
  cfg.checkpoint_every = 2;
  const auto d = prepare_training_data(set.split.train, cfg, data::AugmentationSpec{});
  net::Network network(net::AttentionNetConfig::tiny(), 0);
  std::vector<std::size_t> saved;
  TrainCallbacks cb;
  cb.on_checkpoint = [&](const net::Network&, std::size_t e) { saved.push_back(e); };
  train::train(network, d, cfg, make(OptimizerKind::sgd, 0.01), cb);
  CHECK(saved == std::vector<std::size_t>{2, 4});
}

TEST_CASE("loss decreases over the first five epochs in at least four of five seeds") {
  int decreasing = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto set = data::generate_synthetic(tiny_synth(seed, 32, 12));
    TrainConfig cfg = quick_config(seed);
    cfg.epochs = 5;
    const auto d = prepare_training_data(set.split.train, cfg, data::AugmentationSpec{});
    net::Network network(small_net(), seed);
    const auto r = train::train(network, d, cfg, make(OptimizerKind::rmsprop, 0.01));
    decreasing += r.records.back().train_loss < r.records.front().train_loss ? 1 : 0;
  }
  CHECK(decreasing >= 4);
}

TEST_CASE("sweep: zero learning rate reports the untrained accuracy; repeats are deterministic") {
  const auto set = data::generate_synthetic(tiny_synth(6, 16, 10));
  SweepSpec spec;
  spec.network = net::AttentionNetConfig::tiny();
  spec.train = quick_config(0);
  spec.train.epochs = 2;
  spec.repeat_seeds = {11};
  spec.grid = {make(OptimizerKind::sgd, 0.0)};
  const auto rows = hyperparameter_sweep(spec, set.split.train);
  REQUIRE(rows.size() == 1);

  TrainConfig cfg = spec.train;
  cfg.seed = 11;
  const auto d = prepare_training_data(set.split.train, cfg, spec.augmentation);
  const net::Network untouched(spec.network, 11);
  const auto cm = metrics::confusion_at(metrics::zip_scores(labels_of(d.validation), score_samples(untouched, d.validation)),
                                        cfg.eval_threshold);
  CHECK(rows[0].val_mean == *metrics::accuracy(cm));
  CHECK_FALSE(rows[0].val_stderr.has_value());

  spec.grid = {make(OptimizerKind::rmsprop, 0.01), make(OptimizerKind::rmsprop, 0.01)};
  spec.repeat_seeds = {1, 2};
  const auto twin = hyperparameter_sweep(spec, set.split.train, set.split.test);
  CHECK(twin[0].val_accuracy == twin[1].val_accuracy);
  CHECK(twin[0].test_accuracy == twin[1].test_accuracy);
  CHECK(twin[0].val_stderr.has_value());
  CHECK(reference_grid().size() == 5);
}

TEST_CASE("mean and standard error") {
  const auto [m, se] = mean_stderr({1.0, 2.0, 3.0, 4.0});
  CHECK(m == 2.5);
  // sample sd = sqrt(5/3); stderr = sd / 2
  CHECK(*se == doctest::Approx(std::sqrt(5.0 / 3.0) / 2.0).epsilon(1e-14));
  CHECK_FALSE(mean_stderr({0.7}).second.has_value());
}
