#include <benchmark/benchmark.h>

#include <vector>

#include "attnct/explain.hpp"
#include "attnct/metrics.hpp"
#include "attnct/net.hpp"
#include "attnct/ops.hpp"
#include "attnct/rng.hpp"
#include "attnct/train.hpp"

using namespace attnct;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

void BM_Conv2dForward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto hw = static_cast<std::size_t>(state.range(1));
  const Tensor x = random_tensor({8, c, hw, hw}, 1);
  const Tensor w = random_tensor({c, c, 3, 3}, 2);
  const Tensor b = random_tensor({c}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d_forward(x, w, &b, 1, 1));
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_Conv2dForward)->Args({16, 64})->Args({32, 32})->Args({64, 16})->Unit(benchmark::kMillisecond);

void BM_NetworkPredict(benchmark::State& state) {
  net::Network network(net::AttentionNetConfig{}, 0);
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor batch = random_tensor({n, 1, 128, 128}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(network.predict(batch));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_NetworkPredict)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  net::Network network(net::AttentionNetConfig{}, 0);
  const Tensor batch = random_tensor({8, 1, 128, 128}, 5);
  const std::vector<int> labels{0, 1, 0, 1, 0, 1, 0, 1};
  for (auto _ : state) {
    Tape tape(true);
    const auto fr = network.forward(tape, batch, Mode::train);
    const Var loss = train::bce_loss(tape, fr.scores, labels);
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.value(loss)[0]);
  }
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_GradCam(benchmark::State& state) {
  net::Network network(net::AttentionNetConfig{}, 0);
  const Tensor image = random_tensor({1, 128, 128}, 6);
  const auto layer = network.default_explain_layer();
  for (auto _ : state) benchmark::DoNotOptimize(explain::grad_cam(network, image, layer));
}
BENCHMARK(BM_GradCam)->Unit(benchmark::kMillisecond);

void BM_RocCurve(benchmark::State& state) {
  Rng rng(7);
  std::vector<metrics::ScoredSample> samples(static_cast<std::size_t>(state.range(0)));
  for (std::size_t i = 0; i < samples.size(); ++i) samples[i] = {static_cast<int>(i % 2), rng.uniform()};
  for (auto _ : state) benchmark::DoNotOptimize(metrics::roc_curve(samples));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_RocCurve)->Arg(1000)->Arg(100000);

}  // namespace

BENCHMARK_MAIN();
