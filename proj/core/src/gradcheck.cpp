#include "attnct/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "attnct/errors.hpp"
#include "attnct/rng.hpp"

namespace attnct {
namespace {

struct Eval {
  double value;
  std::uint64_t pattern;
  double margin;
};

Eval evaluate(const GraphFn& f, const std::vector<Tensor>& inputs) {
  Tape tape(false);
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  const Var out = f(tape, vars);
  const Tensor& v = tape.value(out);
  if (v.numel() != 1) throw UsageError("grad_check: function must be scalar-valued");
  return {v[0], tape.pattern(), tape.kink_margin()};
}

}  // namespace

double kink_margin_at(const GraphFn& f, const std::vector<Tensor>& inputs) { return evaluate(f, inputs).margin; }

GradCheckReport grad_check(const GraphFn& f, const std::vector<Tensor>& inputs, const GradCheckOptions& opt) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.leaf(t, true));
  const Var out = f(tape, vars);
  tape.backward(out);

  GradCheckReport report;
  report.kink_margin = tape.kink_margin();
  const std::uint64_t base_pattern = tape.pattern();

  Rng rng(opt.seed);
  std::vector<Tensor> point = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor analytic = tape.grad(vars[k]);
    std::vector<std::size_t> coords(inputs[k].numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opt.max_coords_per_input > 0 && coords.size() > opt.max_coords_per_input) {
      rng.shuffle(coords);
      coords.resize(opt.max_coords_per_input);
      std::sort(coords.begin(), coords.end());
    }
    for (const std::size_t i : coords) {
      const double orig = point[k][i];
      point[k][i] = orig + opt.step;
      const Eval plus = evaluate(f, point);
      point[k][i] = orig - opt.step;
      const Eval minus = evaluate(f, point);
      point[k][i] = orig;
      if (plus.pattern != base_pattern || minus.pattern != base_pattern) {
        ++report.skipped;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * opt.step);
      const double a = analytic[i];
      const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      report.max_rel_error = std::max(report.max_rel_error, rel);
      ++report.checked;
    }
  }
  return report;
}

GradCheckReport grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double step) {
  GradCheckOptions opt;
  opt.step = step;
  return grad_check([&f](Tape& t, std::span<const Var> v) { return f(t, v[0]); }, std::vector<Tensor>{x}, opt);
}

std::optional<std::vector<Tensor>> find_kink_free(const GraphFn& f,
                                                  const std::function<std::vector<Tensor>(std::size_t)>& sample,
                                                  const GradCheckOptions& opt, std::size_t max_attempts) {
  for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
    std::vector<Tensor> point = sample(attempt);
    if (kink_margin_at(f, point) >= opt.kink_margin) return point;
  }
  return std::nullopt;
}

}  // namespace attnct
