#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "attnct/tape.hpp"
#include "attnct/tensor.hpp"

namespace attnct {

/// Builds a scalar graph from the given leaves.
using GraphFn = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckOptions {
  double step = 1e-5;
  /// Points whose ReLU inputs or max-pool ties sit closer than this to a kink
  /// are rejected by find_kink_free().
  double kink_margin = 1e-3;
  /// Coordinates checked per input tensor; 0 checks every coordinate.
  std::size_t max_coords_per_input = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  /// max |analytic - numeric| / max(1, |analytic|) over checked coordinates.
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Coordinates whose +-step evaluations switched a ReLU or max-pool winner.
  std::size_t skipped = 0;
  /// Smallest kink distance seen while evaluating at the base point.
  double kink_margin = 0.0;
};

/// Compares reverse-mode gradients with central differences.
GradCheckReport grad_check(const GraphFn& f, const std::vector<Tensor>& inputs, const GradCheckOptions& opt = {});

/// Single-input convenience form.
GradCheckReport grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double step = 1e-5);

/// Evaluates `f` once without recording and returns the kink margin.
double kink_margin_at(const GraphFn& f, const std::vector<Tensor>& inputs);

/// Draws candidate points from `sample(attempt)` until one has kink margin
/// >= opt.kink_margin; nullopt after `max_attempts` failures.
std::optional<std::vector<Tensor>> find_kink_free(const GraphFn& f,
                                                  const std::function<std::vector<Tensor>(std::size_t)>& sample,
                                                  const GradCheckOptions& opt, std::size_t max_attempts = 100);

}  // namespace attnct
