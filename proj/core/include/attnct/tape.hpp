#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "attnct/tensor.hpp"

namespace attnct {

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::size_t id = kNone;

  bool valid() const { return id != kNone; }
};

/// Reverse-mode gradient tape.
///
/// Nodes are appended in evaluation order, so a node's inputs always have
/// smaller ids. backward() may run once per tape; afterwards gradients of
/// every node that requires one stay readable until the tape is destroyed.
/// A tape constructed with `record = false` keeps forward values only and is
/// the mode used for inference.
class Tape {
 public:
  /// Receives the gradient flowing into a node and pushes it to the node's
  /// inputs via accumulate().
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  explicit Tape(bool record = true) : record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an op result. `fn` is dropped when no input requires a gradient.
  Var push(Tensor value, std::vector<std::size_t> inputs, const char* op, BackwardFn fn);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  const char* op(Var v) const;
  std::size_t size() const { return nodes_.size(); }
  bool recording() const { return record_; }

  /// Seeds d(loss)/d(loss) = 1 and propagates through the tape.
  void backward(Var loss);

  bool has_grad(Var v) const;
  /// Gradient of the last backward() loss w.r.t. `v`; zeros when `v`
  /// received no contribution.
  Tensor grad(Var v) const;

  /// Adds `g` into the gradient buffer of node `id` (no-op when the node does
  /// not require a gradient).
  void accumulate(std::size_t id, const Tensor& g);
  /// Direct access to a gradient buffer, allocated to zeros on first use.
  /// Returns nullptr when the node does not require a gradient.
  Tensor* grad_buffer(std::size_t id);

  // Kink bookkeeping for finite-difference checks: ReLU and max-pool nodes
  // report their distance to a non-differentiable point and a hash of their
  // active pattern.
  void note_kink(double margin, std::uint64_t pattern_hash);
  double kink_margin() const { return kink_margin_; }
  std::uint64_t pattern() const { return pattern_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    const char* op = "";
    BackwardFn backward;
    bool requires_grad = false;
  };

  const Node& node(Var v) const;

  std::vector<Node> nodes_;
  bool record_ = true;
  bool backward_done_ = false;
  double kink_margin_ = std::numeric_limits<double>::infinity();
  std::uint64_t pattern_ = 0xcbf29ce484222325ULL;
};

}  // namespace attnct
