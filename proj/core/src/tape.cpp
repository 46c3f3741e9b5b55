#include "attnct/tape.hpp"

#include <algorithm>

#include "attnct/errors.hpp"

namespace attnct {

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.op = "leaf";
  n.requires_grad = requires_grad && record_;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::push(Tensor value, std::vector<std::size_t> inputs, const char* op, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  n.op = op;
  if (record_) {
    n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                  [this](std::size_t id) { return nodes_[id].requires_grad; });
  }
  if (n.requires_grad) {
    n.inputs = std::move(inputs);
    n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw UsageError("variable does not belong to this tape");
  return nodes_[v.id];
}

const Tensor& Tape::value(Var v) const { return node(v).value; }
bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }
const char* Tape::op(Var v) const { return node(v).op; }

void Tape::backward(Var loss) {
  const Node& root = node(loss);
  if (root.value.numel() != 1) {
    throw UsageError("backward requires a scalar loss, got shape " + shape_str(root.value.shape()));
  }
  if (backward_done_) throw StateError("backward already ran on this tape");
  backward_done_ = true;
  if (!root.requires_grad) return;

  nodes_[loss.id].grad = Tensor(root.value.shape(), 1.0);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad);
  }
}

bool Tape::has_grad(Var v) const { return !node(v).grad.empty(); }

Tensor Tape::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.empty()) return Tensor(n.value.shape(), 0.0);
  return n.grad;
}

Tensor* Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return &n.grad;
}

void Tape::accumulate(std::size_t id, const Tensor& g) {
  Tensor* buf = grad_buffer(id);
  if (!buf) return;
  require_same_shape(*buf, g, "accumulate");
  auto dst = buf->data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Tape::note_kink(double margin, std::uint64_t pattern_hash) {
  kink_margin_ = std::min(kink_margin_, margin);
  pattern_ ^= pattern_hash + 0x9e3779b97f4a7c15ULL + (pattern_ << 6) + (pattern_ >> 2);
}

}  // namespace attnct
