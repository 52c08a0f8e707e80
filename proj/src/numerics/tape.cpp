#include "evssl/numerics/tape.hpp"

#include "evssl/errors.hpp"

namespace evssl::num {

const Array& Var::value() const { return tape_->value(id_); }
const Array& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Array value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Array value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Array value, std::initializer_list<Var> inputs, Backward backward) {
  bool needs = false;
  for (const auto& in : inputs) {
    if (in.tape() != this) throw Error("op input recorded on a different tape");
    needs = needs || nodes_[in.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : Backward{}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Array value, const std::vector<Var>& inputs, Backward backward) {
  bool needs = false;
  for (const auto& in : inputs) {
    if (in.tape() != this) throw Error("op input recorded on a different tape");
    needs = needs || nodes_[in.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : Backward{}});
  return Var(this, nodes_.size() - 1);
}

const Array& Tape::grad(std::size_t id) const {
  const Node& n = nodes_[id];
  if (!n.grad.empty()) return n.grad;
  zero_grad_ = Array(n.value.shape(), 0.0);
  return zero_grad_;
}

Array& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Array(n.value.shape(), 0.0);
  return n.grad;
}

void Tape::backward(const Var& root) {
  if (root.tape() != this) throw Error("backward root belongs to a different tape");
  if (nodes_[root.id()].value.size() != 1)
    throw ShapeError("backward root must be a scalar, got " + to_string(nodes_[root.id()].value.shape()));
  if (!nodes_[root.id()].requires_grad) return;
  grad_buffer(root.id())[0] += 1.0;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad);
  }
}

}  // namespace evssl::num
