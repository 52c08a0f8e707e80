#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <vector>

#include "evssl/numerics/array.hpp"

namespace evssl::num {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
/// lives.
class Var {
 public:
  Var() = default;

  const Array& value() const;
  const Array& grad() const;
  bool requires_grad() const;
  const Shape& shape() const { return value().shape(); }

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so a reverse
/// sweep visits every node after all of its consumers.
class Tape {
 public:
  /// Backward closure of an op: receives the gradient of the op's output and
  /// accumulates into the inputs through grad_buffer().
  using Backward = std::function<void(Tape&, const Array& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Array value);
  Var variable(Array value);

  /// Appends an op result. The closure is dropped when no input requires a
  /// gradient.
  Var record(Array value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Array value, const std::vector<Var>& inputs, Backward backward);

  /// Seeds d(root)/d(root) = 1 and sweeps the tape backwards. `root` must hold
  /// a single element.
  void backward(const Var& root);

  const Array& value(std::size_t id) const { return nodes_[id].value; }
  /// Gradient of a node after backward(); zeros when it received none.
  const Array& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient accumulator of `id`, zero-filled on first access.
  Array& grad_buffer(std::size_t id);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Array value;
    Array grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
  mutable Array zero_grad_;
};

}  // namespace evssl::num
