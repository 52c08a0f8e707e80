#pragma once

#include <map>
#include <string>

#include "evssl/numerics/tape.hpp"

namespace evssl::num {

/// Named parameters, iterated in lexicographic path order.
using ParamStore = std::map<std::string, Array>;

std::size_t scalar_count(const ParamStore& store);

/// Concatenation of every parameter in path order.
Array flatten(const ParamStore& store);
/// Inverse of flatten() against the shapes of `layout`.
ParamStore unflatten(const Array& flat, const ParamStore& layout);

/// Exposes a ParamStore to a tape. Parameters are recorded on first use, so a
/// forward pass only pays for the tensors it touches.
class Binding {
 public:
  /// Each parameter becomes a leaf (requires_grad) or a constant.
  Binding(Tape& tape, const ParamStore& store, bool requires_grad);
  /// Each parameter becomes a segment of `flat`, laid out as flatten(layout).
  Binding(Tape& tape, const ParamStore& layout, Var flat);

  Var operator()(const std::string& path);
  Tape& tape() const noexcept { return *tape_; }
  const ParamStore& store() const noexcept { return *store_; }

  /// Gradients of the leaves recorded so far, zero for untouched paths.
  ParamStore gradients() const;

 private:
  Tape* tape_;
  const ParamStore* store_;
  bool requires_grad_ = false;
  Var flat_;
  std::map<std::string, std::size_t> offsets_;
  std::map<std::string, Var> bound_;
};

/// dst += src, path by path. Shapes must agree.
void accumulate(ParamStore& dst, const ParamStore& src);
ParamStore zeros_like(const ParamStore& store);

}  // namespace evssl::num
