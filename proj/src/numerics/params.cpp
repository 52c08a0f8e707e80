#include "evssl/numerics/params.hpp"

#include <algorithm>

#include "evssl/errors.hpp"
#include "evssl/numerics/ops.hpp"

namespace evssl::num {

std::size_t scalar_count(const ParamStore& store) {
  std::size_t n = 0;
  for (const auto& [_, a] : store) n += a.size();
  return n;
}

Array flatten(const ParamStore& store) {
  std::vector<double> data;
  data.reserve(scalar_count(store));
  for (const auto& [_, a] : store) data.insert(data.end(), a.values().begin(), a.values().end());
  if (data.empty()) throw ShapeError("flatten: empty parameter store");
  const std::size_t n = data.size();
  return Array({n}, std::move(data));
}

ParamStore unflatten(const Array& flat, const ParamStore& layout) {
  if (flat.size() != scalar_count(layout))
    throw ShapeError("unflatten: " + std::to_string(flat.size()) + " values for " +
                     std::to_string(scalar_count(layout)) + " parameters");
  ParamStore out;
  std::size_t off = 0;
  for (const auto& [path, a] : layout) {
    std::vector<double> data(flat.data() + off, flat.data() + off + a.size());
    out.emplace(path, Array(a.shape(), std::move(data)));
    off += a.size();
  }
  return out;
}

Binding::Binding(Tape& tape, const ParamStore& store, bool requires_grad)
    : tape_(&tape), store_(&store), requires_grad_(requires_grad) {}

Binding::Binding(Tape& tape, const ParamStore& layout, Var flat) : tape_(&tape), store_(&layout), flat_(flat) {
  if (flat.value().size() != scalar_count(layout))
    throw ShapeError("Binding: flat vector has " + std::to_string(flat.value().size()) + " entries for " +
                     std::to_string(scalar_count(layout)) + " parameters");
  std::size_t off = 0;
  for (const auto& [path, a] : layout) {
    offsets_[path] = off;
    off += a.size();
  }
}

Var Binding::operator()(const std::string& path) {
  if (auto it = bound_.find(path); it != bound_.end()) return it->second;
  auto found = store_->find(path);
  if (found == store_->end()) throw Error("unknown parameter '" + path + "'");
  Var v;
  if (flat_.valid()) {
    v = segment(flat_, offsets_.at(path), found->second.shape());
  } else {
    v = requires_grad_ ? tape_->variable(found->second) : tape_->constant(found->second);
  }
  bound_.emplace(path, v);
  return v;
}

ParamStore Binding::gradients() const {
  ParamStore out = zeros_like(*store_);
  for (const auto& [path, v] : bound_) {
    if (!v.requires_grad()) continue;
    const Array& g = v.grad();
    std::copy(g.values().begin(), g.values().end(), out.at(path).values().begin());
  }
  return out;
}

void accumulate(ParamStore& dst, const ParamStore& src) {
  for (const auto& [path, g] : src) {
    auto it = dst.find(path);
    if (it == dst.end()) throw Error("accumulate: unknown parameter '" + path + "'");
    if (it->second.shape() != g.shape())
      throw ShapeError("accumulate '" + path + "': " + to_string(it->second.shape()) + " vs " + to_string(g.shape()));
    for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
  }
}

ParamStore zeros_like(const ParamStore& store) {
  ParamStore out;
  for (const auto& [path, a] : store) out.emplace(path, Array(a.shape(), 0.0));
  return out;
}

}  // namespace evssl::num
