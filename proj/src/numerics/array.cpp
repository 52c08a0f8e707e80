#include "evssl/numerics/array.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "evssl/errors.hpp"

namespace evssl::num {

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Array::Array(Shape shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {
  for (auto d : shape_)
    if (d == 0) throw ShapeError("array dimensions must be positive, got " + to_string(shape_));
}

Array::Array(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  for (auto d : shape_)
    if (d == 0) throw ShapeError("array dimensions must be positive, got " + to_string(shape_));
  if (data_.size() != element_count(shape_))
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     to_string(shape_));
}

std::size_t Array::rows() const noexcept {
  if (shape_.size() < 2) return shape_.empty() ? 0 : 1;
  return shape_[0];
}

std::size_t Array::cols() const noexcept {
  if (shape_.empty()) return 0;
  return shape_.back();
}

double Array::item() const {
  if (data_.size() != 1) throw ShapeError("item() on non-scalar array " + to_string(shape_));
  return data_[0];
}

void require_finite(const Array& a, std::string_view op) {
  for (double v : a.values()) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value in result");
  }
}

}  // namespace evssl::num
