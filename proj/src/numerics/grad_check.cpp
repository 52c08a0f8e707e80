#include "evssl/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "evssl/errors.hpp"

namespace evssl::num {
namespace {

double evaluate(const ScalarFn& f, const Array& point) {
  Tape tape;
  Var x = tape.constant(point);
  Var y = f(tape, x);
  if (y.value().size() != 1) throw ShapeError("grad_check: function must return a scalar");
  const double v = y.value()[0];
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite function value");
  return v;
}

}  // namespace

Array gradient(const ScalarFn& f, const Array& point) {
  Tape tape;
  Var x = tape.variable(point);
  Var y = f(tape, x);
  tape.backward(y);
  Array g = x.grad();
  require_finite(g, "grad_check");
  return g;
}

double grad_check(const ScalarFn& f, const Array& point, double h, std::span<const std::size_t> coords) {
  const Array analytic = gradient(f, point);
  double worst = 0.0;
  for (std::size_t i : coords) {
    if (i >= point.size()) throw ShapeError("grad_check: coordinate out of range");
    Array plus = point, minus = point;
    plus[i] += h;
    minus[i] -= h;
    const double numeric = (evaluate(f, plus) - evaluate(f, minus)) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), kGradFloor});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

double grad_check(const ScalarFn& f, const Array& point, double h) {
  std::vector<std::size_t> all(point.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return grad_check(f, point, h, all);
}

}  // namespace evssl::num
