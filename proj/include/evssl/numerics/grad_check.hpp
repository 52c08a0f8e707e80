#pragma once

#include <functional>
#include <span>

#include "evssl/numerics/tape.hpp"

namespace evssl::num {

using ScalarFn = std::function<Var(Tape&, const Var&)>;

/// Central differences carry rounding noise of roughly 1e-16 |f| / h, so a
/// gradient entry below this magnitude is judged on an absolute scale.
inline constexpr double kGradFloor = 1e-4;

/// Largest relative error between the tape gradient of `f` at `point` and
/// central differences (f(x + h e_i) - f(x - h e_i)) / 2h, using
/// max(|analytic|, |numeric|, kGradFloor) as the denominator.
double grad_check(const ScalarFn& f, const Array& point, double h);

/// Same, restricted to the listed flat coordinates.
double grad_check(const ScalarFn& f, const Array& point, double h, std::span<const std::size_t> coords);

/// Reverse-mode gradient of f at `point`.
Array gradient(const ScalarFn& f, const Array& point);

}  // namespace evssl::num
