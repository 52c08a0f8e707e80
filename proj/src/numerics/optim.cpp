#include "evssl/numerics/optim.hpp"

#include <cmath>
#include <numbers>

#include "evssl/errors.hpp"

namespace evssl::num {

OptimizerState OptimizerState::fresh(const ParamStore& params, AdamWConfig hyper) {
  return OptimizerState{hyper, zeros_like(params), zeros_like(params), 0};
}

void adamw_step(ParamStore& params, const ParamStore& grads, OptimizerState& state, double lr) {
  const AdamWConfig& h = state.hyper;
  for (const auto& [path, theta] : params) {
    auto g = grads.find(path);
    if (g == grads.end()) throw Error("adamw_step: no gradient for '" + path + "'");
    if (g->second.shape() != theta.shape())
      throw ShapeError("adamw_step '" + path + "': parameter " + to_string(theta.shape()) + " vs gradient " +
                       to_string(g->second.shape()));
    if (state.m.at(path).shape() != theta.shape())
      throw ShapeError("adamw_step '" + path + "': optimizer state shape mismatch");
  }
  const std::uint64_t step = state.step + 1;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(step));
  for (auto& [path, theta] : params) {
    const Array& g = grads.at(path);
    Array& m = state.m.at(path);
    Array& v = state.v.at(path);
    Array next = theta;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      next[i] = theta[i] - lr * (mhat / (std::sqrt(vhat) + h.eps)) - lr * h.weight_decay * theta[i];
    }
    require_finite(next, "adamw_step");
    theta = std::move(next);
  }
  state.step = step;
}

double cosine_lr(std::uint64_t step, std::uint64_t warmup_steps, std::uint64_t total_steps, double peak,
                 double floor) {
  if (step < warmup_steps) return peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (total_steps <= warmup_steps) return peak;
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return floor + 0.5 * (peak - floor) * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

void ema_update(EmaState& ema, const ParamStore& online) {
  for (const auto& [path, s] : ema.shadow) {
    auto it = online.find(path);
    if (it == online.end()) throw Error("ema_update: online parameters lack '" + path + "'");
    if (it->second.shape() != s.shape())
      throw ShapeError("ema_update '" + path + "': " + to_string(s.shape()) + " vs " + to_string(it->second.shape()));
  }
  const double m = ema.momentum;
  for (auto& [path, s] : ema.shadow) {
    const Array& o = online.at(path);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = m * s[i] + (1.0 - m) * o[i];
  }
}

}  // namespace evssl::num
