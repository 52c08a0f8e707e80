#pragma once

#include <cstdint>

#include "evssl/numerics/params.hpp"

namespace evssl::num {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;

  bool operator==(const AdamWConfig&) const = default;
};

struct OptimizerState {
  AdamWConfig hyper;
  ParamStore m;
  ParamStore v;
  std::uint64_t step = 0;

  static OptimizerState fresh(const ParamStore& params, AdamWConfig hyper = {});
};

/// One decoupled-weight-decay Adam update of every parameter in `params`:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
///   theta <- theta - lr * mhat / (sqrt(vhat) + eps) - lr * wd * theta
void adamw_step(ParamStore& params, const ParamStore& grads, OptimizerState& state, double lr);

/// Linear warmup from 0 to `peak` over `warmup_steps`, then one cosine half
/// period from `peak` down to `floor` at `total_steps`.
double cosine_lr(std::uint64_t step, std::uint64_t warmup_steps, std::uint64_t total_steps, double peak,
                 double floor = 0.0);

struct EmaState {
  ParamStore shadow;
  double momentum = 0.996;
};

/// shadow <- m * shadow + (1 - m) * online for every shadow path. `online`
/// may hold extra paths; each shadow path must exist there with equal shape.
void ema_update(EmaState& ema, const ParamStore& online);

}  // namespace evssl::num
