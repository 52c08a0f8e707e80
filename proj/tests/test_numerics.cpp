#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "evssl/errors.hpp"
#include "evssl/numerics/grad_check.hpp"
#include "evssl/numerics/ops.hpp"
#include "evssl/numerics/optim.hpp"
#include "evssl/numerics/params.hpp"

using namespace evssl;
using namespace evssl::num;

namespace {

constexpr double kSmoothTol = 1e-6;
constexpr int kPoints = 100;

Array random_array(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Array a(std::move(shape));
  for (double& v : a.values()) v = u(rng);
  return a;
}

// Contracts an op output with fixed random weights so every output entry
// contributes to the scalar.
Var contract(Tape& tape, const Var& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, tape.constant(random_array(rng, y.shape()))));
}

// grad_check of `op` over flat inputs of the given shapes at kPoints random
// points; returns the worst relative error.
template <class Op>
double check_op(const std::vector<Shape>& shapes, Op op, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::size_t total = 0;
  for (const auto& s : shapes) total += element_count(s);
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int p = 0; p < kPoints; ++p) {
    const Array point = random_array(rng, {total}, lo, hi);
    const ScalarFn f = [&](Tape& tape, const Var& flat) {
      std::vector<Var> in;
      std::size_t off = 0;
      for (const auto& s : shapes) {
        in.push_back(segment(flat, off, s));
        off += element_count(s);
      }
      return contract(tape, op(tape, in), seed + 1);
    };
    worst = std::max(worst, grad_check(f, point, 1e-5));
  }
  return worst;
}

}  // namespace

TEST(Primitives, AffineIdentity) {
  Tape t;
  std::mt19937_64 rng(1);
  const Array x = random_array(rng, {3, 4});
  Array eye = Array::matrix(4, 4);
  for (std::size_t i = 0; i < 4; ++i) eye(i, i) = 1.0;
  EXPECT_EQ(affine(t.constant(x), t.constant(eye), t.constant(Array({4}))).value(), x);
}

TEST(Primitives, SoftmaxOfConstantIsUniform) {
  Tape t;
  const auto y = softmax(t.constant(Array::matrix(2, 5, 3.7)), 1).value();
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 0.2);
  const auto c = softmax(t.constant(Array::matrix(4, 3, -2.0)), 0).value();
  for (double v : c.values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Primitives, LayerNormStandardizes) {
  Tape t;
  std::mt19937_64 rng(2);
  const Array x = random_array(rng, {6, 16}, -5.0, 9.0);
  const auto y = layer_norm(t.constant(x), t.constant(Array({16}, 1.0)), t.constant(Array({16}, 0.0))).value();
  for (std::size_t r = 0; r < 6; ++r) {
    double mean = 0.0, var = 0.0;
    for (double v : y.row(r)) mean += v / 16.0;
    for (double v : y.row(r)) var += (v - mean) * (v - mean) / 16.0;
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-3);  // eps = 1e-5 inside the root
  }
}

TEST(Primitives, ShapeErrorsNameBothOperands) {
  Tape t;
  const Var a = t.constant(Array::matrix(2, 3));
  const Var b = t.constant(Array::matrix(4, 5));
  try {
    matmul(a, b);
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x5]"), std::string::npos) << msg;
  }
  EXPECT_THROW(add(a, b), ShapeError);
}

TEST(Primitives, NonFiniteRaises) {
  Tape t;
  EXPECT_THROW(scale(t.constant(Array::matrix(1, 2, 1e308)), 1e10), NumericError);
}

TEST(Primitives, DetachBlocksGradient) {
  Tape t;
  const Var x = t.variable(Array::matrix(1, 3, 2.0));
  const Var y = add(x, detach(scale(x, 5.0)));
  t.backward(sum(y));
  for (double g : x.grad().values()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Primitives, MaskedSoftmaxZeroesExcluded) {
  Tape t;
  const std::vector<std::uint8_t> allowed{1, 0, 1, 0, 1, 1};
  const auto y = masked_softmax(t.constant(Array::matrix(2, 3, 1.0)), allowed).value();
  EXPECT_DOUBLE_EQ(y(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(y(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(y(1, 0), 0.0);
}

TEST(GradCheck, LinearIsExact) {
  std::mt19937_64 rng(3);
  const Array c = random_array(rng, {1, 8});
  const ScalarFn f = [&](Tape& t, const Var& x) { return sum(mul(x, t.constant(c))); };
  EXPECT_LT(grad_check(f, random_array(rng, {1, 8}), 1e-5), 1e-10);
}

TEST(GradCheck, ConstantHasZeroGradient) {
  const ScalarFn f = [](Tape& t, const Var&) { return t.constant(Array::scalar(4.0)); };
  const Array g = gradient(f, Array::matrix(1, 5, 1.0));
  for (double v : g.values()) EXPECT_EQ(v, 0.0);
}

TEST(GradCheck, Matmul) {
  EXPECT_LT(check_op({{3, 4}, {4, 5}}, [](Tape&, auto& in) { return matmul(in[0], in[1]); }, 10), kSmoothTol);
  EXPECT_LT(check_op({{3, 4}, {5, 4}}, [](Tape&, auto& in) { return matmul_nt(in[0], in[1]); }, 11), kSmoothTol);
}

TEST(GradCheck, Affine) {
  EXPECT_LT(check_op({{3, 4}, {4, 2}, {2}}, [](Tape&, auto& in) { return affine(in[0], in[1], in[2]); }, 12),
            kSmoothTol);
}

TEST(GradCheck, Elementwise) {
  EXPECT_LT(check_op({{2, 3}, {2, 3}}, [](Tape&, auto& in) { return add(in[0], in[1]); }, 13), kSmoothTol);
  EXPECT_LT(check_op({{2, 3}, {2, 3}}, [](Tape&, auto& in) { return sub(in[0], in[1]); }, 14), kSmoothTol);
  EXPECT_LT(check_op({{2, 3}, {2, 3}}, [](Tape&, auto& in) { return mul(in[0], in[1]); }, 15), kSmoothTol);
  EXPECT_LT(check_op({{2, 3}}, [](Tape&, auto& in) { return scale(in[0], -2.5); }, 16), kSmoothTol);
  EXPECT_LT(check_op({{4, 3}, {3}}, [](Tape&, auto& in) { return add_row(in[0], in[1]); }, 17), kSmoothTol);
  EXPECT_LT(check_op({{3}}, [](Tape&, auto& in) { return broadcast_rows(in[0], 5); }, 18), kSmoothTol);
}

TEST(GradCheck, GeluAwayFromZero) {
  // Points drawn from [1e-3, 3] with random signs.
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> mag(1e-3, 3.0);
  double worst = 0.0;
  for (int p = 0; p < kPoints; ++p) {
    Array x({2, 4});
    for (double& v : x.values()) v = (rng() & 1 ? 1.0 : -1.0) * mag(rng);
    const ScalarFn f = [](Tape& t, const Var& v) { return contract(t, gelu(v), 20); };
    worst = std::max(worst, grad_check(f, x, 1e-5));
  }
  EXPECT_LT(worst, kSmoothTol);
}

TEST(GradCheck, Softmax) {
  EXPECT_LT(check_op({{3, 5}}, [](Tape&, auto& in) { return softmax(in[0], 1); }, 21, -3, 3), kSmoothTol);
  EXPECT_LT(check_op({{3, 5}}, [](Tape&, auto& in) { return softmax(in[0], 0); }, 22, -3, 3), kSmoothTol);
  const std::vector<std::uint8_t> allowed{1, 1, 0, 0, 1, 1, 1, 0, 1};
  EXPECT_LT(check_op({{3, 3}}, [&](Tape&, auto& in) { return masked_softmax(in[0], allowed); }, 23, -3, 3),
            kSmoothTol);
}

TEST(GradCheck, LayerNorm) {
  EXPECT_LT(check_op({{3, 6}, {6}, {6}}, [](Tape&, auto& in) { return layer_norm(in[0], in[1], in[2]); }, 24, -2, 2),
            kSmoothTol);
}

TEST(GradCheck, Structural) {
  EXPECT_LT(check_op({{4, 3}}, [](Tape&, auto& in) { return mean_rows(in[0]); }, 25), kSmoothTol);
  EXPECT_LT(check_op({{4, 3}}, [](Tape&, auto& in) { return gather_rows(in[0], {3, 0, 3, 1}); }, 26), kSmoothTol);
  EXPECT_LT(check_op({{4, 5}}, [](Tape&, auto& in) { return slice_cols(in[0], 1, 3); }, 27), kSmoothTol);
  EXPECT_LT(check_op({{2, 3}, {1, 3}}, [](Tape&, auto& in) { return concat_rows({in[0], in[1]}); }, 28), kSmoothTol);
  EXPECT_LT(check_op({{2, 3}, {2, 1}}, [](Tape&, auto& in) { return concat_cols({in[0], in[1]}); }, 29), kSmoothTol);
}

TEST(GradCheck, Reductions) {
  EXPECT_LT(check_op({{3, 4}, {3, 4}}, [](Tape&, auto& in) { return squared_error(in[0], in[1]); }, 30), kSmoothTol);
  EXPECT_LT(check_op({{3, 4}, {3, 4}}, [](Tape&, auto& in) { return mse(in[0], in[1]); }, 31), kSmoothTol);
  EXPECT_LT(check_op({{3, 4}, {3, 4}}, [](Tape&, auto& in) { return cosine_distance_rows(in[0], in[1]); }, 32),
            kSmoothTol);
  EXPECT_LT(check_op({{4, 3}}, [](Tape&, auto& in) { return softmax_cross_entropy(in[0], {0, 2, 1, 2}); }, 33, -3, 3),
            kSmoothTol);
}

TEST(AdamW, ZeroGradientNoDecayIsNoop) {
  ParamStore p{{"w", Array({3}, std::vector<double>{1.0, -2.0, 0.5})}};
  const ParamStore before = p;
  auto st = OptimizerState::fresh(p, AdamWConfig{0.9, 0.999, 1e-8, 0.0});
  adamw_step(p, zeros_like(p), st, 0.1);
  EXPECT_EQ(p, before);
  EXPECT_EQ(st.step, 1u);
}

TEST(AdamW, SingleStepHandOracle) {
  ParamStore p{{"w", Array::scalar(1.0)}};
  auto st = OptimizerState::fresh(p, AdamWConfig{0.9, 0.999, 1e-8, 0.0});
  adamw_step(p, ParamStore{{"w", Array::scalar(1.0)}}, st, 0.1);
  // mhat = vhat = 1, so theta = 1 - 0.1 * 1 / (1 + 1e-8).
  EXPECT_NEAR(p.at("w")[0], 1.0 - 0.1 / (1.0 + 1e-8), 1e-12);
  EXPECT_NEAR(p.at("w")[0], 0.9, 1e-8);
}

TEST(AdamW, DecoupledDecay) {
  ParamStore p{{"w", Array::scalar(3.0)}};
  auto st = OptimizerState::fresh(p, AdamWConfig{0.9, 0.999, 1e-8, 0.01});
  adamw_step(p, zeros_like(p), st, 0.1);
  EXPECT_NEAR(p.at("w")[0], 3.0 * (1.0 - 0.001), 1e-12);
}

TEST(AdamW, TenStepOracle) {
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 0.05;
  std::mt19937_64 rng(40);
  const Array g0 = random_array(rng, {2, 3});
  ParamStore p{{"a", random_array(rng, {2, 3})}, {"b", Array::scalar(0.25)}};
  ParamStore grads{{"a", g0}, {"b", Array::scalar(-0.7)}};
  // Scalar recurrences, per entry.
  std::vector<double> theta, g, m, v;
  for (const auto& [k, a] : p)
    for (double x : a.values()) theta.push_back(x);
  for (const auto& [k, a] : grads)
    for (double x : a.values()) g.push_back(x);
  m.assign(theta.size(), 0.0);
  v.assign(theta.size(), 0.0);
  auto st = OptimizerState::fresh(p, AdamWConfig{b1, b2, eps, 0.0});
  for (int t = 1; t <= 10; ++t) {
    adamw_step(p, grads, st, lr);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      theta[i] -= lr * (m[i] / (1 - std::pow(b1, t))) / (std::sqrt(v[i] / (1 - std::pow(b2, t))) + eps);
    }
  }
  const Array flat = flatten(p);
  for (std::size_t i = 0; i < theta.size(); ++i) EXPECT_NEAR(flat[i], theta[i], 1e-12);
  EXPECT_EQ(st.step, 10u);
}

TEST(AdamW, RejectsMismatchedGradient) {
  ParamStore p{{"w", Array::matrix(2, 2)}};
  auto st = OptimizerState::fresh(p);
  EXPECT_THROW(adamw_step(p, ParamStore{{"w", Array::matrix(2, 3)}}, st, 0.1), ShapeError);
  EXPECT_THROW(adamw_step(p, ParamStore{}, st, 0.1), Error);
}

TEST(CosineLr, Anchors) {
  EXPECT_EQ(cosine_lr(0, 40, 700, 3e-4), 0.0);
  EXPECT_EQ(cosine_lr(40, 40, 700, 3e-4), 3e-4);
  EXPECT_NEAR(cosine_lr(700, 40, 700, 3e-4), 0.0, 1e-20);
  EXPECT_NEAR(cosine_lr(370, 40, 700, 3e-4, 1e-5), 1e-5 + 0.5 * (3e-4 - 1e-5), 1e-18);
}

TEST(CosineLr, ContinuousAndMonotone) {
  const std::uint64_t warm = 30, total = 500;
  EXPECT_NEAR(cosine_lr(warm - 1, warm, total, 1.0), cosine_lr(warm, warm, total, 1.0), 1.0 / warm + 1e-12);
  for (std::uint64_t s = 1; s <= warm; ++s) EXPECT_GT(cosine_lr(s, warm, total, 1.0), cosine_lr(s - 1, warm, total, 1.0));
  for (std::uint64_t s = warm + 1; s <= total; ++s)
    EXPECT_LE(cosine_lr(s, warm, total, 1.0), cosine_lr(s - 1, warm, total, 1.0));
}

TEST(Ema, DegenerateMomenta) {
  std::mt19937_64 rng(50);
  const ParamStore online{{"w", random_array(rng, {3, 2})}};
  EmaState keep{ParamStore{{"w", random_array(rng, {3, 2})}}, 1.0};
  const ParamStore before = keep.shadow;
  ema_update(keep, online);
  EXPECT_EQ(keep.shadow, before);
  EmaState copy{before, 0.0};
  ema_update(copy, online);
  EXPECT_EQ(copy.shadow, online);
  ema_update(copy, online);
  EXPECT_EQ(copy.shadow, online);
}

TEST(Ema, Arithmetic) {
  EmaState e{ParamStore{{"w", Array::scalar(1.0)}}, 0.99};
  ema_update(e, ParamStore{{"w", Array::scalar(0.0)}});
  EXPECT_NEAR(e.shadow.at("w")[0], 0.99, 1e-12);
  std::mt19937_64 rng(51);
  const Array s0 = random_array(rng, {4}), o = random_array(rng, {4});
  EmaState f{ParamStore{{"w", s0}}, 0.996};
  ema_update(f, ParamStore{{"w", o}, {"extra", Array::scalar(1.0)}});
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(f.shadow.at("w")[i], 0.996 * s0[i] + 0.004 * o[i], 1e-12);
  EXPECT_EQ(f.shadow.at("w").shape(), s0.shape());
}

TEST(Ema, ShapeMismatchRaises) {
  EmaState e{ParamStore{{"w", Array::matrix(2, 2)}}, 0.5};
  EXPECT_THROW(ema_update(e, ParamStore{{"w", Array::matrix(2, 1)}}), ShapeError);
}

TEST(Params, FlattenRoundTrip) {
  std::mt19937_64 rng(60);
  const ParamStore p{{"b", random_array(rng, {2, 3})}, {"a", random_array(rng, {4})}};
  EXPECT_EQ(scalar_count(p), 10u);
  EXPECT_EQ(unflatten(flatten(p), p), p);
  EXPECT_EQ(flatten(p)[0], p.at("a")[0]);  // path order
}

TEST(Params, FlatBindingMatchesStoreBinding) {
  std::mt19937_64 rng(61);
  const ParamStore p{{"w", random_array(rng, {3, 2})}, {"b", random_array(rng, {2})}};
  const Array x = random_array(rng, {4, 3});
  Tape t1, t2;
  Binding b1(t1, p, true);
  Binding b2(t2, p, t2.variable(flatten(p)));
  const Var y1 = sum(affine(t1.constant(x), b1("w"), b1("b")));
  const Var y2 = sum(affine(t2.constant(x), b2("w"), b2("b")));
  EXPECT_EQ(y1.value(), y2.value());
  t1.backward(y1);
  const auto g = b1.gradients();
  EXPECT_EQ(g.at("b")[0], 4.0);
  EXPECT_THROW(b1("missing"), Error);
}
