#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "evssl/errors.hpp"
#include "evssl/model.hpp"
#include "oracles.hpp"

using namespace evssl;
using namespace evssl::model;
using num::Tape;

namespace {

ModelConfig tiny() {
  ModelConfig c = variant_config("tiny");
  c.decoder_dim = 16;
  c.decoder_heads = 2;
  return c;
}

Array random_features(std::mt19937_64& rng, std::size_t n, std::size_t l) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Array a = Array::matrix(n, l);
  for (double& v : a.values()) v = u(rng);
  return a;
}

std::vector<Point3> random_coords(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Point3> p(n);
  for (auto& q : p) q = {u(rng), u(rng), u(rng)};
  return p;
}

}  // namespace

TEST(Config, NamedVariants) {
  EXPECT_EQ(variant_config("small").stage_channels, (std::array<std::size_t, 4>{64, 128, 256, 512}));
  EXPECT_EQ(variant_config("small").stage_layers, (std::array<std::size_t, 4>{1, 1, 1, 1}));
  EXPECT_EQ(variant_config("base").stage_channels, (std::array<std::size_t, 4>{96, 192, 384, 768}));
  EXPECT_EQ(variant_config("base").stage_layers, (std::array<std::size_t, 4>{2, 2, 2, 2}));
  EXPECT_LT(param_count(variant_config("small")), param_count(variant_config("base")));
  EXPECT_THROW(variant_config("huge"), ConfigError);
}

TEST(Config, ValidationRejectsBadShapes) {
  ModelConfig c = tiny();
  c.stage_channels = {8, 8, 32, 64};
  EXPECT_THROW(validate(c), ConfigError);
  c = tiny();
  c.heads_per_stage[1] = 3;  // 16 channels not divisible
  EXPECT_THROW(validate(c), ConfigError);
}

TEST(ParamCount, MatchesLayerOracle) {
  for (const char* v : {"tiny", "small", "base"}) EXPECT_EQ(param_count(variant_config(v)), oracle::param_count(variant_config(v)));
  ModelConfig c = tiny();
  c.stage_layers = {1, 2, 1, 3};
  c.decoder_layers = 3;
  EXPECT_EQ(param_count(c), oracle::param_count(c));
  std::size_t n = 0;
  for (const auto& [k, a] : init_params(c, 1)) n += a.size();
  EXPECT_EQ(n, param_count(c));
}

TEST(ParamCount, QuadraticWeightScaling) {
  ModelConfig a = tiny(), b = tiny();
  b.stage_channels = {16, 32, 64, 128};
  const auto sa = param_shapes(a), sb = param_shapes(b);
  const auto& wa = sa.at("encoder.stage2.block0.attn.qkv.weight");
  const auto& wb = sb.at("encoder.stage2.block0.attn.qkv.weight");
  EXPECT_EQ(num::element_count(wb), 4 * num::element_count(wa));
  EXPECT_EQ(num::element_count(sb.at("encoder.stage2.block0.mlp.fc1.bias")),
            2 * num::element_count(sa.at("encoder.stage2.block0.mlp.fc1.bias")));
}

TEST(Init, DeterministicAndBounded) {
  const auto p = init_params(tiny(), 5);
  EXPECT_EQ(p, init_params(tiny(), 5));
  EXPECT_NE(p, init_params(tiny(), 6));
  for (const auto& [name, a] : p) {
    for (double v : a.values()) {
      if (name.ends_with(".gamma")) {
        EXPECT_EQ(v, 1.0);
      } else if (name.ends_with(".bias") || name.ends_with(".beta")) {
        EXPECT_EQ(v, 0.0) << name;
      } else {
        EXPECT_LE(std::abs(v), 0.04 + 1e-15) << name;
      }
    }
  }
}

TEST(Stages, TokenCounts) {
  EXPECT_EQ(stage_token_counts(tiny(), 25), (std::array<std::size_t, 4>{25, 13, 7, 4}));
  EXPECT_EQ(stage_token_counts(tiny(), 1), (std::array<std::size_t, 4>{1, 1, 1, 1}));
  EXPECT_EQ(stage_token_counts(tiny(), 3), (std::array<std::size_t, 4>{3, 2, 1, 1}));
}

TEST(Embed, BaseShapeAndLinearity) {
  std::mt19937_64 rng(1);
  const ModelConfig c = variant_config("base");
  const auto params = init_params(c, 1);
  Tape t;
  num::Binding b(t, params, false);
  const auto coords = random_coords(rng, 25);
  const auto tok = embed_voxels(c, b, Array::matrix(25, 25), coords);
  EXPECT_EQ(tok.features.shape(), (num::Shape{25, 96}));
  const auto pos = positional_embedding(b, "encoder.pos", coords).value();
  const auto& bias = params.at("encoder.embed.bias");
  for (std::size_t r = 0; r < 25; ++r)
    for (std::size_t k = 0; k < 96; ++k) EXPECT_DOUBLE_EQ(tok.features.value()(r, k), pos(r, k) + bias[k]);
  EXPECT_THROW(embed_voxels(c, b, Array::matrix(25, 24), coords), ShapeError);
}

TEST(Encoder, ShapesPerStage) {
  std::mt19937_64 rng(2);
  const ModelConfig c = variant_config("base");
  const auto params = init_params(c, 2);
  Tape t;
  num::Binding b(t, params, false);
  const auto out = encoder_forward(c, b, embed_voxels(c, b, random_features(rng, 25, 25), random_coords(rng, 25)));
  const std::size_t rows[] = {25, 13, 7, 4}, cols[] = {96, 192, 384, 768};
  ASSERT_EQ(out.stages.size(), 4u);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_EQ(out.stages[j].features.shape(), (num::Shape{rows[j], cols[j]}));
    EXPECT_EQ(out.stages[j].size(), rows[j]);
  }
  EXPECT_EQ(summarize(out).shape(), (num::Shape{1, 768}));
}

TEST(Encoder, PermutationEquivariance) {
  std::mt19937_64 rng(3);
  const ModelConfig c = tiny();
  const auto params = init_params(c, 3);
  const auto f = random_features(rng, 20, 25);
  const auto xyz = random_coords(rng, 20);
  std::vector<std::size_t> perm(20);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  Array pf = Array::matrix(20, 25);
  std::vector<Point3> pc(20);
  for (std::size_t i = 0; i < 20; ++i) {
    for (std::size_t k = 0; k < 25; ++k) pf(i, k) = f(perm[i], k);
    pc[i] = xyz[perm[i]];
  }
  Tape t;
  num::Binding b(t, params, false);
  const auto a = encoder_forward(c, b, embed_voxels(c, b, f, xyz));
  const auto p = encoder_forward(c, b, embed_voxels(c, b, pf, pc));
  for (std::size_t i = 0; i < 20; ++i)
    for (std::size_t k = 0; k < 8; ++k)
      EXPECT_NEAR(p.stages[0].features.value()(i, k), a.stages[0].features.value()(perm[i], k), 1e-12);
  // FPS on the same geometry picks the same points, so later stages agree up
  // to row order; the summaries match.
  const auto sa = summarize(a).value(), sp = summarize(p).value();
  for (std::size_t k = 0; k < sa.size(); ++k) EXPECT_NEAR(sa[k], sp[k], 1e-12);
}

TEST(Encoder, RejectsEmptyInput) {
  const ModelConfig c = tiny();
  const auto params = init_params(c, 3);
  Tape t;
  num::Binding b(t, params, false);
  EXPECT_THROW(embed_voxels(c, b, Array::matrix(0, 25), {}), ShapeError);
}

TEST(Interpolation, InverseSquareWeights) {
  const std::vector<Point3> src{{1, 0, 0}, {2, 0, 0}};
  const std::vector<Point3> dst{{0, 0, 0}};
  const auto w = interpolation_weights(src, dst, 1.0);
  EXPECT_NEAR(w(0, 0), 4.0 / 5.0, 1e-15);
  EXPECT_NEAR(w(0, 1), 1.0 / 5.0, 1e-15);
}

TEST(Interpolation, ExactMatchAndSingleSource) {
  std::mt19937_64 rng(4);
  const auto src = random_coords(rng, 6);
  auto dst = random_coords(rng, 4);
  dst.push_back(src[2]);
  const auto w = interpolation_weights(src, dst, 1.0);
  for (std::size_t s = 0; s < 6; ++s) EXPECT_EQ(w(4, s), s == 2 ? 1.0 : 0.0);
  for (std::size_t t = 0; t < 5; ++t) {
    double row = 0.0;
    std::size_t nonzero = 0;
    for (std::size_t s = 0; s < 6; ++s) {
      row += w(t, s);
      nonzero += w(t, s) != 0.0;
    }
    EXPECT_NEAR(row, 1.0, 1e-14);
    EXPECT_LE(nonzero, 3u);
  }
  const auto one = interpolation_weights(std::vector<Point3>{src[0]}, dst, 1.0);
  for (std::size_t t = 0; t < dst.size(); ++t) EXPECT_EQ(one(t, 0), 1.0);
}

TEST(Decoders, ShapesAtDefaults) {
  std::mt19937_64 rng(5);
  const ModelConfig c = variant_config("small");
  const auto params = init_params(c, 5);
  Tape t;
  num::Binding b(t, params, false);
  const auto vis = random_coords(rng, 25);
  const auto stages = encoder_forward(c, b, embed_voxels(c, b, random_features(rng, 25, 25), vis));
  const Var up = interpolate_upsample(c, b, stages, vis);
  EXPECT_EQ(up.shape(), (num::Shape{25, 256}));
  const auto pred = local_decode(c, b, up, vis, random_coords(rng, 103));
  ASSERT_TRUE(pred);
  EXPECT_EQ(pred->shape(), (num::Shape{103, 25}));
  EXPECT_FALSE(local_decode(c, b, up, vis, {}));
  const Var z = t.constant(random_features(rng, 8, 512));
  EXPECT_EQ(global_decode(c, b, z, random_coords(rng, 8), random_coords(rng, 8)).shape(), (num::Shape{8, 512}));
  EXPECT_THROW(global_decode(c, b, z, random_coords(rng, 8), {}), ShapeError);
}

TEST(Decoders, ZeroHeadPredictsZero) {
  std::mt19937_64 rng(6);
  const ModelConfig c = tiny();
  auto params = init_params(c, 6);
  for (double& v : params.at("decoder_local.head.weight").values()) v = 0.0;
  Tape t;
  num::Binding b(t, params, false);
  const auto vis = random_coords(rng, 10);
  const auto stages = encoder_forward(c, b, embed_voxels(c, b, random_features(rng, 10, 25), vis));
  const auto pred = local_decode(c, b, interpolate_upsample(c, b, stages, vis), vis, random_coords(rng, 7));
  for (double v : pred->value().values()) EXPECT_EQ(v, 0.0);
}

TEST(Decoders, DeterministicAndSensitive) {
  std::mt19937_64 rng(7);
  const ModelConfig c = tiny();
  const auto params = init_params(c, 7);
  const auto z = random_features(rng, 1, 64);
  const auto vc = random_coords(rng, 1), mc = random_coords(rng, 1);
  Tape t;
  num::Binding b(t, params, false);
  const auto p1 = global_decode(c, b, t.constant(z), vc, mc).value();
  const auto p2 = global_decode(c, b, t.constant(z), vc, mc).value();
  EXPECT_EQ(p1, p2);
  const auto p0 = global_decode(c, b, t.constant(Array::matrix(1, 64)), vc, mc).value();
  EXPECT_NE(p0, p1);
}

TEST(Summarize, MeanOfTokens) {
  Tape t;
  EncoderOutput out;
  TokenSet s;
  s.features = t.constant(Array({2, 3}, std::vector<double>{1, 2, 3, 5, 6, 7}));
  s.coords = {{0, 0, 0}, {1, 1, 1}};
  out.stages = {s};
  EXPECT_EQ(summarize(out).value(), Array({1, 3}, std::vector<double>{3, 4, 5}));
  s.features = t.constant(Array({1, 3}, std::vector<double>{1, 2, 3}));
  out.stages = {s};
  EXPECT_EQ(summarize(out).value(), Array({1, 3}, std::vector<double>{1, 2, 3}));
}
