#include <gtest/gtest.h>

#include "evssl/config.hpp"
#include "evssl/errors.hpp"
#include "fixtures.hpp"

using namespace evssl;
using nlohmann::json;

TEST(RunConfigJson, DefaultsRoundTrip) {
  const RunConfig d;
  EXPECT_EQ(run_config_from_json(to_json(d)), d);
  const RunConfig t = fixture::tiny_run();
  EXPECT_EQ(run_config_from_json(to_json(t)), t);
}

TEST(RunConfigJson, FileRoundTrip) {
  const auto dir = fixture::scratch("config");
  RunConfig c = fixture::tiny_run();
  c.train.mode = Mode::mae_voxel;
  c.grouping.center_strategy = group::CenterStrategy::random;
  save_run_config(c, dir / "c.json");
  EXPECT_EQ(load_run_config(dir / "c.json"), c);
}

TEST(RunConfigJson, Defaults) {
  const RunConfig d;
  EXPECT_EQ(d.voxel.n_sel, 2048u);
  EXPECT_EQ(d.grouping.n_parts, 16u);
  EXPECT_DOUBLE_EQ(d.grouping.rho1, 0.8);
  EXPECT_DOUBLE_EQ(d.train.peak_lr, 3e-4);
  EXPECT_DOUBLE_EQ(d.train.lambda, 1.0);
  EXPECT_EQ(d.train.mode, Mode::dual);
  EXPECT_NO_THROW(validate(d));
}

TEST(RunConfigJson, VariantResetsModelAndDerivesInput) {
  const auto c = run_config_from_json(json::parse(R"({"voxel": {"v_w": 4, "v_h": 3}, "model": {"variant": "base"}})"));
  EXPECT_EQ(c.model.stage_channels, (std::array<std::size_t, 4>{96, 192, 384, 768}));
  EXPECT_EQ(c.model.in_features, 12u);
  const auto h = run_config_from_json(json::parse(R"({"model": {"stage_channels": [16, 32, 64, 128]}})"));
  EXPECT_EQ(h.model.heads_per_stage, model::default_heads(h.model.stage_channels));
}

TEST(RunConfigJson, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(run_config_from_json(json::parse(R"({"train": {"epoch": 3}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(json::parse(R"({"extra": 1})")), ConfigError);
  EXPECT_THROW(run_config_from_json(json::parse(R"({"train": {"mode": "both"}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(json::parse(R"({"train": {"epochs": "ten"}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(json::parse(R"({"grouping": {"rho1": 1.5}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(json::parse(R"({"model": {"in_features": 9}})")), ConfigError);
}

TEST(RunConfigJson, ModeNames) {
  for (Mode m : {Mode::dual, Mode::local_only, Mode::mae_voxel}) EXPECT_EQ(mode_from_string(to_string(m)), m);
  EXPECT_THROW(mode_from_string("mae"), ConfigError);
}

TEST(Validate, CrossSectionChecks) {
  RunConfig c = fixture::tiny_run();
  c.voxel.n_sel = 8;  // smaller than k_per_part
  EXPECT_THROW(validate(c), ConfigError);
  c = fixture::tiny_run();
  c.grouping.n_parts = 1;  // no cluster left for the global branch
  EXPECT_THROW(validate(c), ConfigError);
  c.train.mode = Mode::local_only;
  EXPECT_NO_THROW(validate(c));
  c = fixture::tiny_run();
  c.train.lambda = -1.0;
  EXPECT_THROW(validate(c), ConfigError);
}
