#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <set>

#include "evssl/errors.hpp"
#include "evssl/events.hpp"
#include "oracles.hpp"

using namespace evssl;
using namespace evssl::events;

TEST(ParseEvents, SingleLine) {
  const auto s = parse_events("100,3,4,1\n", 16, 16);
  ASSERT_EQ(s.events.size(), 1u);
  EXPECT_EQ(s.events[0], (Event{100, 3, 4, 1}));
}

TEST(ParseEvents, EmptyInput) {
  const auto s = parse_events("", 16, 16);
  EXPECT_TRUE(s.events.empty());
  EXPECT_EQ(s.duration_us, 0);
}

TEST(ParseEvents, ZeroPolarityMeansOff) {
  const auto s = parse_events("100,3,4,0\n", 16, 16);
  ASSERT_EQ(s.events.size(), 1u);
  EXPECT_EQ(s.events[0], (Event{100, 3, 4, -1}));
}

TEST(ParseEvents, MalformedLineReportsLineNumber) {
  try {
    parse_events("1,1,1,1\n2,2,x,1\n", 16, 16);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(parse_events("1,1,1,5\n", 16, 16), ParseError);
  EXPECT_THROW(parse_events("1,1,1\n", 16, 16), ParseError);
}

TEST(ParseEvents, OutOfBoundsRejected) {
  EXPECT_THROW(parse_events("1,16,0,1\n", 16, 16), BoundsError);
  EXPECT_THROW(parse_events("1,0,-1,1\n", 16, 16), BoundsError);
}

TEST(ParseEvents, UnsortedInputIsStablySorted) {
  const auto s = parse_events("30,1,1,1\n10,2,2,1\n10,3,3,-1\n", 16, 16);
  ASSERT_EQ(s.events.size(), 3u);
  EXPECT_EQ(s.events[0], (Event{10, 2, 2, 1}));
  EXPECT_EQ(s.events[1], (Event{10, 3, 3, -1}));
  EXPECT_EQ(s.events[2], (Event{30, 1, 1, 1}));
  EXPECT_EQ(s.duration_us, 30);
}

TEST(ParseEvents, HeaderOverridesSensorAndDuration) {
  const auto s = parse_events("# 32 20 500\n5,31,19,1\n", 0, 0);
  EXPECT_EQ(s.width, 32);
  EXPECT_EQ(s.height, 20);
  EXPECT_EQ(s.duration_us, 500);
}

TEST(ParseEvents, RoundTripProperty) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = oracle::random_stream(rng, 16 + trial, 20 + trial, static_cast<std::size_t>(trial * 37), 9000);
    EXPECT_EQ(parse_events(serialize_events(s), 0, 0), s);
    EXPECT_NO_THROW(validate(s));
  }
}

TEST(Synthetic, StillPrimitiveEmitsNothing) {
  for (ShapeClass c : kShapeClasses) {
    SyntheticSpec spec;
    spec.shape = c;
    EXPECT_TRUE(generate_synthetic(spec, 3).events.empty()) << to_string(c);
  }
}

TEST(Synthetic, DeterministicBytes) {
  const auto spec = random_spec(ShapeClass::moving_corner, 5);
  EXPECT_EQ(serialize_events(generate_synthetic(spec, 9)), serialize_events(generate_synthetic(spec, 9)));
}

TEST(Synthetic, BarEventCountMatchesEdgeCrossingOracle) {
  SyntheticSpec spec;
  spec.shape = ShapeClass::moving_bar;
  spec.velocity_x = 1.0;
  spec.center_x = 10.3;  // keeps crossing times off the microsecond grid
  spec.center_y = 30.2;
  const auto s = generate_synthetic(spec, 1);
  const auto [on, off] = oracle::bar_crossings(spec);
  std::size_t got_on = 0, got_off = 0;
  for (const auto& e : s.events) (e.p > 0 ? got_on : got_off)++;
  EXPECT_GT(on, 0u);
  EXPECT_EQ(got_on, on);
  EXPECT_EQ(got_off, off);
}

TEST(Synthetic, OppositePolaritiesOnLeadingAndTrailingEdges) {
  SyntheticSpec spec;
  spec.velocity_x = 0.5;
  spec.center_x = 20.3;
  const auto s = generate_synthetic(spec, 1);
  // Along one row a pixel the bar sweeps over turns ON before it turns OFF.
  // Pixels covered at t = 0 only ever turn OFF.
  std::map<int, std::int64_t> on_time, off_time;
  for (const auto& e : s.events)
    if (e.y == 32) (e.p > 0 ? on_time : off_time)[e.x] = e.t;
  std::size_t swept = 0;
  for (const auto& [x, t_on] : on_time)
    if (off_time.count(x)) {
      EXPECT_LT(t_on, off_time[x]) << "x " << x;
      ++swept;
    }
  EXPECT_GT(swept, 0u);
  const double half = spec.thickness() / 2.0;
  for (const auto& [x, t_off] : off_time)
    if (!on_time.count(x)) {
      EXPECT_LT(std::abs(x + 0.5 - spec.center_x), half + 1.0) << "x " << x;
    }
}

TEST(Synthetic, NoiseFreeEventsStayInSweptRegion) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    SyntheticSpec spec = random_spec(ShapeClass::moving_bar, static_cast<std::uint64_t>(trial), 64, 64, 100000, 0.0);
    const auto s = generate_synthetic(spec, 1);
    const double hw = spec.thickness() / 2.0, hh = spec.size / 2.0;
    for (const auto& e : s.events) {
      const double t = static_cast<double>(e.t) / 1000.0;
      const double bx = spec.center_x + spec.velocity_x * t, by = spec.center_y + spec.velocity_y * t;
      // Rounding to whole microseconds moves an edge by at most |v| * 0.5 us.
      const double slack = 1e-3 * (std::abs(spec.velocity_x) + std::abs(spec.velocity_y)) + 1e-9;
      EXPECT_LE(std::abs(e.x + 0.5 - bx), hw + slack);
      EXPECT_LE(std::abs(e.y + 0.5 - by), hh + slack);
    }
  }
}

TEST(Synthetic, NoiseOnlyStreamIsValid) {
  SyntheticSpec spec;
  spec.noise_rate = 50.0;
  const auto s = generate_synthetic(spec, 2);
  EXPECT_GT(s.events.size(), 0u);
  EXPECT_NO_THROW(validate(s));
}

TEST(Synthetic, RejectsTinySensor) {
  SyntheticSpec spec;
  spec.width = 8;
  EXPECT_THROW(generate_synthetic(spec, 0), ConfigError);
}

namespace {
DatasetManifest manifest_of(std::size_t classes, std::size_t per_class) {
  DatasetManifest m;
  for (std::size_t c = 0; c < classes; ++c) {
    m.class_names.push_back("c" + std::to_string(c));
    for (std::size_t i = 0; i < per_class; ++i) {
      ManifestEntry e;
      e.path = "c" + std::to_string(c) + "_" + std::to_string(i) + ".evt";
      e.label = static_cast<int>(c);
      m.entries.push_back(e);
    }
  }
  return m;
}

std::map<int, std::pair<int, int>> split_counts(const DatasetManifest& m) {
  std::map<int, std::pair<int, int>> out;
  for (const auto& e : m.entries) (e.split == Split::train ? out[e.label].first : out[e.label].second)++;
  return out;
}
}  // namespace

TEST(SplitDataset, EightyTwenty) {
  for (const auto& [label, counts] : split_counts(split_dataset(manifest_of(3, 10), 0.8, 1))) {
    EXPECT_EQ(counts.first, 8) << label;
    EXPECT_EQ(counts.second, 2) << label;
  }
}

TEST(SplitDataset, HalfOfFour) {
  const auto counts = split_counts(split_dataset(manifest_of(1, 4), 0.5, 3));
  EXPECT_EQ(counts.at(0), std::make_pair(2, 2));
}

TEST(SplitDataset, DeterministicAndSeedSensitive) {
  const auto m = manifest_of(2, 20);
  EXPECT_EQ(split_dataset(m, 0.5, 7), split_dataset(m, 0.5, 7));
  EXPECT_NE(split_dataset(m, 0.5, 7), split_dataset(m, 0.5, 8));
}

TEST(SplitDataset, Errors) {
  EXPECT_THROW(split_dataset(manifest_of(2, 1), 0.5, 0), SplitError);
  EXPECT_THROW(split_dataset(manifest_of(2, 4), 1.0, 0), SplitError);
}

TEST(Manifest, LabelsMustBeContiguous) {
  auto m = manifest_of(2, 2);
  m.entries.back().label = 3;
  m.class_names.clear();
  EXPECT_THROW(validate(m), ConfigError);
}

TEST(Manifest, GenerateAndReload) {
  const auto dir = std::filesystem::temp_directory_path() / "evssl_test_manifest";
  std::filesystem::remove_all(dir);
  GenerateOptions opts;
  opts.per_class = 5;
  opts.seed = 7;
  const auto m = generate_dataset(dir, opts);
  EXPECT_EQ(m.entries.size(), 15u);
  const auto loaded = load_manifest(dir / "manifest.json");
  EXPECT_EQ(loaded, m);
  for (const auto& e : loaded.entries) {
    const auto s = load_entry(e, dir);
    EXPECT_NO_THROW(validate(s));
    EXPECT_EQ(s, generate_synthetic(*e.synthetic, e.seed));
  }
  std::filesystem::remove_all(dir);
}
