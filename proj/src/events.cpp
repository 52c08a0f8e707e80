#include "evssl/events.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "evssl/errors.hpp"

namespace evssl::events {
namespace {

using json = nlohmann::json;

template <typename T>
bool parse_int(std::string_view s, T& out) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

// Time interval [lo, hi] (ms) during which a pixel center is inside one convex
// piece of the primitive.
struct Interval {
  double lo, hi;
};

// a <= p - v t < b  for all t in the returned interval (one axis).
std::optional<Interval> slab(double p, double v, double a, double b) {
  if (v == 0.0) {
    if (a <= p && p < b) return Interval{-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
    return std::nullopt;
  }
  double t1 = (p - b) / v;  // where p - v t == b
  double t2 = (p - a) / v;  // where p - v t == a
  if (t1 > t2) std::swap(t1, t2);
  return Interval{t1, t2};
}

std::optional<Interval> rect_interval(double px, double py, double vx, double vy, double ax, double bx, double ay,
                                      double by) {
  auto ix = slab(px, vx, ax, bx);
  auto iy = slab(py, vy, ay, by);
  if (!ix || !iy) return std::nullopt;
  Interval r{std::max(ix->lo, iy->lo), std::min(ix->hi, iy->hi)};
  if (r.lo >= r.hi) return std::nullopt;
  return r;
}

std::optional<Interval> disk_interval(double px, double py, double vx, double vy, double cx, double cy, double r) {
  // |p - c - v t|^2 < r^2
  const double dx = px - cx, dy = py - cy;
  const double a = vx * vx + vy * vy;
  const double b = -2.0 * (vx * dx + vy * dy);
  const double c = dx * dx + dy * dy - r * r;
  if (a == 0.0) {
    if (c < 0.0) return Interval{-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
    return std::nullopt;
  }
  const double disc = b * b - 4.0 * a * c;
  if (disc <= 0.0) return std::nullopt;
  const double s = std::sqrt(disc);
  return Interval{(-b - s) / (2.0 * a), (-b + s) / (2.0 * a)};
}

std::vector<Interval> inside_intervals(const SyntheticSpec& spec, double px, double py) {
  const double vx = spec.velocity_x, vy = spec.velocity_y;
  const double half = spec.size / 2.0;
  const double w = spec.thickness();
  std::vector<Interval> pieces;
  auto push = [&](std::optional<Interval> iv) {
    if (iv) pieces.push_back(*iv);
  };
  switch (spec.shape) {
    case ShapeClass::moving_bar:
      push(rect_interval(px, py, vx, vy, spec.center_x - w / 2, spec.center_x + w / 2, spec.center_y - half,
                         spec.center_y + half));
      break;
    case ShapeClass::moving_disk:
      push(disk_interval(px, py, vx, vy, spec.center_x, spec.center_y, half));
      break;
    case ShapeClass::moving_corner: {
      const double x0 = spec.center_x - half, y0 = spec.center_y - half;
      push(rect_interval(px, py, vx, vy, x0, x0 + spec.size, y0, y0 + w));
      push(rect_interval(px, py, vx, vy, x0, x0 + w, y0, y0 + spec.size));
      break;
    }
  }
  std::sort(pieces.begin(), pieces.end(), [](const Interval& a, const Interval& b) { return a.lo < b.lo; });
  std::vector<Interval> merged;
  for (const auto& iv : pieces) {
    if (!merged.empty() && iv.lo <= merged.back().hi)
      merged.back().hi = std::max(merged.back().hi, iv.hi);
    else
      merged.push_back(iv);
  }
  return merged;
}

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

json spec_to_json(const SyntheticSpec& s) {
  return json{{"shape", std::string(to_string(s.shape))},
              {"velocity_x", s.velocity_x},
              {"velocity_y", s.velocity_y},
              {"width", s.width},
              {"height", s.height},
              {"duration_us", s.duration_us},
              {"events_per_edge_crossing", s.events_per_edge_crossing},
              {"noise_rate", s.noise_rate},
              {"center_x", s.center_x},
              {"center_y", s.center_y},
              {"size", s.size}};
}

SyntheticSpec spec_from_json(const json& j) {
  static const std::set<std::string> known = {"shape",    "velocity_x", "velocity_y", "width",
                                              "height",   "duration_us", "events_per_edge_crossing",
                                              "noise_rate", "center_x",  "center_y",   "size"};
  for (const auto& [k, _] : j.items())
    if (!known.count(k)) throw ConfigError("synthetic spec: unknown key '" + k + "'");
  SyntheticSpec s;
  s.shape = shape_class_from_string(j.at("shape").get<std::string>());
  s.velocity_x = j.value("velocity_x", s.velocity_x);
  s.velocity_y = j.value("velocity_y", s.velocity_y);
  s.width = j.value("width", s.width);
  s.height = j.value("height", s.height);
  s.duration_us = j.value("duration_us", s.duration_us);
  s.events_per_edge_crossing = j.value("events_per_edge_crossing", s.events_per_edge_crossing);
  s.noise_rate = j.value("noise_rate", s.noise_rate);
  s.center_x = j.value("center_x", s.center_x);
  s.center_y = j.value("center_y", s.center_y);
  s.size = j.value("size", s.size);
  validate(s);
  return s;
}

}  // namespace

void validate(const EventStream& stream) {
  if (stream.width <= 0 || stream.height <= 0) throw BoundsError("sensor dimensions must be positive");
  if (stream.duration_us < 0) throw BoundsError("duration must be non-negative");
  std::int64_t prev = 0;
  for (std::size_t i = 0; i < stream.events.size(); ++i) {
    const Event& e = stream.events[i];
    if (e.p != 1 && e.p != -1) throw Error("event " + std::to_string(i) + ": polarity must be -1 or +1");
    if (e.x < 0 || e.x >= stream.width || e.y < 0 || e.y >= stream.height)
      throw BoundsError("event " + std::to_string(i) + ": pixel (" + std::to_string(e.x) + ", " +
                        std::to_string(e.y) + ") outside " + std::to_string(stream.width) + "x" +
                        std::to_string(stream.height) + " sensor");
    if (e.t < 0 || e.t > stream.duration_us)
      throw BoundsError("event " + std::to_string(i) + ": timestamp " + std::to_string(e.t) + " outside [0, " +
                        std::to_string(stream.duration_us) + "]");
    if (i > 0 && e.t < prev) throw Error("event " + std::to_string(i) + ": timestamps not sorted");
    prev = e.t;
  }
}

EventStream parse_events(std::string_view text, std::int32_t sensor_width, std::int32_t sensor_height) {
  EventStream out;
  out.width = sensor_width;
  out.height = sensor_height;
  std::optional<std::int64_t> header_duration;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    if (line.front() == '#') {
      if (line_no != 1) continue;
      std::istringstream hs{std::string(line.substr(1))};
      std::int64_t w = 0, h = 0, d = 0;
      if (!(hs >> w >> h >> d) || w <= 0 || h <= 0 || d < 0)
        throw ParseError(line_no, "malformed header, expected '# width height duration_us'");
      out.width = static_cast<std::int32_t>(w);
      out.height = static_cast<std::int32_t>(h);
      header_duration = d;
      continue;
    }
    const auto fields = split(line, ',');
    Event e;
    int p = 0;
    if (fields.size() != 4 || !parse_int(fields[0], e.t) || !parse_int(fields[1], e.x) ||
        !parse_int(fields[2], e.y) || !parse_int(fields[3], p))
      throw ParseError(line_no, "expected 't_us,x,y,p', got '" + std::string(line) + "'");
    if (p == 0) p = -1;
    if (p != 1 && p != -1) throw ParseError(line_no, "polarity must be -1, 0 or 1");
    if (e.t < 0) throw ParseError(line_no, "negative timestamp");
    e.p = static_cast<std::int8_t>(p);
    if (out.width <= 0 || out.height <= 0) throw BoundsError("sensor dimensions must be positive");
    if (e.x < 0 || e.x >= out.width || e.y < 0 || e.y >= out.height)
      throw BoundsError("line " + std::to_string(line_no) + ": pixel (" + std::to_string(e.x) + ", " +
                        std::to_string(e.y) + ") outside " + std::to_string(out.width) + "x" +
                        std::to_string(out.height) + " sensor");
    out.events.push_back(e);
  }
  std::stable_sort(out.events.begin(), out.events.end(),
                   [](const Event& a, const Event& b) { return a.t < b.t; });
  const std::int64_t max_t = out.events.empty() ? 0 : out.events.back().t;
  if (header_duration) {
    if (*header_duration < max_t)
      throw BoundsError("timestamp " + std::to_string(max_t) + " exceeds header duration " +
                        std::to_string(*header_duration));
    out.duration_us = *header_duration;
  } else {
    out.duration_us = max_t;
  }
  return out;
}

std::string serialize_events(const EventStream& stream) {
  std::string out = "# " + std::to_string(stream.width) + " " + std::to_string(stream.height) + " " +
                    std::to_string(stream.duration_us) + "\n";
  out.reserve(out.size() + stream.events.size() * 16);
  for (const Event& e : stream.events) {
    out += std::to_string(e.t);
    out += ',';
    out += std::to_string(e.x);
    out += ',';
    out += std::to_string(e.y);
    out += ',';
    out += e.p > 0 ? "1" : "-1";
    out += '\n';
  }
  return out;
}

EventStream read_event_file(const std::filesystem::path& path, std::int32_t sensor_width,
                            std::int32_t sensor_height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open event file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_events(ss.str(), sensor_width, sensor_height);
  } catch (const ParseError& e) {
    throw ParseError(e.line(), path.string() + ": " + e.what());
  }
}

void write_event_file(const std::filesystem::path& path, const EventStream& stream) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write event file " + path.string());
  out << serialize_events(stream);
  if (!out) throw IoError("write failed for " + path.string());
}

std::string_view to_string(ShapeClass c) {
  switch (c) {
    case ShapeClass::moving_bar: return "moving_bar";
    case ShapeClass::moving_disk: return "moving_disk";
    case ShapeClass::moving_corner: return "moving_corner";
  }
  return "?";
}

ShapeClass shape_class_from_string(std::string_view name) {
  for (ShapeClass c : kShapeClasses)
    if (to_string(c) == name) return c;
  throw ConfigError("unknown synthetic class '" + std::string(name) + "'");
}

double SyntheticSpec::thickness() const { return std::max(2.0, size / 4.0); }

void validate(const SyntheticSpec& spec) {
  if (spec.width < 16 || spec.height < 16) throw ConfigError("synthetic sensor dimensions must be >= 16");
  if (spec.duration_us <= 0) throw ConfigError("synthetic duration must be positive");
  if (spec.events_per_edge_crossing < 1) throw ConfigError("events_per_edge_crossing must be >= 1");
  if (!(spec.noise_rate >= 0.0)) throw ConfigError("noise_rate must be >= 0");
  if (!(spec.size > 0.0)) throw ConfigError("primitive size must be positive");
  if (!std::isfinite(spec.velocity_x) || !std::isfinite(spec.velocity_y))
    throw ConfigError("velocity must be finite");
}

EventStream generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  validate(spec);
  EventStream out;
  out.width = spec.width;
  out.height = spec.height;
  out.duration_us = spec.duration_us;
  const double t_end = static_cast<double>(spec.duration_us) / 1000.0;
  auto to_us = [&](double t_ms) {
    return std::clamp<std::int64_t>(std::llround(t_ms * 1000.0), 0, spec.duration_us);
  };
  for (std::int32_t y = 0; y < spec.height; ++y) {
    for (std::int32_t x = 0; x < spec.width; ++x) {
      for (const Interval& iv : inside_intervals(spec, x + 0.5, y + 0.5)) {
        if (iv.lo > 0.0 && iv.lo <= t_end)
          for (int k = 0; k < spec.events_per_edge_crossing; ++k) out.events.push_back({to_us(iv.lo), x, y, 1});
        if (iv.hi > 0.0 && iv.hi < t_end)
          for (int k = 0; k < spec.events_per_edge_crossing; ++k) out.events.push_back({to_us(iv.hi), x, y, -1});
      }
    }
  }
  if (spec.noise_rate > 0.0) {
    auto rng = make_rng(seed, 0x6E015E);
    const double mean = spec.noise_rate * spec.width * spec.height * (t_end / 1000.0);
    std::poisson_distribution<std::int64_t> count_dist(mean);
    std::uniform_int_distribution<std::int32_t> xd(0, spec.width - 1), yd(0, spec.height - 1);
    std::uniform_int_distribution<std::int64_t> td(0, spec.duration_us);
    std::bernoulli_distribution pd(0.5);
    const std::int64_t count = count_dist(rng);
    for (std::int64_t i = 0; i < count; ++i) {
      Event e;
      e.x = xd(rng);
      e.y = yd(rng);
      e.t = td(rng);
      e.p = pd(rng) ? 1 : -1;
      out.events.push_back(e);
    }
  }
  std::stable_sort(out.events.begin(), out.events.end(),
                   [](const Event& a, const Event& b) { return a.t < b.t; });
  return out;
}

SyntheticSpec random_spec(ShapeClass shape, std::uint64_t seed, std::int32_t width, std::int32_t height,
                          std::int64_t duration_us, double noise_rate) {
  auto rng = make_rng(seed, 0x5BEC);
  std::uniform_real_distribution<double> size_d(14.0, 22.0), speed_d(0.25, 0.6),
      angle_d(0.0, 2.0 * std::numbers::pi), jitter_d(-4.0, 4.0);
  SyntheticSpec s;
  s.shape = shape;
  s.width = width;
  s.height = height;
  s.duration_us = duration_us;
  s.noise_rate = noise_rate;
  s.size = size_d(rng);
  const double speed = speed_d(rng);
  const double angle = angle_d(rng);
  s.velocity_x = speed * std::cos(angle);
  s.velocity_y = speed * std::sin(angle);
  const double half_ms = static_cast<double>(duration_us) / 2000.0;
  s.center_x = width / 2.0 - s.velocity_x * half_ms + jitter_d(rng);
  s.center_y = height / 2.0 - s.velocity_y * half_ms + jitter_d(rng);
  return s;
}

std::string_view to_string(Split s) { return s == Split::train ? "train" : "test"; }

void validate(const DatasetManifest& manifest) {
  std::set<int> labels;
  for (const auto& e : manifest.entries) {
    if (e.label < 0) throw ConfigError("manifest: negative label");
    labels.insert(e.label);
  }
  if (!labels.empty() && (*labels.begin() != 0 || *labels.rbegin() != static_cast<int>(labels.size()) - 1))
    throw ConfigError("manifest: labels must form a contiguous range starting at 0");
  if (!manifest.class_names.empty() && manifest.class_names.size() != labels.size())
    throw ConfigError("manifest: " + std::to_string(manifest.class_names.size()) + " class names for " +
                      std::to_string(labels.size()) + " labels");
}

DatasetManifest split_dataset(const DatasetManifest& manifest, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw SplitError("train_fraction must lie in (0, 1)");
  validate(manifest);
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) by_class[manifest.entries[i].label].push_back(i);
  DatasetManifest out = manifest;
  for (auto& [label, idx] : by_class) {
    if (idx.size() < 2)
      throw SplitError("class " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                       " sample(s); at least 2 are needed to split");
    auto rng = make_rng(seed, 0x5B117 + static_cast<std::uint64_t>(label));
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n = idx.size();
    auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n) + 1e-9));
    n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
    for (std::size_t k = 0; k < n; ++k) out.entries[idx[k]].split = k < n_train ? Split::train : Split::test;
  }
  return out;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("manifest " + path.string() + ": " + e.what());
  }
  DatasetManifest m;
  try {
    for (const auto& [k, _] : j.items())
      if (k != "classes" && k != "entries") throw ConfigError("manifest: unknown key '" + k + "'");
    if (j.contains("classes")) m.class_names = j.at("classes").get<std::vector<std::string>>();
    for (const auto& je : j.at("entries")) {
      for (const auto& [k, _] : je.items())
        if (k != "path" && k != "synthetic" && k != "seed" && k != "label" && k != "split")
          throw ConfigError("manifest entry: unknown key '" + k + "'");
      ManifestEntry e;
      e.path = je.value("path", std::string{});
      if (je.contains("synthetic")) e.synthetic = spec_from_json(je.at("synthetic"));
      e.seed = je.value("seed", std::uint64_t{0});
      e.label = je.at("label").get<int>();
      const std::string split = je.value("split", std::string("train"));
      if (split != "train" && split != "test") throw ConfigError("manifest entry: split must be train or test");
      e.split = split == "train" ? Split::train : Split::test;
      if (e.path.empty() && !e.synthetic) throw ConfigError("manifest entry needs 'path' or 'synthetic'");
      m.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw ConfigError("manifest " + path.string() + ": " + e.what());
  }
  validate(m);
  return m;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  json j;
  j["classes"] = manifest.class_names;
  j["entries"] = json::array();
  for (const auto& e : manifest.entries) {
    json je;
    if (!e.path.empty()) je["path"] = e.path;
    if (e.synthetic) je["synthetic"] = spec_to_json(*e.synthetic);
    je["seed"] = e.seed;
    je["label"] = e.label;
    je["split"] = std::string(to_string(e.split));
    j["entries"].push_back(std::move(je));
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << j.dump(2) << "\n";
}

EventStream load_entry(const ManifestEntry& entry, const std::filesystem::path& base_dir) {
  if (!entry.path.empty()) {
    const std::filesystem::path p = std::filesystem::path(entry.path).is_absolute() ? std::filesystem::path(entry.path) : base_dir / entry.path;
    if (std::filesystem::exists(p) || !entry.synthetic) return read_event_file(p);
  }
  return generate_synthetic(*entry.synthetic, entry.seed);
}

DatasetManifest generate_dataset(const std::filesystem::path& out_dir, const GenerateOptions& options) {
  if (options.classes < 1 || options.classes > std::size(kShapeClasses))
    throw ConfigError("classes must be between 1 and " + std::to_string(std::size(kShapeClasses)));
  if (options.per_class < 1) throw ConfigError("per_class must be positive");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  DatasetManifest m;
  for (std::size_t c = 0; c < options.classes; ++c) {
    const ShapeClass shape = kShapeClasses[c];
    m.class_names.emplace_back(to_string(shape));
    for (std::size_t i = 0; i < options.per_class; ++i) {
      const std::uint64_t sample_seed = options.seed * 1000003ULL + c * 100003ULL + i;
      SyntheticSpec spec = random_spec(shape, sample_seed, options.width, options.height, options.duration_us,
                                       options.noise_rate);
      char name[64];
      std::snprintf(name, sizeof name, "%s_%04zu.evt", std::string(to_string(shape)).c_str(), i);
      write_event_file(out_dir / name, generate_synthetic(spec, sample_seed));
      ManifestEntry e;
      e.path = name;
      e.synthetic = spec;
      e.seed = sample_seed;
      e.label = static_cast<int>(c);
      m.entries.push_back(std::move(e));
    }
  }
  m = split_dataset(m, options.train_fraction, options.seed);
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

}  // namespace evssl::events
