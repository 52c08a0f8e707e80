#include "evssl/grouping.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "evssl/errors.hpp"

namespace evssl::group {
namespace {

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace

std::string_view to_string(CenterStrategy s) { return s == CenterStrategy::fps ? "fps" : "random"; }

CenterStrategy center_strategy_from_string(std::string_view name) {
  if (name == "fps") return CenterStrategy::fps;
  if (name == "random") return CenterStrategy::random;
  throw ConfigError("unknown center strategy '" + std::string(name) + "' (expected fps or random)");
}

std::size_t visible_count(std::size_t n, double rho) {
  return static_cast<std::size_t>(std::floor((1.0 - rho) * static_cast<double>(n) + 1e-9));
}

std::size_t ratio_count(std::size_t n, double rho) {
  return static_cast<std::size_t>(std::floor(rho * static_cast<double>(n) + 1e-9));
}

void validate(const GroupingSpec& spec) {
  if (spec.n_parts == 0 || spec.k_per_part == 0) throw ConfigError("n_parts and k_per_part must be positive");
  if (!(spec.rho1 > 0.0 && spec.rho1 < 1.0)) throw ConfigError("rho1 must lie in (0, 1)");
  if (!(spec.rho2 >= 0.0 && spec.rho2 < 1.0)) throw ConfigError("rho2 must lie in [0, 1)");
  if (visible_count(spec.k_per_part, spec.rho1) < 1)
    throw ConfigError("rho1 leaves no visible voxel in a cluster of " + std::to_string(spec.k_per_part));
  if (ratio_count(spec.n_parts, spec.rho2) > spec.n_parts - 1) throw ConfigError("rho2 masks every cluster");
  if (!(spec.time_scale > 0.0) || !std::isfinite(spec.time_scale)) throw ConfigError("time_scale must be positive");
}

std::vector<Point3> scale_time(std::span<const Point3> coords, double time_scale) {
  std::vector<Point3> out(coords.begin(), coords.end());
  for (auto& p : out) p[2] *= time_scale;
  return out;
}

double distance2(const Point3& a, const Point3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dt = a[2] - b[2];
  return dx * dx + dy * dy + dt * dt;
}

std::vector<std::size_t> farthest_point_sample(std::span<const Point3> coords, std::size_t n_parts) {
  const std::size_t n = coords.size();
  if (n_parts > n)
    throw Error("farthest_point_sample: " + std::to_string(n_parts) + " centers requested from " + std::to_string(n) +
                " points");
  if (n_parts == 0) return {};
  Point3 centroid{0.0, 0.0, 0.0};
  for (const auto& p : coords)
    for (int a = 0; a < 3; ++a) centroid[a] += p[a];
  for (int a = 0; a < 3; ++a) centroid[a] /= static_cast<double>(n);
  std::size_t first = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const double d = distance2(coords[i], centroid);
    if (d < best) {
      best = d;
      first = i;
    }
  }
  return farthest_point_sample(coords, n_parts, first);
}

std::vector<std::size_t> farthest_point_sample(std::span<const Point3> coords, std::size_t n_parts, std::size_t first) {
  const std::size_t n = coords.size();
  if (n_parts > n || first >= n)
    throw Error("farthest_point_sample: " + std::to_string(n_parts) + " centers requested from " + std::to_string(n) +
                " points");
  std::vector<std::size_t> chosen;
  if (n_parts == 0) return chosen;
  chosen.reserve(n_parts);
  chosen.push_back(first);
  std::vector<double> min_d(n, std::numeric_limits<double>::infinity());
  std::vector<std::uint8_t> taken(n, 0);
  taken[first] = 1;
  std::size_t last = first;
  while (chosen.size() < n_parts) {
    std::size_t pick = n;
    double far = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      min_d[i] = std::min(min_d[i], distance2(coords[i], coords[last]));
      if (!taken[i] && min_d[i] > far) {
        far = min_d[i];
        pick = i;
      }
    }
    taken[pick] = 1;
    chosen.push_back(pick);
    last = pick;
  }
  return chosen;
}

std::vector<std::size_t> random_centers(std::size_t n, std::size_t count, std::uint64_t seed) {
  if (count > n)
    throw Error("random_centers: " + std::to_string(count) + " centers requested from " + std::to_string(n) + " points");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto rng = make_rng(seed, 0xCE7E45);
  // Partial Fisher-Yates: the first `count` slots are a uniform draw.
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> d(i, n - 1);
    std::swap(idx[i], idx[d(rng)]);
  }
  idx.resize(count);
  return idx;
}

std::vector<std::size_t> select_centers(std::span<const Point3> coords, std::size_t n_parts, CenterStrategy strategy,
                                        std::uint64_t seed) {
  if (strategy == CenterStrategy::fps) return farthest_point_sample(coords, n_parts);
  return random_centers(coords.size(), n_parts, seed);
}

std::vector<std::size_t> nearest(std::span<const Point3> coords, const Point3& query, std::size_t k,
                                 std::size_t self) {
  const std::size_t n = coords.size();
  if (k > n) throw Error("nearest: k = " + std::to_string(k) + " exceeds point count " + std::to_string(n));
  std::vector<std::pair<double, std::size_t>> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = {distance2(coords[i], query), i};
  auto less = [self](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    if ((a.second == self) != (b.second == self)) return a.second == self;
    return a.second < b.second;
  };
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end(), less);
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = d[i].second;
  return out;
}

ClusterSet knn_group(std::span<const Point3> coords, std::span<const std::size_t> centers, std::size_t k_per_part) {
  if (k_per_part == 0 || k_per_part > coords.size())
    throw Error("knn_group: k_per_part = " + std::to_string(k_per_part) + " for " + std::to_string(coords.size()) +
                " points");
  ClusterSet out;
  out.centers.assign(centers.begin(), centers.end());
  out.members.reserve(centers.size());
  for (std::size_t c : centers) {
    if (c >= coords.size()) throw Error("knn_group: center index out of range");
    out.members.push_back(nearest(coords, coords[c], k_per_part, c));
  }
  return out;
}

bool MaskAssignment::is_globally_masked(std::size_t cluster) const {
  return std::binary_search(global_masked.begin(), global_masked.end(), cluster);
}

MaskAssignment uniform_mask(const ClusterSet& clusters, double rho1, double rho2, std::uint64_t seed) {
  MaskAssignment out;
  out.seed = seed;
  auto rng = make_rng(seed, 0x3A5C);
  for (const auto& members : clusters.members) {
    const std::size_t k = members.size();
    const std::size_t k_visible = visible_count(k, rho1);
    if (k_visible < 1) throw ConfigError("uniform_mask: rho1 leaves no visible voxel");
    std::vector<std::size_t> pos(k);
    std::iota(pos.begin(), pos.end(), std::size_t{0});
    std::shuffle(pos.begin(), pos.end(), rng);
    std::vector<std::uint8_t> is_masked(k, 0);
    for (std::size_t i = 0; i < k - k_visible; ++i) is_masked[pos[i]] = 1;
    std::vector<std::size_t> vis, msk;
    for (std::size_t i = 0; i < k; ++i) (is_masked[i] ? msk : vis).push_back(members[i]);
    out.visible.push_back(std::move(vis));
    out.masked.push_back(std::move(msk));
  }
  const std::size_t n = clusters.size();
  const std::size_t n_masked = ratio_count(n, rho2);
  if (n > 0 && n_masked > n - 1) throw ConfigError("uniform_mask: rho2 masks every cluster");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  out.global_masked.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_masked));
  std::sort(out.global_masked.begin(), out.global_masked.end());
  return out;
}

GlobalSplit global_random_mask(std::size_t sample_size, double rho, std::uint64_t seed) {
  if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("global mask ratio must lie in (0, 1)");
  const std::size_t n_visible = visible_count(sample_size, rho);
  if (n_visible < 1) throw ConfigError("global mask leaves no visible voxel");
  std::vector<std::size_t> order(sample_size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = make_rng(seed, 0x61084);
  std::shuffle(order.begin(), order.end(), rng);
  GlobalSplit out;
  out.visible.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_visible));
  out.masked.assign(order.begin() + static_cast<std::ptrdiff_t>(n_visible), order.end());
  std::sort(out.visible.begin(), out.visible.end());
  std::sort(out.masked.begin(), out.masked.end());
  return out;
}

ClusterSet group_sample(const voxel::VoxelSample& sample, const GroupingSpec& spec, std::uint64_t seed) {
  validate(spec);
  const auto coords = scale_time(sample.coords, spec.time_scale);
  const auto centers = select_centers(coords, spec.n_parts, spec.center_strategy, seed);
  return knn_group(coords, centers, spec.k_per_part);
}

}  // namespace evssl::group
