#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "evssl/voxel.hpp"

namespace evssl::group {

using voxel::Point3;

enum class CenterStrategy { fps, random };

std::string_view to_string(CenterStrategy s);
CenterStrategy center_strategy_from_string(std::string_view name);

struct GroupingSpec {
  std::size_t n_parts = 16;
  std::size_t k_per_part = 128;
  double rho1 = 0.8;  // mask ratio inside each cluster
  double rho2 = 0.5;  // cluster-level mask ratio of the global branch
  CenterStrategy center_strategy = CenterStrategy::fps;
  double time_scale = 1.0;

  bool operator==(const GroupingSpec&) const = default;
};

/// At least one visible voxel per cluster and one visible cluster.
void validate(const GroupingSpec& spec);

/// floor((1 - rho) * n), computed with a tiny slack so that products which are
/// mathematically integral (e.g. 0.1 * 10) do not round down.
std::size_t visible_count(std::size_t n, double rho);
/// floor(rho * n) with the same slack.
std::size_t ratio_count(std::size_t n, double rho);

/// Multiplies the temporal axis by `time_scale`.
std::vector<Point3> scale_time(std::span<const Point3> coords, double time_scale);
double distance2(const Point3& a, const Point3& b);

/// Greedy farthest-point sampling. Starts from the point nearest the
/// centroid, then repeatedly takes the unchosen point with the largest
/// distance to the chosen set. Ties go to the smallest index.
std::vector<std::size_t> farthest_point_sample(std::span<const Point3> coords, std::size_t n_parts);
/// Same greedy rule from an explicit seed point.
std::vector<std::size_t> farthest_point_sample(std::span<const Point3> coords, std::size_t n_parts, std::size_t first);

/// Uniform sample of `count` distinct indices from [0, n), in draw order.
std::vector<std::size_t> random_centers(std::size_t n, std::size_t count, std::uint64_t seed);

std::vector<std::size_t> select_centers(std::span<const Point3> coords, std::size_t n_parts, CenterStrategy strategy,
                                        std::uint64_t seed);

/// The k nearest points of `query` ordered by (distance, index). The point
/// `self`, when given, sorts ahead of other zero-distance points.
std::vector<std::size_t> nearest(std::span<const Point3> coords, const Point3& query, std::size_t k,
                                 std::size_t self = static_cast<std::size_t>(-1));

struct ClusterSet {
  std::vector<std::size_t> centers;
  std::vector<std::vector<std::size_t>> members;  // ascending distance, center first

  std::size_t size() const noexcept { return centers.size(); }
};

ClusterSet knn_group(std::span<const Point3> coords, std::span<const std::size_t> centers, std::size_t k_per_part);

struct MaskAssignment {
  std::vector<std::vector<std::size_t>> visible;  // voxel indices, member order
  std::vector<std::vector<std::size_t>> masked;
  std::vector<std::size_t> global_masked;  // ascending cluster indices (M_G)
  std::uint64_t seed = 0;

  bool is_globally_masked(std::size_t cluster) const;
};

/// Masks a uniformly random floor(rho1 K)-complement inside every cluster and
/// floor(rho2 N) whole clusters for the global branch.
MaskAssignment uniform_mask(const ClusterSet& clusters, double rho1, double rho2, std::uint64_t seed);

struct GlobalSplit {
  std::vector<std::size_t> visible;  // ascending
  std::vector<std::size_t> masked;   // ascending
};

/// One uniform split over all voxels with floor((1 - rho) n) visible.
/// Requires 0 < rho < 1.
GlobalSplit global_random_mask(std::size_t sample_size, double rho, std::uint64_t seed);

/// Centers + KNN clusters of a sample under `spec` (time scaling applied).
ClusterSet group_sample(const voxel::VoxelSample& sample, const GroupingSpec& spec, std::uint64_t seed);

}  // namespace evssl::group
