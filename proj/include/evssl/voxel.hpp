#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <string>
#include <vector>

#include "evssl/events.hpp"

namespace evssl::voxel {

struct VoxelSpec {
  std::int32_t v_w = 5;
  std::int32_t v_h = 5;
  std::int64_t v_t_us = 25000;
  std::size_t n_sel = 2048;

  std::size_t feature_length() const { return static_cast<std::size_t>(v_w) * static_cast<std::size_t>(v_h); }
  bool operator==(const VoxelSpec&) const = default;
};

void validate(const VoxelSpec& spec);

struct Coord {
  std::int32_t ix = 0;
  std::int32_t iy = 0;
  std::int32_t it = 0;

  auto operator<=>(const Coord&) const = default;
};

struct Voxel {
  Coord coord;
  std::vector<double> feature;  // v_w * v_h entries in [-1, 1]
  std::int64_t event_count = 0;

  bool operator==(const Voxel&) const = default;
};

struct GridExtent {
  std::int32_t nx = 1;
  std::int32_t ny = 1;
  std::int32_t nt = 1;

  bool operator==(const GridExtent&) const = default;
};

/// Non-empty voxels of one stream in ascending coord order.
struct VoxelGrid {
  std::vector<Voxel> voxels;
  GridExtent extent;
};

using Point3 = std::array<double, 3>;

/// Fixed-size network input: the n_sel densest voxels, cyclically padded.
struct VoxelSample {
  std::vector<Voxel> voxels;
  std::vector<Point3> coords;      // coord / extent per axis, in [0, 1)
  std::vector<std::uint8_t> duplicated;
  GridExtent extent;
  std::size_t feature_length = 0;

  std::size_t size() const noexcept { return voxels.size(); }
};

/// Cells per axis: ceil(width / v_w), ceil(height / v_h),
/// max(1, ceil(duration / v_t)).
GridExtent grid_extent(const events::EventStream& stream, const VoxelSpec& spec);

/// Accumulates sum_j p_j * (t_j - bin_start) / v_t per pixel slot
/// (y mod v_h) * v_w + (x mod v_w), clamped to [-1, 1]. Events at the very end
/// of the stream fall into the last temporal bin.
VoxelGrid voxelize(const events::EventStream& stream, const VoxelSpec& spec);

/// Orders voxels by event_count descending, then coord ascending, keeps the
/// first n_sel and repeats them cyclically (flagged) when fewer exist.
/// Throws EmptySampleError on an empty grid.
VoxelSample select_top_n(const VoxelGrid& grid, const VoxelSpec& spec);

VoxelSample make_sample(const events::EventStream& stream, const VoxelSpec& spec);

/// Rebuilds the normalized coordinates of `sample` from its voxels.
void refresh_coords(VoxelSample& sample);

/// Rows `ix,iy,it,event_count,duplicated,f0..f{L-1}` with a header line.
std::string sample_to_csv(const VoxelSample& sample);

}  // namespace evssl::voxel
