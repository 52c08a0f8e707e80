#include "evssl/voxel.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

#include "evssl/errors.hpp"

namespace evssl::voxel {
namespace {

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

}  // namespace

void validate(const VoxelSpec& spec) {
  if (spec.v_w <= 0 || spec.v_h <= 0 || spec.v_t_us <= 0) throw ConfigError("voxel size must be positive");
  if (spec.n_sel == 0) throw ConfigError("n_sel must be positive");
}

GridExtent grid_extent(const events::EventStream& stream, const VoxelSpec& spec) {
  GridExtent e;
  e.nx = static_cast<std::int32_t>(ceil_div(stream.width, spec.v_w));
  e.ny = static_cast<std::int32_t>(ceil_div(stream.height, spec.v_h));
  e.nt = static_cast<std::int32_t>(std::max<std::int64_t>(1, ceil_div(stream.duration_us, spec.v_t_us)));
  return e;
}

VoxelGrid voxelize(const events::EventStream& stream, const VoxelSpec& spec) {
  validate(spec);
  VoxelGrid grid;
  grid.extent = grid_extent(stream, spec);
  const GridExtent& ext = grid.extent;
  const std::size_t len = spec.feature_length();

  // Integer accumulation of p * (t - bin_start) keeps the result independent of
  // event order; the division by v_t happens once per entry.
  struct Acc {
    std::vector<std::int64_t> sums;
    std::int64_t count = 0;
  };
  std::map<Coord, Acc> cells;
  for (const events::Event& e : stream.events) {
    Coord c;
    c.ix = e.x / spec.v_w;
    c.iy = e.y / spec.v_h;
    c.it = static_cast<std::int32_t>(std::min<std::int64_t>(e.t / spec.v_t_us, ext.nt - 1));
    Acc& acc = cells[c];
    if (acc.sums.empty()) acc.sums.assign(len, 0);
    const std::size_t slot = static_cast<std::size_t>((e.y % spec.v_h) * spec.v_w + (e.x % spec.v_w));
    acc.sums[slot] += e.p * (e.t - static_cast<std::int64_t>(c.it) * spec.v_t_us);
    ++acc.count;
  }
  grid.voxels.reserve(cells.size());
  const double vt = static_cast<double>(spec.v_t_us);
  for (auto& [coord, acc] : cells) {
    Voxel v;
    v.coord = coord;
    v.event_count = acc.count;
    v.feature.resize(len);
    for (std::size_t k = 0; k < len; ++k)
      v.feature[k] = std::clamp(static_cast<double>(acc.sums[k]) / vt, -1.0, 1.0);
    grid.voxels.push_back(std::move(v));
  }
  return grid;
}

void refresh_coords(VoxelSample& sample) {
  sample.coords.resize(sample.voxels.size());
  for (std::size_t i = 0; i < sample.voxels.size(); ++i) {
    const Coord& c = sample.voxels[i].coord;
    sample.coords[i] = {static_cast<double>(c.ix) / sample.extent.nx, static_cast<double>(c.iy) / sample.extent.ny,
                        static_cast<double>(c.it) / sample.extent.nt};
  }
}

VoxelSample select_top_n(const VoxelGrid& grid, const VoxelSpec& spec) {
  validate(spec);
  if (grid.voxels.empty()) throw EmptySampleError("cannot select voxels from an empty grid");
  std::vector<std::size_t> order(grid.voxels.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const Voxel& va = grid.voxels[a];
    const Voxel& vb = grid.voxels[b];
    if (va.event_count != vb.event_count) return va.event_count > vb.event_count;
    return va.coord < vb.coord;
  });
  const std::size_t kept = std::min(order.size(), spec.n_sel);
  VoxelSample s;
  s.extent = grid.extent;
  s.feature_length = spec.feature_length();
  s.voxels.reserve(spec.n_sel);
  s.duplicated.reserve(spec.n_sel);
  for (std::size_t i = 0; i < spec.n_sel; ++i) {
    s.voxels.push_back(grid.voxels[order[i % kept]]);
    s.duplicated.push_back(i >= kept ? 1 : 0);
  }
  refresh_coords(s);
  return s;
}

VoxelSample make_sample(const events::EventStream& stream, const VoxelSpec& spec) {
  return select_top_n(voxelize(stream, spec), spec);
}

std::string sample_to_csv(const VoxelSample& sample) {
  std::string out = "ix,iy,it,event_count,duplicated";
  for (std::size_t k = 0; k < sample.feature_length; ++k) out += ",f" + std::to_string(k);
  out += '\n';
  char buf[64];
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const Voxel& v = sample.voxels[i];
    out += std::to_string(v.coord.ix) + ',' + std::to_string(v.coord.iy) + ',' + std::to_string(v.coord.it) + ',' +
           std::to_string(v.event_count) + ',' + (sample.duplicated[i] ? "1" : "0");
    for (double f : v.feature) {
      std::snprintf(buf, sizeof buf, ",%.17g", f);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace evssl::voxel
