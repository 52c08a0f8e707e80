#pragma once
// Brute-force references. Each one recomputes its quantity by the most direct
// route available and shares no code with the library beyond plain types.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

#include "evssl/events.hpp"
#include "evssl/model.hpp"
#include "evssl/voxel.hpp"

namespace oracle {

using evssl::voxel::Coord;
using evssl::voxel::Point3;

struct VoxelRef {
  std::vector<double> feature;
  std::int64_t count = 0;
};

/// Per-event floating accumulation of p * (t - start) / v_t, clamped at the end.
inline std::map<Coord, VoxelRef> voxelize(const evssl::events::EventStream& s, const evssl::voxel::VoxelSpec& v) {
  const std::int64_t nt = std::max<std::int64_t>(1, (s.duration_us + v.v_t_us - 1) / v.v_t_us);
  std::map<Coord, VoxelRef> out;
  for (const auto& e : s.events) {
    std::int64_t it = e.t / v.v_t_us;
    if (it > nt - 1) it = nt - 1;
    Coord c{e.x / v.v_w, e.y / v.v_h, static_cast<std::int32_t>(it)};
    auto& ref = out[c];
    if (ref.feature.empty()) ref.feature.assign(static_cast<std::size_t>(v.v_w * v.v_h), 0.0);
    const int dx = e.x - c.ix * v.v_w, dy = e.y - c.iy * v.v_h;
    ref.feature[static_cast<std::size_t>(dy * v.v_w + dx)] +=
        e.p * static_cast<double>(e.t - it * v.v_t_us) / static_cast<double>(v.v_t_us);
    ++ref.count;
  }
  for (auto& [c, ref] : out)
    for (double& f : ref.feature) f = std::min(1.0, std::max(-1.0, f));
  return out;
}

/// Repeated extraction of the densest remaining voxel (smallest coord on
/// ties), then cyclic padding. Returns indices into `voxels` plus flags.
inline std::pair<std::vector<std::size_t>, std::vector<bool>> select(const std::vector<evssl::voxel::Voxel>& voxels,
                                                                     std::size_t n_sel) {
  std::vector<bool> used(voxels.size(), false);
  std::vector<std::size_t> picked;
  while (picked.size() < std::min(n_sel, voxels.size())) {
    std::size_t best = voxels.size();
    for (std::size_t i = 0; i < voxels.size(); ++i) {
      if (used[i]) continue;
      if (best == voxels.size() || voxels[i].event_count > voxels[best].event_count ||
          (voxels[i].event_count == voxels[best].event_count && voxels[i].coord < voxels[best].coord))
        best = i;
    }
    used[best] = true;
    picked.push_back(best);
  }
  std::vector<std::size_t> idx;
  std::vector<bool> dup;
  for (std::size_t i = 0; i < n_sel; ++i) {
    idx.push_back(picked[i % picked.size()]);
    dup.push_back(i >= picked.size());
  }
  return {idx, dup};
}

inline double d2(const Point3& a, const Point3& b) {
  double s = 0.0;
  for (int k = 0; k < 3; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

/// O(N^2) per step: recomputes every point's distance to the whole chosen set.
inline std::vector<std::size_t> fps(const std::vector<Point3>& pts, std::size_t n) {
  Point3 c{0, 0, 0};
  for (const auto& p : pts)
    for (int k = 0; k < 3; ++k) c[k] += p[k];
  for (int k = 0; k < 3; ++k) c[k] /= static_cast<double>(pts.size());
  std::size_t first = 0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    if (d2(pts[i], c) < d2(pts[first], c)) first = i;
  std::vector<std::size_t> chosen{first};
  while (chosen.size() < n) {
    std::size_t best = pts.size();
    double best_d = -1.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (std::find(chosen.begin(), chosen.end(), i) != chosen.end()) continue;
      double m = std::numeric_limits<double>::infinity();
      for (std::size_t j : chosen) m = std::min(m, d2(pts[i], pts[j]));
      if (m > best_d) {
        best_d = m;
        best = i;
      }
    }
    chosen.push_back(best);
  }
  return chosen;
}

/// Selection-sort KNN: distance, then the center itself, then index.
inline std::vector<std::size_t> knn(const std::vector<Point3>& pts, std::size_t center, std::size_t k) {
  std::vector<bool> used(pts.size(), false);
  std::vector<std::size_t> out;
  while (out.size() < k) {
    std::size_t best = pts.size();
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (used[i]) continue;
      if (best == pts.size()) {
        best = i;
        continue;
      }
      const double di = d2(pts[i], pts[center]), db = d2(pts[best], pts[center]);
      if (di < db || (di == db && i == center)) best = i;
    }
    used[best] = true;
    out.push_back(best);
  }
  return out;
}

/// ON / OFF crossings of a moving bar's pixel centers, from the inside test
/// sampled every microsecond. The first sample (t = 0) sets the initial state.
inline std::pair<std::size_t, std::size_t> bar_crossings(const evssl::events::SyntheticSpec& s) {
  const double half_w = s.thickness() / 2.0, half_h = s.size / 2.0;
  std::size_t on = 0, off = 0;
  for (int y = 0; y < s.height; ++y) {
    const double cy = y + 0.5;
    for (int x = 0; x < s.width; ++x) {
      const double cx = x + 0.5;
      auto inside = [&](std::int64_t t_us) {
        const double t = static_cast<double>(t_us) / 1000.0;
        const double bx = s.center_x + s.velocity_x * t, by = s.center_y + s.velocity_y * t;
        return std::abs(cx - bx) <= half_w && std::abs(cy - by) <= half_h;
      };
      // Rows the bar never covers cannot cross.
      if (s.velocity_y == 0.0 && std::abs(cy - s.center_y) > half_h) continue;
      bool prev = inside(0);
      for (std::int64_t t = 1; t <= s.duration_us; ++t) {
        const bool now = inside(t);
        if (now && !prev) ++on;
        if (!now && prev) ++off;
        prev = now;
      }
    }
  }
  return {on, off};
}

/// Sum over clusters of squared residual entries of non-duplicate rows,
/// divided by the number of such rows.
inline double local_loss(const std::vector<std::vector<std::vector<double>>>& pred,
                         const std::vector<std::vector<std::vector<double>>>& target,
                         const std::vector<std::vector<std::uint8_t>>& dup) {
  double sum = 0.0;
  std::size_t rows = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    for (std::size_t r = 0; r < pred[i].size(); ++r) {
      if (dup[i][r]) continue;
      ++rows;
      for (std::size_t c = 0; c < pred[i][r].size(); ++c) {
        const double d = target[i][r][c] - pred[i][r][c];
        sum += d * d;
      }
    }
  return rows == 0 ? 0.0 : sum / static_cast<double>(rows);
}

inline double cosine_loss(const std::vector<std::vector<double>>& z, const std::vector<std::vector<double>>& zbar) {
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    double dot = 0.0, a = 0.0, b = 0.0;
    for (std::size_t k = 0; k < z[i].size(); ++k) {
      dot += z[i][k] * zbar[i][k];
      a += z[i][k] * z[i][k];
      b += zbar[i][k] * zbar[i][k];
    }
    total += 1.0 - dot / (std::max(std::sqrt(a), 1e-8) * std::max(std::sqrt(b), 1e-8));
  }
  return total / static_cast<double>(z.size());
}

/// Learned scalars, layer by layer.
inline std::size_t param_count(const evssl::model::ModelConfig& c) {
  auto linear = [](std::size_t in, std::size_t out) { return in * out + out; };
  auto norm = [](std::size_t d) { return 2 * d; };
  auto block = [&](std::size_t d) {
    return norm(d) + linear(d, 3 * d) + linear(d, d) + norm(d) + linear(d, c.mlp_ratio * d) +
           linear(c.mlp_ratio * d, d);
  };
  auto pos = [&](std::size_t d) { return linear(3, d) + linear(d, d); };
  std::size_t n = linear(c.in_features, c.stage_channels[0]) + pos(c.stage_channels[0]);
  std::size_t concat = 0;
  for (std::size_t j = 0; j < 4; ++j) {
    if (j > 0) n += linear(c.stage_channels[j - 1], c.stage_channels[j]);
    n += c.stage_layers[j] * block(c.stage_channels[j]) + norm(c.stage_channels[j]);
    concat += c.stage_channels[j];
  }
  const std::size_t d = c.decoder_dim;
  const std::size_t decoder = pos(d) + d + c.decoder_layers * block(d) + norm(d);
  n += linear(concat, d) + decoder + linear(d, c.in_features);
  n += linear(c.stage_channels[3], d) + decoder + linear(d, c.stage_channels[3]);
  return n;
}

inline double cosine_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return 1.0 - dot / (std::max(std::sqrt(na), 1e-8) * std::max(std::sqrt(nb), 1e-8));
}

/// All-pairs kNN vote with the stated tie rules.
inline int knn_vote(const std::vector<std::vector<double>>& train, const std::vector<int>& labels,
                    const std::vector<double>& q, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t i = 0; i < train.size(); ++i) all.push_back({cosine_distance(q, train[i]), i});
  std::sort(all.begin(), all.end());
  std::map<int, std::pair<int, double>> votes;
  for (std::size_t j = 0; j < k; ++j) {
    votes[labels[all[j].second]].first += 1;
    votes[labels[all[j].second]].second += all[j].first;
  }
  int best = -1;
  int best_count = -1;
  double best_mean = 0.0;
  for (const auto& [label, v] : votes) {
    const double mean = v.second / v.first;
    if (v.first > best_count || (v.first == best_count && mean < best_mean)) {
      best = label;
      best_count = v.first;
      best_mean = mean;
    }
  }
  return best;
}

inline evssl::events::EventStream random_stream(std::mt19937_64& rng, std::int32_t w, std::int32_t h,
                                                std::size_t n, std::int64_t duration) {
  evssl::events::EventStream s;
  s.width = w;
  s.height = h;
  s.duration_us = duration;
  std::uniform_int_distribution<std::int64_t> td(0, duration);
  std::uniform_int_distribution<std::int32_t> xd(0, w - 1), yd(0, h - 1);
  std::bernoulli_distribution pd(0.5);
  for (std::size_t i = 0; i < n; ++i) s.events.push_back({td(rng), xd(rng), yd(rng), pd(rng) ? std::int8_t{1} : std::int8_t{-1}});
  std::sort(s.events.begin(), s.events.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
  return s;
}

}  // namespace oracle
