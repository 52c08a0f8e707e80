#include "evssl/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "evssl/errors.hpp"

namespace evssl::image {
namespace {

void draw_line(Gray& img, long x0, long y0, long x1, long y1, std::uint8_t shade) {
  // Bresenham.
  const long dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const long dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  long err = dx + dy;
  for (;;) {
    if (x0 >= 0 && y0 >= 0 && x0 < static_cast<long>(img.width) && y0 < static_cast<long>(img.height))
      img.at(static_cast<std::size_t>(x0), static_cast<std::size_t>(y0)) = shade;
    if (x0 == x1 && y0 == y1) break;
    const long e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

}  // namespace

std::string encode_pgm(const Gray& img) {
  if (img.pixels.size() != img.width * img.height) throw Error("encode_pgm: pixel count does not match size");
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(img.pixels.begin(), img.pixels.end());
  return out;
}

void write_pgm(const std::filesystem::path& path, const Gray& img) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  const std::string bytes = encode_pgm(img);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing " + path.string());
}

Gray occupancy(const voxel::VoxelSample& sample, std::span<const std::size_t> indices, std::size_t cell) {
  const auto nx = static_cast<std::size_t>(sample.extent.nx);
  const auto ny = static_cast<std::size_t>(sample.extent.ny);
  std::vector<std::size_t> stack(nx * ny, 0);
  for (std::size_t i : indices) {
    const auto& c = sample.voxels.at(i).coord;
    ++stack[static_cast<std::size_t>(c.iy) * nx + static_cast<std::size_t>(c.ix)];
  }
  const std::size_t top = std::max<std::size_t>(1, static_cast<std::size_t>(sample.extent.nt));
  Gray img(nx * cell, ny * cell, 0);
  for (std::size_t y = 0; y < ny; ++y)
    for (std::size_t x = 0; x < nx; ++x) {
      const std::size_t n = stack[y * nx + x];
      if (n == 0) continue;
      // Any occupied column is clearly visible; full columns saturate.
      const auto v = static_cast<std::uint8_t>(std::min<std::size_t>(255, 64 + (191 * n) / top));
      for (std::size_t dy = 0; dy < cell; ++dy)
        for (std::size_t dx = 0; dx < cell; ++dx) img.at(x * cell + dx, y * cell + dy) = v;
    }
  return img;
}

Gray line_plot(std::span<const Series> series, std::size_t width, std::size_t height, bool unit_y) {
  Gray img(width, height, 255);
  double xmin = INFINITY, xmax = -INFINITY, ymin = unit_y ? 0.0 : INFINITY, ymax = unit_y ? 1.0 : -INFINITY;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw Error("line_plot: series x/y lengths differ");
    for (double v : s.x) xmin = std::min(xmin, v), xmax = std::max(xmax, v);
    for (double v : s.y) ymin = std::min(ymin, v), ymax = std::max(ymax, v);
  }
  if (!(xmax > xmin)) xmin -= 0.5, xmax += 0.5;
  if (!(ymax > ymin)) ymin -= 0.5, ymax += 0.5;
  const long margin = 16;
  const long w = static_cast<long>(width) - 2 * margin, h = static_cast<long>(height) - 2 * margin;
  auto px = [&](double x) { return margin + std::lround((x - xmin) / (xmax - xmin) * static_cast<double>(w)); };
  auto py = [&](double y) { return margin + h - std::lround((y - ymin) / (ymax - ymin) * static_cast<double>(h)); };
  draw_line(img, margin, margin, margin, margin + h, 128);
  draw_line(img, margin, margin + h, margin + w, margin + h, 128);
  for (const auto& s : series) {
    std::vector<std::size_t> order(s.x.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s.x[a] < s.x[b]; });
    for (std::size_t k = 0; k < order.size(); ++k) {
      const long x = px(s.x[order[k]]), y = py(s.y[order[k]]);
      for (long d = -2; d <= 2; ++d) {
        draw_line(img, x + d, y - 2, x + d, y + 2, s.shade);
      }
      if (k > 0) draw_line(img, px(s.x[order[k - 1]]), py(s.y[order[k - 1]]), x, y, s.shade);
    }
  }
  return img;
}

}  // namespace evssl::image
