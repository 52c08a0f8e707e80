#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "evssl/voxel.hpp"

namespace evssl::image {

/// 8-bit grayscale raster, row-major.
struct Gray {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  Gray() = default;
  Gray(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), pixels(w * h, fill) {}
  std::uint8_t& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
  std::uint8_t at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
};

/// Binary PGM (P5).
std::string encode_pgm(const Gray& img);
void write_pgm(const std::filesystem::path& path, const Gray& img);

/// Top-down (x, y) projection of the voxels listed in `indices`. Brightness
/// grows with the number of listed voxels stacked in a column; each grid
/// cell spans `cell` pixels.
Gray occupancy(const voxel::VoxelSample& sample, std::span<const std::size_t> indices, std::size_t cell = 4);

struct Series {
  std::vector<double> x;
  std::vector<double> y;
  std::uint8_t shade = 0;  // 0 = black
};

/// Line plot of several series on a white canvas with a frame; axes span the
/// data range (y padded to at least [0, 1] for accuracies when `unit_y`).
Gray line_plot(std::span<const Series> series, std::size_t width = 320, std::size_t height = 240,
               bool unit_y = true);

}  // namespace evssl::image
