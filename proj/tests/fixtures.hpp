#pragma once
// Small configurations and in-memory datasets shared by the test binaries.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "evssl/config.hpp"
#include "evssl/events.hpp"
#include "evssl/pretrain.hpp"
#include "evssl/voxel.hpp"

namespace fixture {

/// Channels [8,16,32,64], K = 16, four clusters, 64 voxels per sample.
inline evssl::RunConfig tiny_run() {
  evssl::RunConfig c;
  c.voxel = {5, 5, 25000, 64};
  c.grouping.n_parts = 4;
  c.grouping.k_per_part = 16;
  c.model = evssl::model::variant_config("tiny");
  c.model.decoder_dim = 16;
  c.model.decoder_heads = 2;
  c.model.decoder_layers = 1;
  c.train.epochs = 2;
  c.train.batch_size = 2;
  c.train.warmup_epochs = 1;
  c.train.seed = 3;
  return c;
}

inline evssl::events::EventStream stream(evssl::events::ShapeClass shape, std::uint64_t seed,
                                         double noise_rate = 1.0) {
  return evssl::events::generate_synthetic(evssl::events::random_spec(shape, seed, 64, 64, 100000, noise_rate), seed);
}

inline evssl::voxel::VoxelSample sample(const evssl::RunConfig& c, std::uint64_t seed,
                                        evssl::events::ShapeClass shape = evssl::events::ShapeClass::moving_bar) {
  return evssl::voxel::make_sample(stream(shape, seed), c.voxel);
}

/// `per_class` synthetic samples per class, the first `train_per_class` of
/// each marked train.
inline evssl::train::Dataset dataset(const evssl::RunConfig& c, std::size_t classes, std::size_t per_class,
                                     std::size_t train_per_class, std::uint64_t seed) {
  using namespace evssl;
  const events::ShapeClass shapes[] = {events::ShapeClass::moving_bar, events::ShapeClass::moving_disk,
                                       events::ShapeClass::moving_corner};
  train::Dataset d;
  for (std::size_t k = 0; k < classes; ++k) {
    d.class_names.emplace_back(events::to_string(shapes[k]));
    for (std::size_t i = 0; i < per_class; ++i) {
      d.samples.push_back(sample(c, seed * 1000 + k * 100 + i, shapes[k]));
      d.labels.push_back(static_cast<int>(k));
      d.splits.push_back(i < train_per_class ? events::Split::train : events::Split::test);
    }
  }
  return d;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("evssl_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixture
