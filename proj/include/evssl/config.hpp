#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "evssl/grouping.hpp"
#include "evssl/model.hpp"
#include "evssl/numerics/optim.hpp"
#include "evssl/voxel.hpp"

namespace evssl {

enum class Mode { dual, local_only, mae_voxel };

std::string_view to_string(Mode m);
Mode mode_from_string(std::string_view name);

struct TrainConfig {
  std::size_t epochs = 50;  // scaled down from 700
  std::size_t batch_size = 16;
  double peak_lr = 3e-4;
  std::size_t warmup_epochs = 3;  // 40 of 700, scaled
  double lr_floor = 0.0;
  double lambda = 1.0;
  double ema_momentum = 0.996;
  Mode mode = Mode::dual;
  num::AdamWConfig adamw;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 10;  // epochs; 0 keeps only the final checkpoint
  /// Total optimizer steps; 0 derives epochs * ceil(train samples / batch).
  /// A fixed value keeps the iteration count constant across data fractions.
  std::size_t iterations = 0;

  bool operator==(const TrainConfig&) const = default;
};

struct RunConfig {
  voxel::VoxelSpec voxel;
  group::GroupingSpec grouping;
  model::ModelConfig model;
  TrainConfig train;
  std::string manifest;    // dataset manifest path
  std::string output_dir = "runs/default";

  bool operator==(const RunConfig&) const = default;
};

/// Cross-section checks: feature length matches the model input, clusters
/// fit in a sample, time scales agree, plus every section's own validation.
void validate(const RunConfig& config);

nlohmann::json to_json(const RunConfig& config);
/// Starts from the defaults and overlays `j`. Unknown keys, wrong types and
/// invalid values raise ConfigError. `model.variant` resets the model section
/// before the remaining model keys apply.
RunConfig run_config_from_json(const nlohmann::json& j);

RunConfig load_run_config(const std::filesystem::path& path);
/// Pretty-printed JSON; load_run_config(save(c)) == c.
void save_run_config(const RunConfig& config, const std::filesystem::path& path);

}  // namespace evssl
