#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evssl/checkpoint.hpp"
#include "evssl/config.hpp"
#include "evssl/events.hpp"
#include "evssl/grouping.hpp"
#include "evssl/model.hpp"
#include "evssl/numerics/optim.hpp"
#include "evssl/voxel.hpp"

namespace evssl::train {

using num::Array;
using num::Binding;
using num::ParamStore;
using num::Var;

/// Voxelized samples of a manifest, in manifest order.
struct Dataset {
  std::vector<voxel::VoxelSample> samples;
  std::vector<int> labels;
  std::vector<events::Split> splits;
  std::vector<std::string> class_names;

  std::size_t size() const noexcept { return samples.size(); }
  std::vector<std::size_t> indices(events::Split split) const;
};

Dataset load_dataset(const std::filesystem::path& manifest_path, const voxel::VoxelSpec& spec);

/// Mean squared row norm of the residuals over every non-duplicate masked
/// voxel of every cluster: sum_i |X_i - Xbar_i|^2 / (number of rows kept).
/// Zero when every row is a duplicate.
Var local_loss(num::Tape& tape, std::span<const Var> predictions, std::span<const Array> targets,
               std::span<const std::vector<std::uint8_t>> duplicated);

/// Mean over rows of 1 - cos(target, prediction).
Var global_loss(const Var& predictions, const Var& targets);

/// L_local + lambda * L_global; the global term is skipped when absent.
Var total_loss(const Var& local, const std::optional<Var>& global, double lambda);

/// Summaries of the complete clusters `cluster_ids` under the momentum
/// encoder, detached from the tape. [clusters x stage-4 width].
Var momentum_targets(const model::ModelConfig& config, Binding& momentum, const voxel::VoxelSample& sample,
                     const group::ClusterSet& clusters, std::span<const std::size_t> cluster_ids);

struct SampleLoss {
  Var total;
  Var local;
  std::optional<Var> global;
};

/// Forward pass of one sample under `config.train.mode`. Grouping, masks and
/// random centers all derive from `mask_seed`.
SampleLoss sample_loss(const RunConfig& config, Binding& online, Binding& momentum, const voxel::VoxelSample& sample,
                       std::uint64_t mask_seed);

struct EpochRow {
  std::size_t epoch = 0;
  double local = 0.0;
  std::optional<double> global;
  double total = 0.0;
  double lr = 0.0;

  bool operator==(const EpochRow&) const = default;
};

struct TrainState {
  ParamStore params;
  num::EmaState ema;
  num::OptimizerState opt;
  std::size_t epoch = 0;   // last completed epoch
  std::uint64_t step = 0;  // optimizer steps taken
  std::vector<EpochRow> log;
};

/// Fresh parameters from `config.train.seed`, shadow = copy of the online
/// parameters, zero moments.
TrainState init_state(const RunConfig& config);

struct Schedule {
  std::uint64_t warmup_steps = 0;
  std::uint64_t total_steps = 0;
  std::uint64_t steps_per_epoch = 1;
  std::size_t epochs = 0;
};

Schedule make_schedule(const TrainConfig& train, std::size_t train_samples);

struct StepMetrics {
  std::uint64_t step = 0;  // 1-based index of this update
  double lr = 0.0;
  double local = 0.0;
  std::optional<double> global;
  double total = 0.0;
};

/// Averages the per-sample losses and gradients of `batch`, applies one AdamW
/// update at cosine_lr(step) and one EMA update. A non-finite loss throws
/// NumericError naming the step, LR and loss components.
StepMetrics train_step(TrainState& state, const RunConfig& config, std::span<const voxel::VoxelSample* const> batch,
                       std::span<const std::uint64_t> mask_seeds, const Schedule& schedule);

/// Seed of the masks of dataset sample `index` in `epoch`.
std::uint64_t mask_seed(std::uint64_t seed, std::size_t epoch, std::size_t index);
/// Per-epoch training order of `indices`.
std::vector<std::size_t> epoch_order(std::span<const std::size_t> indices, std::uint64_t seed, std::size_t epoch);

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: nothing written
  std::optional<std::filesystem::path> resume;
  std::optional<std::vector<std::size_t>> train_indices;  // defaults to the train split
  std::function<void(const EpochRow&)> on_epoch;
};

/// Runs (or resumes) training. Writes config.json, metrics.csv,
/// checkpoints/epoch_NNNN.ckpt every checkpoint_every epochs and
/// checkpoints/final.ckpt into out_dir.
TrainState train_loop(const RunConfig& config, const Dataset& data, const TrainOptions& options);

ckpt::Checkpoint to_checkpoint(const RunConfig& config, const TrainState& state);
/// Restores the state and the config echoed at save time.
std::pair<RunConfig, TrainState> from_checkpoint(const ckpt::Checkpoint& checkpoint);

std::string metrics_csv(std::span<const EpochRow> rows);

}  // namespace evssl::train
