#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evssl/config.hpp"
#include "evssl/grouping.hpp"
#include "evssl/model.hpp"
#include "evssl/pretrain.hpp"

namespace evssl::eval {

using num::Array;
using num::ParamStore;

struct FeatureSet {
  Array features;  // [samples x feature_dim]
  std::vector<int> labels;
  std::string provenance;

  std::size_t size() const noexcept { return labels.size(); }
};

/// Frozen-encoder feature of one sample: canonical voxel order, FPS centers,
/// KNN clusters with every member visible, mean of the cluster summaries.
/// Width equals the stage-4 channel count.
std::vector<double> extract_features(const model::ModelConfig& config, const ParamStore& params,
                                     const voxel::VoxelSample& sample, const group::GroupingSpec& grouping);

FeatureSet extract_feature_set(const model::ModelConfig& config, const ParamStore& params, const train::Dataset& data,
                               std::span<const std::size_t> indices, const group::GroupingSpec& grouping,
                               std::string provenance);

/// Cosine-distance kNN. The majority label wins; ties go to the label with
/// the smaller mean distance, then the smaller label.
std::vector<int> knn_predict(const FeatureSet& train, const Array& queries, std::size_t k);
double knn_classify(const FeatureSet& train, const FeatureSet& test, std::size_t k);

double accuracy(std::span<const int> predicted, std::span<const int> labels);

struct ProbeOptions {
  std::size_t epochs = 500;
  double lr = 0.5;
  double weight_decay = 1e-4;  // L2 penalty (wd / 2) |W|^2
  std::uint64_t seed = 0;

  bool operator==(const ProbeOptions&) const = default;
};

/// Softmax regression on z-scored features.
struct LinearProbe {
  Array weight;  // [dim x classes]
  Array bias;    // [classes]
  std::vector<double> mean;
  std::vector<double> scale;

  Array standardize(const Array& features) const;
  std::vector<int> predict(const Array& features) const;
};

/// Cross-entropy plus the L2 penalty for standardized inputs `x`.
num::Var probe_loss(const num::Var& weight, const num::Var& bias, const Array& x, const std::vector<int>& labels,
                    double weight_decay);

/// Full-batch gradient descent. Needs at least two classes in `train`.
LinearProbe fit_linear_probe(const FeatureSet& train, const ProbeOptions& options);
double linear_probe(const FeatureSet& train, const FeatureSet& test, const ProbeOptions& options);

struct AblationGrid {
  RunConfig base;
  std::vector<Mode> modes{Mode::dual, Mode::local_only, Mode::mae_voxel};
  std::vector<group::CenterStrategy> strategies{group::CenterStrategy::fps, group::CenterStrategy::random};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<double> data_fractions;  // nested sweep, empty to skip
  std::vector<std::size_t> epoch_budgets;  // empty to skip
  std::vector<Mode> sweep_modes{Mode::dual, Mode::mae_voxel};
  std::size_t knn_k = 5;
  ProbeOptions probe;
  std::string output_dir = "runs/ablation";
};

/// Strict JSON reader: {"base": {...} | "base_config": path, "modes", ...}.
/// A relative base_config resolves against `base_dir`.
AblationGrid ablation_grid_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
AblationGrid load_ablation_grid(const std::filesystem::path& path);

struct AblationRow {
  std::string axis;  // grid, data_fraction or epochs
  Mode mode = Mode::dual;
  group::CenterStrategy strategy = group::CenterStrategy::fps;
  double data_fraction = 1.0;
  std::size_t epochs = 0;
  std::uint64_t seed = 0;
  std::size_t train_samples = 0;
  double probe_accuracy = 0.0;
  double knn_accuracy = 0.0;
  double final_local = 0.0;
  std::optional<double> final_global;
  double final_total = 0.0;
  std::string error;  // empty on success

  bool ok() const { return error.empty(); }
};

struct AblationAggregate {
  std::string axis;
  Mode mode = Mode::dual;
  group::CenterStrategy strategy = group::CenterStrategy::fps;
  double data_fraction = 1.0;
  std::size_t epochs = 0;
  std::size_t runs = 0;
  double probe_mean = 0.0, probe_std = 0.0;
  double knn_mean = 0.0, knn_std = 0.0;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  std::vector<AblationAggregate> aggregates;
  std::vector<double> fractions;
  std::vector<std::vector<std::size_t>> subsets;  // training indices per fraction
  bool nested = true;                             // every subset contains the previous one
};

/// Prefixes of one seeded permutation of `indices`, sized ceil(f n) (at least
/// 1) for ascending fractions f.
std::vector<std::vector<std::size_t>> nested_subsets(std::span<const std::size_t> indices,
                                                     std::span<const double> fractions, std::uint64_t seed);
bool is_nested(std::span<const std::vector<std::size_t>> subsets);

/// Pretrain + probe every cell. A failing cell is recorded and the grid
/// continues. Writes report.csv, subsets.json and curve_*.pgm into out_dir.
AblationReport run_ablation(const AblationGrid& grid, const train::Dataset& data, const std::filesystem::path& out_dir,
                            const std::function<void(const AblationRow&)>& progress = {});

std::string report_csv(const AblationReport& report);

/// Mean and sample standard deviation (0 for fewer than two values).
std::pair<double, double> mean_std(std::span<const double> values);

}  // namespace evssl::eval
