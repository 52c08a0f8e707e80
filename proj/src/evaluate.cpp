#include "evssl/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "evssl/errors.hpp"
#include "evssl/image.hpp"

namespace evssl::eval {
namespace {

using json = nlohmann::json;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double cosine_distance(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return 1.0 - dot / (std::max(std::sqrt(na), 1e-8) * std::max(std::sqrt(nb), 1e-8));
}

std::size_t class_count(std::span<const int> labels) {
  int top = -1;
  for (int l : labels) {
    if (l < 0) throw Error("negative class label");
    top = std::max(top, l);
  }
  return static_cast<std::size_t>(top + 1);
}

std::string cell_name(const AblationRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s_%s_%s_f%.3g_e%zu_s%llu", r.axis.c_str(), std::string(to_string(r.mode)).c_str(),
                std::string(group::to_string(r.strategy)).c_str(), r.data_fraction, r.epochs,
                static_cast<unsigned long long>(r.seed));
  return buf;
}

void run_cell(AblationRow& row, const AblationGrid& grid, const train::Dataset& data,
              std::span<const std::size_t> train_indices, std::size_t iterations, const std::filesystem::path& dir) {
  RunConfig cfg = grid.base;
  cfg.train.mode = row.mode;
  cfg.train.seed = row.seed;
  cfg.train.epochs = row.epochs;
  cfg.train.iterations = iterations;
  cfg.train.checkpoint_every = 0;
  cfg.grouping.center_strategy = row.strategy;
  cfg.output_dir = dir.string();
  row.train_samples = train_indices.size();
  try {
    train::TrainOptions opts;
    opts.out_dir = dir;
    opts.train_indices = std::vector<std::size_t>(train_indices.begin(), train_indices.end());
    const auto state = train::train_loop(cfg, data, opts);
    if (!state.log.empty()) {
      row.final_local = state.log.back().local;
      row.final_global = state.log.back().global;
      row.final_total = state.log.back().total;
    }
    const std::string prov = dir.string() + "/checkpoints/final.ckpt";
    const auto train_set = extract_feature_set(cfg.model, state.params, data, data.indices(events::Split::train),
                                               cfg.grouping, prov);
    const auto test_set =
        extract_feature_set(cfg.model, state.params, data, data.indices(events::Split::test), cfg.grouping, prov);
    ProbeOptions probe = grid.probe;
    probe.seed = row.seed;
    row.probe_accuracy = linear_probe(train_set, test_set, probe);
    row.knn_accuracy = knn_classify(train_set, test_set, std::min(grid.knn_k, train_set.size()));
  } catch (const std::exception& e) {
    row.error = e.what();
    if (row.error.empty()) row.error = "unknown failure";
  }
}

template <typename T, typename F>
std::vector<T> parse_list(const json& j, const char* key, F&& convert) {
  std::vector<T> out;
  if (!j.is_array()) throw ConfigError(std::string("grid.") + key + ": expected an array");
  for (const auto& v : j) out.push_back(convert(v));
  return out;
}

}  // namespace

std::vector<double> extract_features(const model::ModelConfig& config, const ParamStore& params,
                                     const voxel::VoxelSample& sample, const group::GroupingSpec& grouping) {
  if (sample.feature_length != config.in_features)
    throw ConfigError("extract_features: sample has " + std::to_string(sample.feature_length) +
                      " features per voxel, model expects " + std::to_string(config.in_features));
  if (grouping.n_parts > sample.size() || grouping.k_per_part > sample.size())
    throw ConfigError("extract_features: grouping needs " + std::to_string(grouping.k_per_part) + " neighbors of " +
                      std::to_string(grouping.n_parts) + " centers in a sample of " + std::to_string(sample.size()));
  if (grouping.time_scale != config.time_scale)
    throw ConfigError("extract_features: grouping time_scale differs from the model's");
  for (const auto& [path, shape] : model::param_shapes(config)) {
    if (!model::is_encoder_param(path)) continue;
    const auto it = params.find(path);
    if (it == params.end() || it->second.shape() != shape)
      throw ConfigError("extract_features: parameter " + path + " missing or not shaped " + num::to_string(shape));
  }

  // Canonical order makes the result independent of the input voxel order;
  // entries with equal coords are identical voxels.
  std::vector<std::size_t> order(sample.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return sample.voxels[a].coord < sample.voxels[b].coord; });
  voxel::VoxelSample canon;
  canon.extent = sample.extent;
  canon.feature_length = sample.feature_length;
  for (std::size_t i : order) {
    canon.voxels.push_back(sample.voxels[i]);
    canon.coords.push_back(sample.coords[i]);
    canon.duplicated.push_back(sample.duplicated[i]);
  }
  const auto coords = group::scale_time(canon.coords, grouping.time_scale);
  const auto centers = group::farthest_point_sample(coords, grouping.n_parts);
  const auto clusters = group::knn_group(coords, centers, grouping.k_per_part);

  num::Tape tape;
  num::Binding frozen(tape, params, false);
  const std::size_t width = config.stage_channels.back();
  std::vector<double> feature(width, 0.0);
  for (const auto& members : clusters.members) {
    const num::Var z = model::encode_summary(config, frozen, canon, members);
    for (std::size_t k = 0; k < width; ++k) feature[k] += z.value()[k];
  }
  for (double& v : feature) v /= static_cast<double>(clusters.size());
  return feature;
}

FeatureSet extract_feature_set(const model::ModelConfig& config, const ParamStore& params, const train::Dataset& data,
                               std::span<const std::size_t> indices, const group::GroupingSpec& grouping,
                               std::string provenance) {
  if (indices.empty()) throw Error("extract_feature_set: no samples selected");
  FeatureSet out;
  const std::size_t width = config.stage_channels.back();
  out.features = Array::matrix(indices.size(), width);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto f = extract_features(config, params, data.samples.at(indices[r]), grouping);
    std::copy(f.begin(), f.end(), out.features.row(r).begin());
    out.labels.push_back(data.labels.at(indices[r]));
  }
  out.provenance = std::move(provenance);
  return out;
}

std::vector<int> knn_predict(const FeatureSet& train, const Array& queries, std::size_t k) {
  if (train.size() == 0 || queries.empty()) throw Error("knn_classify: empty feature set");
  if (k == 0 || k > train.size())
    throw Error("knn_classify: k = " + std::to_string(k) + " with " + std::to_string(train.size()) + " train points");
  if (queries.cols() != train.features.cols())
    throw ShapeError("knn_classify: query width " + std::to_string(queries.cols()) + " vs train width " +
                     std::to_string(train.features.cols()));
  std::vector<int> out;
  std::vector<std::pair<double, std::size_t>> d(train.size());
  for (std::size_t q = 0; q < queries.rows(); ++q) {
    for (std::size_t i = 0; i < train.size(); ++i) d[i] = {cosine_distance(queries.row(q), train.features.row(i)), i};
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
    std::map<int, std::pair<std::size_t, double>> votes;  // label -> (count, distance sum)
    for (std::size_t j = 0; j < k; ++j) {
      auto& v = votes[train.labels[d[j].second]];
      ++v.first;
      v.second += d[j].first;
    }
    int best = votes.begin()->first;
    for (const auto& [label, v] : votes) {
      const auto& b = votes.at(best);
      const double mean = v.second / static_cast<double>(v.first);
      const double best_mean = b.second / static_cast<double>(b.first);
      if (v.first > b.first || (v.first == b.first && mean < best_mean)) best = label;
    }
    out.push_back(best);
  }
  return out;
}

double knn_classify(const FeatureSet& train, const FeatureSet& test, std::size_t k) {
  if (test.size() == 0) throw Error("knn_classify: empty test set");
  return accuracy(knn_predict(train, test.features, k), test.labels);
}

double accuracy(std::span<const int> predicted, std::span<const int> labels) {
  if (predicted.size() != labels.size() || labels.empty())
    throw Error("accuracy: " + std::to_string(predicted.size()) + " predictions for " +
                std::to_string(labels.size()) + " labels");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predicted[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

Array LinearProbe::standardize(const Array& features) const {
  Array x = features;
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) x(r, c) = (x(r, c) - mean[c]) / scale[c];
  return x;
}

std::vector<int> LinearProbe::predict(const Array& features) const {
  const Array x = standardize(features);
  std::vector<int> out;
  const std::size_t classes = bias.size();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    std::size_t best = 0;
    double best_score = -INFINITY;
    for (std::size_t k = 0; k < classes; ++k) {
      double s = bias[k];
      for (std::size_t c = 0; c < x.cols(); ++c) s += x(r, c) * weight(c, k);
      if (s > best_score) {
        best_score = s;
        best = k;
      }
    }
    out.push_back(static_cast<int>(best));
  }
  return out;
}

num::Var probe_loss(const num::Var& weight, const num::Var& bias, const Array& x, const std::vector<int>& labels,
                    double weight_decay) {
  num::Tape& tape = *weight.tape();
  const num::Var logits = num::affine(tape.constant(x), weight, bias);
  const num::Var ce = num::softmax_cross_entropy(logits, labels);
  if (weight_decay == 0.0) return ce;
  return num::add(ce, num::scale(num::sum(num::mul(weight, weight)), 0.5 * weight_decay));
}

LinearProbe fit_linear_probe(const FeatureSet& train, const ProbeOptions& options) {
  if (train.size() == 0) throw Error("linear_probe: empty train set");
  const std::size_t classes = class_count(train.labels);
  if (std::set<int>(train.labels.begin(), train.labels.end()).size() < 2)
    throw Error("linear_probe: the train set holds a single class");
  const std::size_t n = train.features.rows(), dim = train.features.cols();
  LinearProbe p;
  p.mean.assign(dim, 0.0);
  p.scale.assign(dim, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < dim; ++c) p.mean[c] += train.features(r, c) / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < dim; ++c) {
      const double d = train.features(r, c) - p.mean[c];
      p.scale[c] += d * d / static_cast<double>(n);
    }
  // Constant features stay at zero after centering; a unit scale keeps them finite.
  for (double& s : p.scale) s = s > 1e-24 ? std::sqrt(s) : 1.0;
  const Array x = p.standardize(train.features);

  std::seed_seq seq{static_cast<std::uint32_t>(options.seed), static_cast<std::uint32_t>(options.seed >> 32), 0x9B0Bu};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 0.01);
  p.weight = Array::matrix(dim, classes);
  for (double& v : p.weight.values()) v = normal(rng);
  p.bias = Array({classes}, 0.0);
  for (std::size_t e = 0; e < options.epochs; ++e) {
    num::Tape tape;
    const num::Var w = tape.variable(p.weight);
    const num::Var b = tape.variable(p.bias);
    tape.backward(probe_loss(w, b, x, train.labels, options.weight_decay));
    const auto& gw = w.grad();
    const auto& gb = b.grad();
    for (std::size_t i = 0; i < p.weight.size(); ++i) p.weight[i] -= options.lr * gw[i];
    for (std::size_t i = 0; i < p.bias.size(); ++i) p.bias[i] -= options.lr * gb[i];
  }
  return p;
}

double linear_probe(const FeatureSet& train, const FeatureSet& test, const ProbeOptions& options) {
  if (test.size() == 0) throw Error("linear_probe: empty test set");
  return accuracy(fit_linear_probe(train, options).predict(test.features), test.labels);
}

std::pair<double, double> mean_std(std::span<const double> values) {
  if (values.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

std::vector<std::vector<std::size_t>> nested_subsets(std::span<const std::size_t> indices,
                                                     std::span<const double> fractions, std::uint64_t seed) {
  std::vector<std::size_t> order(indices.begin(), indices.end());
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0xF4Cu};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  double prev = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("data fraction " + fmt(f) + " outside (0, 1]");
    if (f < prev) throw ConfigError("data fractions must be ascending");
    prev = f;
    const auto n = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(f * static_cast<double>(order.size()) - 1e-9)));
    std::vector<std::size_t> subset(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
    std::sort(subset.begin(), subset.end());
    out.push_back(std::move(subset));
  }
  return out;
}

bool is_nested(std::span<const std::vector<std::size_t>> subsets) {
  for (std::size_t i = 1; i < subsets.size(); ++i)
    if (!std::includes(subsets[i].begin(), subsets[i].end(), subsets[i - 1].begin(), subsets[i - 1].end()))
      return false;
  return true;
}

AblationGrid ablation_grid_from_json(const json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ConfigError("ablation grid: expected an object");
  static const std::set<std::string> known{"base",          "base_config", "modes",  "strategies",
                                           "seeds",         "data_fractions", "epoch_budgets", "sweep_modes",
                                           "knn_k",         "probe",       "output_dir"};
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ConfigError("unknown ablation grid key '" + k + "'");
  AblationGrid g;
  try {
    if (j.contains("base") && j.contains("base_config")) throw ConfigError("grid: give base or base_config, not both");
    if (j.contains("base")) g.base = run_config_from_json(j.at("base"));
    if (j.contains("base_config")) {
      std::filesystem::path p = j.at("base_config").get<std::string>();
      if (p.is_relative()) p = base_dir / p;
      g.base = load_run_config(p);
    }
    auto to_mode = [](const json& v) { return mode_from_string(v.get<std::string>()); };
    if (j.contains("modes")) g.modes = parse_list<Mode>(j.at("modes"), "modes", to_mode);
    if (j.contains("sweep_modes")) g.sweep_modes = parse_list<Mode>(j.at("sweep_modes"), "sweep_modes", to_mode);
    if (j.contains("strategies"))
      g.strategies = parse_list<group::CenterStrategy>(j.at("strategies"), "strategies", [](const json& v) {
        return group::center_strategy_from_string(v.get<std::string>());
      });
    if (j.contains("seeds")) g.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("data_fractions")) g.data_fractions = j.at("data_fractions").get<std::vector<double>>();
    if (j.contains("epoch_budgets")) g.epoch_budgets = j.at("epoch_budgets").get<std::vector<std::size_t>>();
    if (j.contains("knn_k")) g.knn_k = j.at("knn_k").get<std::size_t>();
    if (j.contains("output_dir")) g.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("probe")) {
      const auto& p = j.at("probe");
      for (const auto& [k, v] : p.items())
        if (k != "epochs" && k != "lr" && k != "weight_decay") throw ConfigError("unknown probe key '" + k + "'");
      if (p.contains("epochs")) g.probe.epochs = p.at("epochs").get<std::size_t>();
      if (p.contains("lr")) g.probe.lr = p.at("lr").get<double>();
      if (p.contains("weight_decay")) g.probe.weight_decay = p.at("weight_decay").get<double>();
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("ablation grid: ") + e.what());
  }
  if (g.seeds.empty() || g.modes.empty() || g.strategies.empty())
    throw ConfigError("ablation grid needs at least one mode, strategy and seed");
  if (g.knn_k == 0) throw ConfigError("ablation grid: knn_k must be positive");
  return g;
}

AblationGrid load_ablation_grid(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open ablation grid " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return ablation_grid_from_json(j, path.parent_path());
}

AblationReport run_ablation(const AblationGrid& grid, const train::Dataset& data, const std::filesystem::path& out_dir,
                            const std::function<void(const AblationRow&)>& progress) {
  validate(grid.base);
  AblationReport report;
  const auto train_indices = data.indices(events::Split::train);
  const auto cells = out_dir / "cells";
  auto finish = [&](AblationRow row, std::span<const std::size_t> indices, std::size_t iterations) {
    run_cell(row, grid, data, indices, iterations, cells / cell_name(row));
    if (progress) progress(row);
    report.rows.push_back(std::move(row));
  };

  for (Mode mode : grid.modes)
    for (auto strategy : grid.strategies)
      for (std::uint64_t seed : grid.seeds) {
        AblationRow row;
        row.axis = "grid";
        row.mode = mode;
        row.strategy = strategy;
        row.epochs = grid.base.train.epochs;
        row.seed = seed;
        finish(std::move(row), train_indices, grid.base.train.iterations);
      }

  if (!grid.data_fractions.empty()) {
    report.fractions = grid.data_fractions;
    report.subsets = nested_subsets(train_indices, grid.data_fractions, grid.base.train.seed);
    report.nested = is_nested(report.subsets);
    // Every fraction trains for the iteration count of the full set.
    const std::size_t iterations = train::make_schedule(grid.base.train, train_indices.size()).total_steps;
    for (Mode mode : grid.sweep_modes)
      for (std::size_t f = 0; f < grid.data_fractions.size(); ++f)
        for (std::uint64_t seed : grid.seeds) {
          AblationRow row;
          row.axis = "data_fraction";
          row.mode = mode;
          row.strategy = grid.base.grouping.center_strategy;
          row.data_fraction = grid.data_fractions[f];
          row.epochs = grid.base.train.epochs;
          row.seed = seed;
          finish(std::move(row), report.subsets[f], iterations);
        }
  }

  for (Mode mode : grid.sweep_modes)
    for (std::size_t budget : grid.epoch_budgets)
      for (std::uint64_t seed : grid.seeds) {
        AblationRow row;
        row.axis = "epochs";
        row.mode = mode;
        row.strategy = grid.base.grouping.center_strategy;
        row.epochs = budget;
        row.seed = seed;
        finish(std::move(row), train_indices, 0);
      }

  // Aggregates in first-appearance order of each configuration.
  std::vector<std::string> keys;
  std::map<std::string, std::vector<const AblationRow*>> groups;
  for (const auto& r : report.rows) {
    AblationRow k = r;
    k.seed = 0;
    const std::string key = cell_name(k);
    if (!groups.count(key)) keys.push_back(key);
    groups[key].push_back(&r);
  }
  for (const auto& key : keys) {
    const auto& members = groups.at(key);
    AblationAggregate a;
    const AblationRow& first = *members.front();
    a.axis = first.axis;
    a.mode = first.mode;
    a.strategy = first.strategy;
    a.data_fraction = first.data_fraction;
    a.epochs = first.epochs;
    std::vector<double> probe, knn;
    for (const AblationRow* r : members)
      if (r->ok()) {
        probe.push_back(r->probe_accuracy);
        knn.push_back(r->knn_accuracy);
      }
    a.runs = probe.size();
    std::tie(a.probe_mean, a.probe_std) = mean_std(probe);
    std::tie(a.knn_mean, a.knn_std) = mean_std(knn);
    report.aggregates.push_back(a);
  }

  std::filesystem::create_directories(out_dir);
  {
    std::ofstream f(out_dir / "report.csv", std::ios::trunc);
    if (!f) throw IoError("cannot write " + (out_dir / "report.csv").string());
    f << report_csv(report);
  }
  {
    json s{{"fractions", report.fractions}, {"subsets", report.subsets}, {"nested", report.nested}};
    std::ofstream f(out_dir / "subsets.json", std::ios::trunc);
    if (!f) throw IoError("cannot write " + (out_dir / "subsets.json").string());
    f << s.dump(2) << '\n';
  }
  auto plot = [&](const std::string& axis, const char* file) {
    std::vector<image::Series> series;
    std::uint8_t shade = 0;
    for (Mode mode : grid.sweep_modes) {
      image::Series s;
      s.shade = shade;
      shade = static_cast<std::uint8_t>(shade + 90);
      for (const auto& a : report.aggregates)
        if (a.axis == axis && a.mode == mode && a.runs > 0) {
          s.x.push_back(axis == "epochs" ? static_cast<double>(a.epochs) : a.data_fraction);
          s.y.push_back(a.probe_mean);
        }
      if (!s.x.empty()) series.push_back(std::move(s));
    }
    if (!series.empty()) image::write_pgm(out_dir / file, image::line_plot(series));
  };
  plot("data_fraction", "curve_data_fraction.pgm");
  plot("epochs", "curve_epochs.pgm");
  return report;
}

std::string report_csv(const AblationReport& report) {
  std::string out =
      "kind,axis,mode,strategy,data_fraction,epochs,seed,train_samples,probe_accuracy,knn_accuracy,"
      "final_local,final_global,final_total,runs,probe_std,knn_std,error\n";
  for (const auto& r : report.rows) {
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    out += "cell," + r.axis + ',' + std::string(to_string(r.mode)) + ',' + std::string(group::to_string(r.strategy)) +
           ',' + fmt(r.data_fraction) + ',' + std::to_string(r.epochs) + ',' + std::to_string(r.seed) + ',' +
           std::to_string(r.train_samples) + ',' + fmt(r.probe_accuracy) + ',' + fmt(r.knn_accuracy) + ',' +
           fmt(r.final_local) + ',' + (r.final_global ? fmt(*r.final_global) : std::string()) + ',' +
           fmt(r.final_total) + ",1,,," + err + '\n';
  }
  for (const auto& a : report.aggregates)
    out += "aggregate," + a.axis + ',' + std::string(to_string(a.mode)) + ',' +
           std::string(group::to_string(a.strategy)) + ',' + fmt(a.data_fraction) + ',' + std::to_string(a.epochs) +
           ",,," + fmt(a.probe_mean) + ',' + fmt(a.knn_mean) + ",,,," + std::to_string(a.runs) + ',' +
           fmt(a.probe_std) + ',' + fmt(a.knn_std) + ",\n";
  return out;
}

}  // namespace evssl::eval
