#include "evssl/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "evssl/errors.hpp"

namespace evssl::train {
namespace {

using json = nlohmann::json;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void scale_in_place(ParamStore& store, double c) {
  for (auto& [path, a] : store)
    for (double& v : a.values()) v *= c;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("failed writing " + path.string());
}

SampleLoss clustered_loss(const RunConfig& c, Binding& online, Binding& momentum, const voxel::VoxelSample& sample,
                          std::uint64_t seed) {
  const auto& mc = c.model;
  const bool dual = c.train.mode == Mode::dual;
  const auto clusters = group::group_sample(sample, c.grouping, seed);
  const auto mask = group::uniform_mask(clusters, c.grouping.rho1, dual ? c.grouping.rho2 : 0.0, seed);
  num::Tape& tape = online.tape();

  std::vector<Var> predictions;
  std::vector<Array> targets;
  std::vector<std::vector<std::uint8_t>> duplicated;
  std::vector<Var> visible_summaries;
  std::vector<model::Point3> visible_centers;
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    const auto& vis = mask.visible[i];
    const auto& msk = mask.masked[i];
    const auto vis_coords = model::gather_coords(sample, vis);
    const auto stages =
        model::encoder_forward(mc, online, model::embed_voxels(mc, online, model::gather_features(sample, vis), vis_coords));
    const Var up = model::interpolate_upsample(mc, online, stages, vis_coords);
    if (auto pred = model::local_decode(mc, online, up, vis_coords, model::gather_coords(sample, msk))) {
      predictions.push_back(*pred);
      targets.push_back(model::gather_features(sample, msk));
      std::vector<std::uint8_t> dup;
      dup.reserve(msk.size());
      for (std::size_t m : msk) dup.push_back(sample.duplicated[m]);
      duplicated.push_back(std::move(dup));
    }
    if (dual && !mask.is_globally_masked(i)) {
      visible_summaries.push_back(model::summarize(stages));
      visible_centers.push_back(sample.coords[clusters.centers[i]]);
    }
  }
  SampleLoss out;
  out.local = local_loss(tape, predictions, targets, duplicated);
  if (dual) {
    std::vector<model::Point3> masked_centers;
    for (std::size_t i : mask.global_masked) masked_centers.push_back(sample.coords[clusters.centers[i]]);
    const Var z_visible = num::concat_rows(visible_summaries);
    const Var z_pred = model::global_decode(mc, online, z_visible, visible_centers, masked_centers);
    const Var z_target = momentum_targets(mc, momentum, sample, clusters, mask.global_masked);
    out.global = global_loss(z_pred, z_target);
  }
  out.total = total_loss(out.local, out.global, c.train.lambda);
  return out;
}

SampleLoss mae_voxel_loss(const RunConfig& c, Binding& online, const voxel::VoxelSample& sample, std::uint64_t seed) {
  const auto& mc = c.model;
  const auto split = group::global_random_mask(sample.size(), c.grouping.rho1, seed);
  const auto vis_coords = model::gather_coords(sample, split.visible);
  const auto stages = model::encoder_forward(
      mc, online, model::embed_voxels(mc, online, model::gather_features(sample, split.visible), vis_coords));
  const Var up = model::interpolate_upsample(mc, online, stages, vis_coords);
  const auto pred = model::local_decode(mc, online, up, vis_coords, model::gather_coords(sample, split.masked));
  std::vector<std::uint8_t> dup;
  for (std::size_t m : split.masked) dup.push_back(sample.duplicated[m]);
  const std::vector<Var> preds{*pred};
  const std::vector<Array> targets{model::gather_features(sample, split.masked)};
  const std::vector<std::vector<std::uint8_t>> dups{std::move(dup)};
  SampleLoss out;
  out.local = local_loss(online.tape(), preds, targets, dups);
  out.total = out.local;
  return out;
}

json row_to_json(const EpochRow& r) {
  json j{{"epoch", r.epoch}, {"local", r.local}, {"total", r.total}, {"lr", r.lr}};
  j["global"] = r.global ? json(*r.global) : json(nullptr);
  return j;
}

EpochRow row_from_json(const json& j) {
  EpochRow r;
  r.epoch = j.at("epoch").get<std::size_t>();
  r.local = j.at("local").get<double>();
  r.total = j.at("total").get<double>();
  r.lr = j.at("lr").get<double>();
  if (!j.at("global").is_null()) r.global = j.at("global").get<double>();
  return r;
}

}  // namespace

std::vector<std::size_t> Dataset::indices(events::Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i)
    if (splits[i] == split) out.push_back(i);
  return out;
}

Dataset load_dataset(const std::filesystem::path& manifest_path, const voxel::VoxelSpec& spec) {
  const auto manifest = events::load_manifest(manifest_path);
  const auto base = manifest_path.parent_path();
  Dataset d;
  d.class_names = manifest.class_names;
  for (const auto& entry : manifest.entries) {
    const auto stream = events::load_entry(entry, base);
    try {
      d.samples.push_back(voxel::make_sample(stream, spec));
    } catch (const EmptySampleError&) {
      throw EmptySampleError("manifest entry '" + entry.path + "' produced no events");
    }
    d.labels.push_back(entry.label);
    d.splits.push_back(entry.split);
  }
  return d;
}

Var local_loss(num::Tape& tape, std::span<const Var> predictions, std::span<const Array> targets,
               std::span<const std::vector<std::uint8_t>> duplicated) {
  if (predictions.size() != targets.size() || predictions.size() != duplicated.size())
    throw ShapeError("local_loss: " + std::to_string(predictions.size()) + " predictions, " +
                     std::to_string(targets.size()) + " targets, " + std::to_string(duplicated.size()) + " flag sets");
  std::vector<Var> terms;
  std::size_t kept_rows = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const Var& pred = predictions[i];
    if (pred.shape() != targets[i].shape())
      throw ShapeError("local_loss: prediction " + num::to_string(pred.shape()) + " vs target " +
                       num::to_string(targets[i].shape()));
    if (duplicated[i].size() != targets[i].rows())
      throw ShapeError("local_loss: " + std::to_string(duplicated[i].size()) + " flags for " +
                       std::to_string(targets[i].rows()) + " rows");
    std::vector<std::size_t> keep;
    for (std::size_t r = 0; r < duplicated[i].size(); ++r)
      if (!duplicated[i][r]) keep.push_back(r);
    if (keep.empty()) continue;
    kept_rows += keep.size();
    const Var target = tape.constant(targets[i]);
    if (keep.size() == duplicated[i].size()) {
      terms.push_back(num::squared_error(pred, target));
    } else {
      terms.push_back(num::squared_error(num::gather_rows(pred, keep), num::gather_rows(target, keep)));
    }
  }
  if (kept_rows == 0) return tape.constant(Array::scalar(0.0));
  Var acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = num::add(acc, terms[i]);
  return num::scale(acc, 1.0 / static_cast<double>(kept_rows));
}

Var global_loss(const Var& predictions, const Var& targets) { return num::cosine_distance_rows(targets, predictions); }

Var total_loss(const Var& local, const std::optional<Var>& global, double lambda) {
  if (!global) return local;
  return num::add(local, num::scale(*global, lambda));
}

Var momentum_targets(const model::ModelConfig& config, Binding& momentum, const voxel::VoxelSample& sample,
                     const group::ClusterSet& clusters, std::span<const std::size_t> cluster_ids) {
  std::vector<Var> rows;
  rows.reserve(cluster_ids.size());
  for (std::size_t i : cluster_ids) rows.push_back(model::encode_summary(config, momentum, sample, clusters.members.at(i)));
  if (rows.empty()) throw ShapeError("momentum_targets: no cluster requested");
  return num::detach(rows.size() == 1 ? rows.front() : num::concat_rows(rows));
}

SampleLoss sample_loss(const RunConfig& config, Binding& online, Binding& momentum, const voxel::VoxelSample& sample,
                       std::uint64_t seed) {
  if (config.train.mode == Mode::mae_voxel) return mae_voxel_loss(config, online, sample, seed);
  return clustered_loss(config, online, momentum, sample, seed);
}

TrainState init_state(const RunConfig& config) {
  TrainState s;
  s.params = model::init_params(config.model, config.train.seed);
  s.ema.shadow = s.params;
  s.ema.momentum = config.train.ema_momentum;
  s.opt = num::OptimizerState::fresh(s.params, config.train.adamw);
  return s;
}

Schedule make_schedule(const TrainConfig& train, std::size_t train_samples) {
  if (train_samples == 0) throw ConfigError("no training samples");
  Schedule s;
  s.steps_per_epoch = (train_samples + train.batch_size - 1) / train.batch_size;
  if (train.iterations > 0) {
    s.total_steps = train.iterations;
    s.epochs = static_cast<std::size_t>((s.total_steps + s.steps_per_epoch - 1) / s.steps_per_epoch);
  } else {
    s.epochs = train.epochs;
    s.total_steps = s.steps_per_epoch * train.epochs;
  }
  s.warmup_steps = s.steps_per_epoch * train.warmup_epochs;
  return s;
}

StepMetrics train_step(TrainState& state, const RunConfig& config, std::span<const voxel::VoxelSample* const> batch,
                       std::span<const std::uint64_t> mask_seeds, const Schedule& schedule) {
  if (batch.empty() || batch.size() != mask_seeds.size())
    throw Error("train_step: " + std::to_string(batch.size()) + " samples with " + std::to_string(mask_seeds.size()) +
                " mask seeds");
  StepMetrics m;
  m.step = state.step + 1;
  m.lr = num::cosine_lr(m.step, schedule.warmup_steps, schedule.total_steps, config.train.peak_lr,
                        config.train.lr_floor);
  const double inv = 1.0 / static_cast<double>(batch.size());
  ParamStore grads = num::zeros_like(state.params);
  double global_sum = 0.0;
  bool has_global = false;
  auto diagnose = [&](const std::string& what) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "step %llu, lr %.6g, local %.6g, global %.6g: ",
                  static_cast<unsigned long long>(m.step), m.lr, m.local, global_sum);
    return std::string(buf) + what;
  };
  try {
    for (std::size_t b = 0; b < batch.size(); ++b) {
      num::Tape tape;
      Binding online(tape, state.params, true);
      Binding momentum(tape, state.ema.shadow, false);
      const SampleLoss loss = sample_loss(config, online, momentum, *batch[b], mask_seeds[b]);
      tape.backward(loss.total);
      num::accumulate(grads, online.gradients());
      m.local += loss.local.value().item() * inv;
      m.total += loss.total.value().item() * inv;
      if (loss.global) {
        has_global = true;
        global_sum += loss.global->value().item() * inv;
      }
    }
  } catch (const NumericError& e) {
    throw NumericError(diagnose(e.what()));
  }
  if (has_global) m.global = global_sum;
  if (!std::isfinite(m.total)) throw NumericError(diagnose("non-finite loss"));
  scale_in_place(grads, inv);
  num::adamw_step(state.params, grads, state.opt, m.lr);
  num::ema_update(state.ema, state.params);
  state.step = m.step;
  return m;
}

std::uint64_t mask_seed(std::uint64_t seed, std::size_t epoch, std::size_t index) {
  return splitmix(splitmix(splitmix(seed ^ 0x6d61736bULL) + epoch) + index);
}

std::vector<std::size_t> epoch_order(std::span<const std::size_t> indices, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(indices.begin(), indices.end());
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0xDA7Au};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::string metrics_csv(std::span<const EpochRow> rows) {
  std::string out = "epoch,l_local,l_global,l_total,lr\n";
  for (const auto& r : rows)
    out += std::to_string(r.epoch) + ',' + fmt(r.local) + ',' + (r.global ? fmt(*r.global) : std::string()) + ',' +
           fmt(r.total) + ',' + fmt(r.lr) + '\n';
  return out;
}

ckpt::Checkpoint to_checkpoint(const RunConfig& config, const TrainState& state) {
  ckpt::Checkpoint c;
  c.meta["config"] = to_json(config);
  c.meta["epoch"] = state.epoch;
  c.meta["step"] = state.step;
  c.meta["optimizer_step"] = state.opt.step;
  c.meta["ema_momentum"] = state.ema.momentum;
  json log = json::array();
  for (const auto& r : state.log) log.push_back(row_to_json(r));
  c.meta["log"] = std::move(log);
  c.groups["model"] = state.params;
  c.groups["ema"] = state.ema.shadow;
  c.groups["adam_m"] = state.opt.m;
  c.groups["adam_v"] = state.opt.v;
  return c;
}

std::pair<RunConfig, TrainState> from_checkpoint(const ckpt::Checkpoint& c) {
  try {
    RunConfig config = run_config_from_json(c.meta.at("config"));
    TrainState s;
    s.params = c.groups.at("model");
    s.ema.shadow = c.groups.at("ema");
    s.ema.momentum = c.meta.at("ema_momentum").get<double>();
    s.opt.hyper = config.train.adamw;
    s.opt.m = c.groups.at("adam_m");
    s.opt.v = c.groups.at("adam_v");
    s.opt.step = c.meta.at("optimizer_step").get<std::uint64_t>();
    s.epoch = c.meta.at("epoch").get<std::size_t>();
    s.step = c.meta.at("step").get<std::uint64_t>();
    for (const auto& r : c.meta.at("log")) s.log.push_back(row_from_json(r));
    const auto shapes = model::param_shapes(config.model);
    for (const auto& [path, shape] : shapes) {
      const auto it = s.params.find(path);
      if (it == s.params.end() || it->second.shape() != shape)
        throw ConfigError("checkpoint parameter '" + path + "' missing or mis-shaped for its echoed model config");
    }
    if (s.params.size() != shapes.size()) throw ConfigError("checkpoint carries parameters unknown to the model");
    return {std::move(config), std::move(s)};
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint metadata incomplete: ") + e.what());
  } catch (const std::out_of_range&) {
    throw IoError("checkpoint lacks a tensor group (model, ema, adam_m, adam_v)");
  }
}

TrainState train_loop(const RunConfig& config, const Dataset& data, const TrainOptions& options) {
  validate(config);
  const std::vector<std::size_t> indices =
      options.train_indices ? *options.train_indices : data.indices(events::Split::train);
  const Schedule schedule = make_schedule(config.train, indices.size());

  TrainState state;
  if (options.resume) {
    auto [saved, resumed] = from_checkpoint(ckpt::load(*options.resume));
    saved.output_dir = config.output_dir;
    if (!(saved == config))
      throw ConfigError("resume: checkpoint " + options.resume->string() + " was written by a different config");
    state = std::move(resumed);
  } else {
    state = init_state(config);
  }

  const bool write = !options.out_dir.empty();
  const auto ckpt_dir = options.out_dir / "checkpoints";
  if (write) {
    std::filesystem::create_directories(ckpt_dir);
    save_run_config(config, options.out_dir / "config.json");
    write_text(options.out_dir / "metrics.csv", metrics_csv(state.log));
  }

  for (std::size_t epoch = state.epoch + 1; epoch <= schedule.epochs; ++epoch) {
    const auto order = epoch_order(indices, config.train.seed, epoch);
    EpochRow row;
    row.epoch = epoch;
    double global_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t begin = 0; begin < order.size() && state.step < schedule.total_steps;
         begin += config.train.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.train.batch_size);
      std::vector<const voxel::VoxelSample*> batch;
      std::vector<std::uint64_t> seeds;
      for (std::size_t k = begin; k < end; ++k) {
        batch.push_back(&data.samples.at(order[k]));
        seeds.push_back(mask_seed(config.train.seed, epoch, order[k]));
      }
      const StepMetrics m = train_step(state, config, batch, seeds, schedule);
      row.local += m.local;
      row.total += m.total;
      row.lr = m.lr;
      if (m.global) global_sum += *m.global;
      ++steps;
    }
    if (steps > 0) {
      row.local /= static_cast<double>(steps);
      row.total /= static_cast<double>(steps);
      if (config.train.mode == Mode::dual) row.global = global_sum / static_cast<double>(steps);
    }
    state.epoch = epoch;
    state.log.push_back(row);
    if (options.on_epoch) options.on_epoch(row);
    if (write) {
      write_text(options.out_dir / "metrics.csv", metrics_csv(state.log));
      if (config.train.checkpoint_every > 0 && epoch % config.train.checkpoint_every == 0) {
        char name[32];
        std::snprintf(name, sizeof name, "epoch_%04zu.ckpt", epoch);
        ckpt::save(ckpt_dir / name, to_checkpoint(config, state));
      }
    }
  }
  if (write) ckpt::save(ckpt_dir / "final.ckpt", to_checkpoint(config, state));
  return state;
}

}  // namespace evssl::train
