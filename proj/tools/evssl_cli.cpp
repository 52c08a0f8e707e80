// evssl: data generation, pre-training, evaluation, ablation and inspection.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "evssl/checkpoint.hpp"
#include "evssl/config.hpp"
#include "evssl/errors.hpp"
#include "evssl/evaluate.hpp"
#include "evssl/events.hpp"
#include "evssl/grouping.hpp"
#include "evssl/image.hpp"
#include "evssl/pretrain.hpp"
#include "evssl/voxel.hpp"

namespace fs = std::filesystem;
using namespace evssl;

namespace {

constexpr int kUsageError = 2;
constexpr int kConfigError = 3;

struct GenArgs {
  events::GenerateOptions opts;
  std::string out;
};

struct PretrainArgs {
  std::string config;
  std::string mode;
  std::string out;
  std::string resume;
  std::string manifest;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
};

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::size_t knn = 0;
  bool probe = false;
  eval::ProbeOptions probe_opts;
};

struct AblateArgs {
  std::string grid;
  std::string out;
};

struct InspectArgs {
  std::string sample;
  std::string config;
  std::string out = ".";
  bool mask = false;
  std::string strategy = "uniform";
  std::uint64_t seed = 0;
  std::int32_t width = 0;
  std::int32_t height = 0;
};

int run_gen(const GenArgs& a) {
  const auto manifest = events::generate_dataset(a.out, a.opts);
  std::printf("wrote %zu event files and %s\n", manifest.entries.size(), (fs::path(a.out) / "manifest.json").c_str());
  return 0;
}

int run_pretrain(const PretrainArgs& a) {
  RunConfig cfg = load_run_config(a.config);
  if (!a.mode.empty()) cfg.train.mode = mode_from_string(a.mode);
  if (!a.out.empty()) cfg.output_dir = a.out;
  if (!a.manifest.empty()) cfg.manifest = a.manifest;
  if (a.epochs) cfg.train.epochs = *a.epochs;
  if (a.seed) cfg.train.seed = *a.seed;
  validate(cfg);
  if (cfg.manifest.empty()) throw ConfigError("no dataset manifest: set \"manifest\" or pass --manifest");
  const auto data = train::load_dataset(cfg.manifest, cfg.voxel);
  train::TrainOptions opts;
  opts.out_dir = cfg.output_dir;
  if (!a.resume.empty()) opts.resume = a.resume;
  opts.on_epoch = [](const train::EpochRow& r) {
    if (r.global)
      std::printf("epoch %4zu  local %.6f  global %.6f  total %.6f  lr %.3g\n", r.epoch, r.local, *r.global, r.total,
                  r.lr);
    else
      std::printf("epoch %4zu  local %.6f  total %.6f  lr %.3g\n", r.epoch, r.local, r.total, r.lr);
    std::fflush(stdout);
  };
  train::train_loop(cfg, data, opts);
  std::printf("run directory: %s\n", cfg.output_dir.c_str());
  return 0;
}

int run_eval(const EvalArgs& a) {
  auto [cfg, state] = train::from_checkpoint(ckpt::load(a.checkpoint));
  const auto data = train::load_dataset(a.manifest, cfg.voxel);
  const auto train_idx = data.indices(events::Split::train);
  const auto test_idx = data.indices(events::Split::test);
  const auto train_set = eval::extract_feature_set(cfg.model, state.params, data, train_idx, cfg.grouping, a.checkpoint);
  const auto test_set = eval::extract_feature_set(cfg.model, state.params, data, test_idx, cfg.grouping, a.checkpoint);
  if (a.knn > 0) {
    std::printf("knn k=%zu accuracy %.4f (%zu test samples)\n", a.knn,
                eval::knn_classify(train_set, test_set, a.knn), test_set.size());
  } else {
    std::printf("linear probe accuracy %.4f (%zu test samples)\n",
                eval::linear_probe(train_set, test_set, a.probe_opts), test_set.size());
  }
  return 0;
}

int run_ablate(const AblateArgs& a) {
  const auto grid = eval::load_ablation_grid(a.grid);
  const fs::path out = a.out.empty() ? fs::path(grid.output_dir) : fs::path(a.out);
  if (grid.base.manifest.empty()) throw ConfigError("ablation base config has no manifest");
  const auto data = train::load_dataset(grid.base.manifest, grid.base.voxel);
  fs::create_directories(out);
  save_run_config(grid.base, out / "config.json");
  const auto report = eval::run_ablation(grid, data, out, [](const eval::AblationRow& r) {
    if (r.ok())
      std::printf("%-13s %-10s %-6s f=%.2f e=%zu seed=%llu  probe %.4f  knn %.4f  total %.5f\n", r.axis.c_str(),
                  std::string(to_string(r.mode)).c_str(), std::string(group::to_string(r.strategy)).c_str(),
                  r.data_fraction, r.epochs, static_cast<unsigned long long>(r.seed), r.probe_accuracy,
                  r.knn_accuracy, r.final_total);
    else
      std::printf("%-13s %-10s FAILED: %s\n", r.axis.c_str(), std::string(to_string(r.mode)).c_str(),
                  r.error.c_str());
    std::fflush(stdout);
  });
  for (const auto& g : report.aggregates)
    std::printf("mean %-13s %-10s %-6s f=%.2f e=%zu  probe %.4f +- %.4f  knn %.4f +- %.4f  (n=%zu)\n",
                g.axis.c_str(), std::string(to_string(g.mode)).c_str(),
                std::string(group::to_string(g.strategy)).c_str(), g.data_fraction, g.epochs, g.probe_mean,
                g.probe_std, g.knn_mean, g.knn_std, g.runs);
  std::printf("nested subsets: %s\nreport: %s\n", report.nested ? "verified" : "VIOLATED",
              (out / "report.csv").c_str());
  return report.nested ? 0 : 1;
}

int run_inspect(const InspectArgs& a) {
  RunConfig cfg;
  if (!a.config.empty()) cfg = load_run_config(a.config);
  const auto stream = events::read_event_file(a.sample, a.width, a.height);
  const auto sample = voxel::make_sample(stream, cfg.voxel);
  const fs::path out = a.out;
  fs::create_directories(out);
  {
    std::FILE* f = std::fopen((out / "sample.csv").c_str(), "wb");
    if (!f) throw IoError("cannot write " + (out / "sample.csv").string());
    const std::string csv = voxel::sample_to_csv(sample);
    std::fwrite(csv.data(), 1, csv.size(), f);
    std::fclose(f);
  }
  std::vector<std::size_t> all;
  for (std::size_t i = 0; i < sample.size(); ++i)
    if (!sample.duplicated[i]) all.push_back(i);
  image::write_pgm(out / "occupancy.pgm", image::occupancy(sample, all));
  std::printf("%zu voxels (%zu unique), grid %dx%dx%d -> %s\n", sample.size(), all.size(), sample.extent.nx,
              sample.extent.ny, sample.extent.nt, (out / "occupancy.pgm").c_str());
  if (a.mask) {
    std::vector<std::size_t> visible;
    if (a.strategy == "uniform") {
      const auto clusters = group::group_sample(sample, cfg.grouping, a.seed);
      const auto mask = group::uniform_mask(clusters, cfg.grouping.rho1, cfg.grouping.rho2, a.seed);
      for (const auto& v : mask.visible) visible.insert(visible.end(), v.begin(), v.end());
      std::sort(visible.begin(), visible.end());
      visible.erase(std::unique(visible.begin(), visible.end()), visible.end());
    } else if (a.strategy == "random") {
      visible = group::global_random_mask(sample.size(), cfg.grouping.rho1, a.seed).visible;
    } else {
      throw ConfigError("unknown mask strategy '" + a.strategy + "' (expected uniform or random)");
    }
    const auto path = out / ("visible_" + a.strategy + ".pgm");
    image::write_pgm(path, image::occupancy(sample, visible));
    std::printf("%zu visible voxels after %s masking -> %s\n", visible.size(), a.strategy.c_str(), path.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Voxel-based self-supervised pre-training for event data"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a labeled synthetic event dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--classes", gen.opts.classes, "Number of classes (1-3)")->capture_default_str();
  gen_cmd->add_option("--per-class", gen.opts.per_class, "Samples per class")->capture_default_str();
  gen_cmd->add_option("--seed", gen.opts.seed, "Dataset seed")->capture_default_str();
  gen_cmd->add_option("--train-fraction", gen.opts.train_fraction, "Per-class train fraction")->capture_default_str();
  gen_cmd->add_option("--noise-rate", gen.opts.noise_rate, "Noise events per pixel per second")->capture_default_str();
  gen_cmd->add_option("--width", gen.opts.width, "Sensor width")->capture_default_str();
  gen_cmd->add_option("--height", gen.opts.height, "Sensor height")->capture_default_str();
  gen_cmd->add_option("--duration-us", gen.opts.duration_us, "Stream duration")->capture_default_str();

  PretrainArgs pre;
  auto* pre_cmd = app.add_subcommand("pretrain", "Self-supervised pre-training");
  pre_cmd->add_option("--config", pre.config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  pre_cmd->add_option("--mode", pre.mode, "dual | local_only | mae_voxel (overrides the config)")
      ->check(CLI::IsMember({"dual", "local_only", "mae_voxel"}));
  pre_cmd->add_option("--out", pre.out, "Run directory (overrides output_dir)");
  pre_cmd->add_option("--manifest", pre.manifest, "Dataset manifest (overrides the config)");
  pre_cmd->add_option("--resume", pre.resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
  pre_cmd->add_option("--epochs", pre.epochs, "Epoch count (overrides the config)");
  pre_cmd->add_option("--seed", pre.seed, "Training seed (overrides the config)");

  EvalArgs ev;
  auto* ev_cmd = app.add_subcommand("eval", "Frozen-feature evaluation of a checkpoint");
  ev_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ev_cmd->add_option("--manifest", ev.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  auto* knn_opt = ev_cmd->add_option("--knn", ev.knn, "kNN classification with K neighbors")->check(CLI::PositiveNumber);
  auto* probe_flag = ev_cmd->add_flag("--probe", ev.probe, "Linear probe (default)");
  knn_opt->excludes(probe_flag);
  ev_cmd->add_option("--probe-epochs", ev.probe_opts.epochs, "Probe gradient-descent epochs")->capture_default_str();
  ev_cmd->add_option("--probe-lr", ev.probe_opts.lr, "Probe learning rate")->capture_default_str();

  AblateArgs ab;
  auto* ab_cmd = app.add_subcommand("ablate", "Run an ablation grid");
  ab_cmd->add_option("--grid", ab.grid, "Grid definition (JSON)")->required()->check(CLI::ExistingFile);
  ab_cmd->add_option("--out", ab.out, "Output directory (overrides the grid)");

  InspectArgs in;
  auto* in_cmd = app.add_subcommand("inspect", "Dump a voxelized sample and mask projections");
  in_cmd->add_option("--sample", in.sample, "Event file")->required()->check(CLI::ExistingFile);
  in_cmd->add_option("--config", in.config, "Run config for voxel and grouping settings")->check(CLI::ExistingFile);
  in_cmd->add_option("--out", in.out, "Output directory")->capture_default_str();
  in_cmd->add_flag("--mask", in.mask, "Also write the visible voxels after masking");
  in_cmd->add_option("--strategy", in.strategy, "uniform (per-cluster) | random (global)")
      ->check(CLI::IsMember({"uniform", "random"}))
      ->capture_default_str();
  in_cmd->add_option("--seed", in.seed, "Mask seed")->capture_default_str();
  in_cmd->add_option("--width", in.width, "Sensor width when the file has no header");
  in_cmd->add_option("--height", in.height, "Sensor height when the file has no header");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsageError;
  }

  try {
    if (*gen_cmd) return run_gen(gen);
    if (*pre_cmd) return run_pretrain(pre);
    if (*ev_cmd) return run_eval(ev);
    if (*ab_cmd) return run_ablate(ab);
    if (*in_cmd) return run_inspect(in);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "evssl: config error: %s\n", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "evssl: error: %s\n", e.what());
    return 1;
  }
  return kUsageError;
}
