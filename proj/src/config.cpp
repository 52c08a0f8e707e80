#include "evssl/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "evssl/errors.hpp"

namespace evssl {
namespace {

using json = nlohmann::json;

// Reads the keys of one JSON object, rejecting anything it was not asked for.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(name_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(name_ + "." + key + ": wrong type (" + j_.at(key).dump() + ")");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& at(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + name_ + "." + k + "'");
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::dual: return "dual";
    case Mode::local_only: return "local_only";
    case Mode::mae_voxel: return "mae_voxel";
  }
  return "?";
}

Mode mode_from_string(std::string_view name) {
  if (name == "dual") return Mode::dual;
  if (name == "local_only") return Mode::local_only;
  if (name == "mae_voxel") return Mode::mae_voxel;
  throw ConfigError("unknown mode '" + std::string(name) + "' (expected dual, local_only or mae_voxel)");
}

void validate(const RunConfig& c) {
  voxel::validate(c.voxel);
  group::validate(c.grouping);
  model::validate(c.model);
  const auto& t = c.train;
  if (t.batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(t.peak_lr > 0.0) || !(t.lr_floor >= 0.0) || t.lr_floor > t.peak_lr)
    throw ConfigError("train: need peak_lr > 0 and 0 <= lr_floor <= peak_lr");
  if (!(t.lambda >= 0.0)) throw ConfigError("train.lambda must be non-negative");
  if (!(t.ema_momentum >= 0.0 && t.ema_momentum <= 1.0)) throw ConfigError("train.ema_momentum must lie in [0, 1]");
  if (!(t.adamw.beta1 >= 0.0 && t.adamw.beta1 < 1.0 && t.adamw.beta2 >= 0.0 && t.adamw.beta2 < 1.0))
    throw ConfigError("train.adamw betas must lie in [0, 1)");
  if (!(t.adamw.eps > 0.0) || !(t.adamw.weight_decay >= 0.0))
    throw ConfigError("train.adamw: need eps > 0 and weight_decay >= 0");
  if (c.model.in_features != c.voxel.feature_length())
    throw ConfigError("model.in_features = " + std::to_string(c.model.in_features) + " but voxels carry " +
                      std::to_string(c.voxel.feature_length()) + " features");
  if (c.grouping.n_parts > c.voxel.n_sel || c.grouping.k_per_part > c.voxel.n_sel)
    throw ConfigError("grouping needs at most n_sel = " + std::to_string(c.voxel.n_sel) + " centers and neighbors");
  if (c.model.time_scale != c.grouping.time_scale)
    throw ConfigError("model.time_scale and grouping.time_scale differ");
  if (t.mode == Mode::dual && group::ratio_count(c.grouping.n_parts, c.grouping.rho2) == 0)
    throw ConfigError("dual mode needs rho2 * n_parts >= 1 masked cluster; use local_only to drop the global branch");
}

json to_json(const RunConfig& c) {
  const auto& m = c.model;
  const auto& t = c.train;
  return json{
      {"voxel", {{"v_w", c.voxel.v_w}, {"v_h", c.voxel.v_h}, {"v_t_us", c.voxel.v_t_us}, {"n_sel", c.voxel.n_sel}}},
      {"grouping",
       {{"n_parts", c.grouping.n_parts},
        {"k_per_part", c.grouping.k_per_part},
        {"rho1", c.grouping.rho1},
        {"rho2", c.grouping.rho2},
        {"center_strategy", std::string(group::to_string(c.grouping.center_strategy))},
        {"time_scale", c.grouping.time_scale}}},
      {"model",
       {{"variant", m.variant},
        {"in_features", m.in_features},
        {"stage_channels", m.stage_channels},
        {"stage_layers", m.stage_layers},
        {"heads_per_stage", m.heads_per_stage},
        {"decoder_dim", m.decoder_dim},
        {"decoder_layers", m.decoder_layers},
        {"decoder_heads", m.decoder_heads},
        {"mlp_ratio", m.mlp_ratio},
        {"downsample_ratio", m.downsample_ratio},
        {"knn_aggregation_size", m.knn_aggregation_size}}},
      {"train",
       {{"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"peak_lr", t.peak_lr},
        {"warmup_epochs", t.warmup_epochs},
        {"lr_floor", t.lr_floor},
        {"lambda", t.lambda},
        {"ema_momentum", t.ema_momentum},
        {"mode", std::string(to_string(t.mode))},
        {"adamw",
         {{"beta1", t.adamw.beta1},
          {"beta2", t.adamw.beta2},
          {"eps", t.adamw.eps},
          {"weight_decay", t.adamw.weight_decay}}},
        {"seed", t.seed},
        {"checkpoint_every", t.checkpoint_every},
        {"iterations", t.iterations}}},
      {"manifest", c.manifest},
      {"output_dir", c.output_dir}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  Section root(j, "config");
  if (root.has("voxel")) {
    Section s(root.at("voxel"), "voxel");
    s.get("v_w", c.voxel.v_w);
    s.get("v_h", c.voxel.v_h);
    s.get("v_t_us", c.voxel.v_t_us);
    s.get("n_sel", c.voxel.n_sel);
    s.finish();
  }
  if (root.has("grouping")) {
    Section s(root.at("grouping"), "grouping");
    s.get("n_parts", c.grouping.n_parts);
    s.get("k_per_part", c.grouping.k_per_part);
    s.get("rho1", c.grouping.rho1);
    s.get("rho2", c.grouping.rho2);
    std::string strategy(group::to_string(c.grouping.center_strategy));
    s.get("center_strategy", strategy);
    c.grouping.center_strategy = group::center_strategy_from_string(strategy);
    s.get("time_scale", c.grouping.time_scale);
    s.finish();
  }
  {
    const json mj = root.has("model") ? root.at("model") : json::object();
    Section s(mj, "model");
    std::string variant = c.model.variant;
    s.get("variant", variant);
    c.model = model::variant_config(variant);
    bool heads_given = s.has("heads_per_stage");
    s.get("stage_channels", c.model.stage_channels);
    s.get("stage_layers", c.model.stage_layers);
    if (!heads_given) c.model.heads_per_stage = model::default_heads(c.model.stage_channels);
    s.get("heads_per_stage", c.model.heads_per_stage);
    s.get("in_features", c.model.in_features);
    s.get("decoder_dim", c.model.decoder_dim);
    s.get("decoder_layers", c.model.decoder_layers);
    s.get("decoder_heads", c.model.decoder_heads);
    s.get("mlp_ratio", c.model.mlp_ratio);
    s.get("downsample_ratio", c.model.downsample_ratio);
    s.get("knn_aggregation_size", c.model.knn_aggregation_size);
    s.finish();
  }
  // Derived: the model reads voxel features and shares the grouping metric.
  if (!(j.contains("model") && j.at("model").contains("in_features"))) c.model.in_features = c.voxel.feature_length();
  c.model.time_scale = c.grouping.time_scale;
  if (root.has("train")) {
    Section s(root.at("train"), "train");
    auto& t = c.train;
    s.get("epochs", t.epochs);
    s.get("batch_size", t.batch_size);
    s.get("peak_lr", t.peak_lr);
    s.get("warmup_epochs", t.warmup_epochs);
    s.get("lr_floor", t.lr_floor);
    s.get("lambda", t.lambda);
    s.get("ema_momentum", t.ema_momentum);
    std::string mode(to_string(t.mode));
    s.get("mode", mode);
    t.mode = mode_from_string(mode);
    if (s.has("adamw")) {
      Section a(s.at("adamw"), "train.adamw");
      a.get("beta1", t.adamw.beta1);
      a.get("beta2", t.adamw.beta2);
      a.get("eps", t.adamw.eps);
      a.get("weight_decay", t.adamw.weight_decay);
      a.finish();
    }
    s.get("seed", t.seed);
    s.get("checkpoint_every", t.checkpoint_every);
    s.get("iterations", t.iterations);
    s.finish();
  }
  root.get("manifest", c.manifest);
  root.get("output_dir", c.output_dir);
  root.finish();
  validate(c);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

void save_run_config(const RunConfig& config, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << to_json(config).dump(2) << '\n';
  if (!f) throw IoError("failed writing " + path.string());
}

}  // namespace evssl
