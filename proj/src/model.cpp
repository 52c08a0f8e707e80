#include "evssl/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "evssl/errors.hpp"
#include "evssl/grouping.hpp"

namespace evssl::model {
namespace {

using Shapes = std::map<std::string, num::Shape>;

void add_linear(Shapes& s, const std::string& name, std::size_t in, std::size_t out) {
  s[name + ".weight"] = {in, out};
  s[name + ".bias"] = {out};
}

void add_norm(Shapes& s, const std::string& name, std::size_t dim) {
  s[name + ".gamma"] = {dim};
  s[name + ".beta"] = {dim};
}

void add_block(Shapes& s, const std::string& name, std::size_t dim, std::size_t mlp_ratio) {
  add_norm(s, name + ".norm1", dim);
  add_linear(s, name + ".attn.qkv", dim, 3 * dim);
  add_linear(s, name + ".attn.proj", dim, dim);
  add_norm(s, name + ".norm2", dim);
  add_linear(s, name + ".mlp.fc1", dim, mlp_ratio * dim);
  add_linear(s, name + ".mlp.fc2", mlp_ratio * dim, dim);
}

void add_pos(Shapes& s, const std::string& name, std::size_t dim) {
  add_linear(s, name + ".fc1", 3, dim);
  add_linear(s, name + ".fc2", dim, dim);
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

Var linear(Binding& p, const std::string& name, const Var& x) {
  return num::affine(x, p(name + ".weight"), p(name + ".bias"));
}

Var norm(Binding& p, const std::string& name, const Var& x) {
  return num::layer_norm(x, p(name + ".gamma"), p(name + ".beta"));
}

Var constant_coords(num::Tape& tape, std::span<const Point3> coords) {
  Array a = Array::matrix(coords.size(), 3);
  for (std::size_t i = 0; i < coords.size(); ++i)
    for (std::size_t k = 0; k < 3; ++k) a(i, k) = coords[i][k];
  return tape.constant(std::move(a));
}

// Multi-head self-attention; `allowed` (row-major, tokens x tokens) restricts
// each query to its neighbourhood, nullptr means full attention.
Var attention(Binding& p, const std::string& name, const Var& x, std::size_t heads,
              const std::vector<std::uint8_t>* allowed) {
  const std::size_t dim = x.value().cols();
  const std::size_t hd = dim / heads;
  const Var qkv = linear(p, name + ".qkv", x);
  const double inv = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Var q = num::slice_cols(qkv, h * hd, hd);
    const Var k = num::slice_cols(qkv, dim + h * hd, hd);
    const Var v = num::slice_cols(qkv, 2 * dim + h * hd, hd);
    const Var scores = num::scale(num::matmul_nt(q, k), inv);
    const Var probs = allowed ? num::masked_softmax(scores, *allowed) : num::softmax(scores, 1);
    outs.push_back(num::matmul(probs, v));
  }
  const Var merged = heads == 1 ? outs.front() : num::concat_cols(outs);
  return linear(p, name + ".proj", merged);
}

Var block(Binding& p, const std::string& name, Var x, std::size_t heads, const std::vector<std::uint8_t>* allowed) {
  x = num::add(x, attention(p, name + ".attn", norm(p, name + ".norm1", x), heads, allowed));
  const Var h = num::gelu(linear(p, name + ".mlp.fc1", norm(p, name + ".norm2", x)));
  return num::add(x, linear(p, name + ".mlp.fc2", h));
}

std::vector<std::uint8_t> knn_mask(std::span<const Point3> coords, std::size_t k) {
  const std::size_t n = coords.size();
  std::vector<std::uint8_t> allowed(n * n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j : group::nearest(coords, coords[i], k, i)) allowed[i * n + j] = 1;
  return allowed;
}

// Full-attention transformer over the concatenation of known and query
// tokens; returns the final-normed query rows.
Var decoder_stack(const ModelConfig& c, Binding& p, const std::string& prefix, const Var& known,
                  std::span<const Point3> query_coords) {
  const std::size_t n_known = known.value().rows();
  const std::size_t n_query = query_coords.size();
  const Var tokens =
      num::add(num::broadcast_rows(p(prefix + ".mask_token"), n_query),
               positional_embedding(p, prefix + ".pos", query_coords));
  Var x = num::concat_rows({known, tokens});
  for (std::size_t l = 0; l < c.decoder_layers; ++l)
    x = block(p, prefix + ".block" + std::to_string(l), x, c.decoder_heads, nullptr);
  x = norm(p, prefix + ".norm", x);
  std::vector<std::size_t> rows(n_query);
  for (std::size_t i = 0; i < n_query; ++i) rows[i] = n_known + i;
  return linear(p, prefix + ".head", num::gather_rows(x, rows));
}

}  // namespace

std::array<std::size_t, kStages> default_heads(const std::array<std::size_t, kStages>& channels) {
  std::array<std::size_t, kStages> h{};
  for (std::size_t j = 0; j < kStages; ++j) {
    h[j] = std::max<std::size_t>(1, channels[j] / 32);
    while (channels[j] % h[j] != 0) --h[j];
  }
  return h;
}

ModelConfig variant_config(std::string_view variant) {
  ModelConfig c;
  c.variant = std::string(variant);
  if (variant == "small") {
    c.stage_channels = {64, 128, 256, 512};
    c.stage_layers = {1, 1, 1, 1};
  } else if (variant == "base") {
    c.stage_channels = {96, 192, 384, 768};
    c.stage_layers = {2, 2, 2, 2};
    c.decoder_dim = 384;
  } else if (variant == "tiny") {
    c.stage_channels = {8, 16, 32, 64};
    c.stage_layers = {1, 1, 1, 1};
    c.decoder_dim = 32;
  } else {
    throw ConfigError("unknown model variant '" + std::string(variant) + "' (expected small, base or tiny)");
  }
  c.heads_per_stage = default_heads(c.stage_channels);
  return c;
}

void validate(const ModelConfig& c) {
  if (c.in_features == 0) throw ConfigError("model.in_features must be positive");
  for (std::size_t j = 0; j < kStages; ++j) {
    if (c.stage_channels[j] == 0) throw ConfigError("stage channels must be positive");
    if (j > 0 && c.stage_channels[j] <= c.stage_channels[j - 1])
      throw ConfigError("stage channels must be strictly increasing");
    if (c.stage_layers[j] == 0) throw ConfigError("every stage needs at least one layer");
    if (c.heads_per_stage[j] == 0 || c.stage_channels[j] % c.heads_per_stage[j] != 0)
      throw ConfigError("stage " + std::to_string(j + 1) + ": " + std::to_string(c.heads_per_stage[j]) +
                        " heads do not divide " + std::to_string(c.stage_channels[j]) + " channels");
  }
  if (c.decoder_dim == 0 || c.decoder_layers == 0) throw ConfigError("decoder width and depth must be positive");
  if (c.decoder_heads == 0 || c.decoder_dim % c.decoder_heads != 0)
    throw ConfigError("decoder heads must divide decoder_dim");
  if (c.mlp_ratio == 0) throw ConfigError("mlp_ratio must be positive");
  if (!(c.downsample_ratio > 0.0 && c.downsample_ratio <= 1.0))
    throw ConfigError("downsample_ratio must lie in (0, 1]");
  if (c.knn_aggregation_size == 0) throw ConfigError("knn_aggregation_size must be positive");
  if (!(c.time_scale > 0.0) || !std::isfinite(c.time_scale)) throw ConfigError("model time_scale must be positive");
}

std::map<std::string, num::Shape> param_shapes(const ModelConfig& c) {
  validate(c);
  Shapes s;
  const auto& ch = c.stage_channels;
  add_linear(s, "encoder.embed", c.in_features, ch[0]);
  add_pos(s, "encoder.pos", ch[0]);
  for (std::size_t j = 0; j < kStages; ++j) {
    const std::string stage = "encoder.stage" + std::to_string(j);
    if (j > 0) add_linear(s, stage + ".down", ch[j - 1], ch[j]);
    for (std::size_t l = 0; l < c.stage_layers[j]; ++l)
      add_block(s, stage + ".block" + std::to_string(l), ch[j], c.mlp_ratio);
    add_norm(s, stage + ".norm", ch[j]);
  }
  std::size_t concat = 0;
  for (std::size_t w : ch) concat += w;
  const std::size_t d = c.decoder_dim;

  add_linear(s, "decoder_local.in", concat, d);
  add_pos(s, "decoder_local.pos", d);
  s["decoder_local.mask_token"] = {d};
  for (std::size_t l = 0; l < c.decoder_layers; ++l)
    add_block(s, "decoder_local.block" + std::to_string(l), d, c.mlp_ratio);
  add_norm(s, "decoder_local.norm", d);
  add_linear(s, "decoder_local.head", d, c.in_features);

  add_linear(s, "decoder_global.in", ch[3], d);
  add_pos(s, "decoder_global.pos", d);
  s["decoder_global.mask_token"] = {d};
  for (std::size_t l = 0; l < c.decoder_layers; ++l)
    add_block(s, "decoder_global.block" + std::to_string(l), d, c.mlp_ratio);
  add_norm(s, "decoder_global.norm", d);
  add_linear(s, "decoder_global.head", d, ch[3]);
  return s;
}

std::size_t param_count(const ModelConfig& c) {
  std::size_t n = 0;
  for (const auto& [name, shape] : param_shapes(c)) n += num::element_count(shape);
  return n;
}

ParamStore init_params(const ModelConfig& c, std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x1A17u};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto trunc = [&] {
    double z = normal(rng);
    while (std::abs(z) > 2.0) z = normal(rng);
    return 0.02 * z;
  };
  ParamStore out;
  // std::map iteration keeps the draw order independent of insertion order.
  for (const auto& [name, shape] : param_shapes(c)) {
    Array a(shape, 0.0);
    if (ends_with(name, ".gamma")) {
      for (double& v : a.values()) v = 1.0;
    } else if (ends_with(name, ".weight") || ends_with(name, "mask_token")) {
      for (double& v : a.values()) v = trunc();
    }
    out.emplace(name, std::move(a));
  }
  return out;
}

bool is_encoder_param(const std::string& path) { return path.rfind("encoder.", 0) == 0; }

std::array<std::size_t, kStages> stage_token_counts(const ModelConfig& c, std::size_t tokens) {
  std::array<std::size_t, kStages> n{};
  double scale = 1.0;
  for (std::size_t j = 0; j < kStages; ++j) {
    n[j] = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(static_cast<double>(tokens) * scale - 1e-9)));
    if (j > 0) n[j] = std::min(n[j], n[j - 1]);
    scale *= c.downsample_ratio;
  }
  return n;
}

Var positional_embedding(Binding& p, const std::string& prefix, std::span<const Point3> coords) {
  const Var xyz = constant_coords(p.tape(), coords);
  return linear(p, prefix + ".fc2", num::gelu(linear(p, prefix + ".fc1", xyz)));
}

TokenSet embed_voxels(const ModelConfig& c, Binding& p, const Array& features, std::span<const Point3> coords) {
  if (features.rank() != 2 || features.rows() != coords.size() || features.cols() != c.in_features)
    throw ShapeError("embed_voxels: features " + num::to_string(features.shape()) + " for " +
                     std::to_string(coords.size()) + " coordinates and " + std::to_string(c.in_features) +
                     " input features");
  if (coords.empty()) throw ShapeError("embed_voxels: no tokens");
  TokenSet t;
  const Var x = p.tape().constant(features);
  t.features = num::add(linear(p, "encoder.embed", x), positional_embedding(p, "encoder.pos", coords));
  t.coords.assign(coords.begin(), coords.end());
  t.provenance.resize(coords.size());
  for (std::size_t i = 0; i < coords.size(); ++i) t.provenance[i] = i;
  return t;
}

EncoderOutput encoder_forward(const ModelConfig& c, Binding& p, TokenSet tokens) {
  const auto counts = stage_token_counts(c, tokens.size());
  EncoderOutput out;
  out.stages.reserve(kStages);
  TokenSet cur = std::move(tokens);
  for (std::size_t j = 0; j < kStages; ++j) {
    const std::string stage = "encoder.stage" + std::to_string(j);
    auto scaled = group::scale_time(cur.coords, c.time_scale);
    if (j > 0) {
      const auto keep = group::farthest_point_sample(scaled, counts[j]);
      TokenSet next;
      next.features = linear(p, stage + ".down", num::gather_rows(cur.features, keep));
      for (std::size_t i : keep) {
        next.coords.push_back(cur.coords[i]);
        next.provenance.push_back(cur.provenance[i]);
      }
      cur = std::move(next);
      scaled = group::scale_time(cur.coords, c.time_scale);
    }
    const std::size_t k = std::min(c.knn_aggregation_size, cur.size());
    std::vector<std::uint8_t> allowed;
    if (k < cur.size()) allowed = knn_mask(scaled, k);
    for (std::size_t l = 0; l < c.stage_layers[j]; ++l)
      cur.features = block(p, stage + ".block" + std::to_string(l), cur.features, c.heads_per_stage[j],
                           allowed.empty() ? nullptr : &allowed);
    cur.features = norm(p, stage + ".norm", cur.features);
    out.stages.push_back(cur);
  }
  return out;
}

Array interpolation_weights(std::span<const Point3> sources, std::span<const Point3> targets, double time_scale) {
  if (sources.empty()) throw ShapeError("interpolation_weights: no source points");
  const auto src = group::scale_time(sources, time_scale);
  const auto dst = group::scale_time(targets, time_scale);
  const std::size_t k = std::min<std::size_t>(3, src.size());
  Array w = Array::matrix(dst.size(), src.size());
  for (std::size_t t = 0; t < dst.size(); ++t) {
    const auto nn = group::nearest(src, dst[t], k);
    const double d0 = group::distance2(src[nn[0]], dst[t]);
    if (d0 == 0.0) {
      w(t, nn[0]) = 1.0;
      continue;
    }
    double total = 0.0;
    for (std::size_t i : nn) total += 1.0 / group::distance2(src[i], dst[t]);
    for (std::size_t i : nn) w(t, i) = (1.0 / group::distance2(src[i], dst[t])) / total;
  }
  return w;
}

Var interpolate_upsample(const ModelConfig& c, Binding& p, const EncoderOutput& stages, std::span<const Point3> targets) {
  std::vector<Var> parts;
  parts.reserve(stages.stages.size());
  for (const TokenSet& s : stages.stages) {
    const Var w = p.tape().constant(interpolation_weights(s.coords, targets, c.time_scale));
    parts.push_back(num::matmul(w, s.features));
  }
  return linear(p, "decoder_local.in", num::concat_cols(parts));
}

std::optional<Var> local_decode(const ModelConfig& c, Binding& p, const Var& visible_tokens,
                                std::span<const Point3> visible_coords, std::span<const Point3> masked_coords) {
  if (visible_tokens.value().rows() != visible_coords.size())
    throw ShapeError("local_decode: " + std::to_string(visible_tokens.value().rows()) + " tokens for " +
                     std::to_string(visible_coords.size()) + " coordinates");
  if (masked_coords.empty()) return std::nullopt;
  const Var known = num::add(visible_tokens, positional_embedding(p, "decoder_local.pos", visible_coords));
  return decoder_stack(c, p, "decoder_local", known, masked_coords);
}

Var summarize(const EncoderOutput& stages) { return num::mean_rows(stages.last().features); }

Var global_decode(const ModelConfig& c, Binding& p, const Var& visible_summaries,
                  std::span<const Point3> visible_centers, std::span<const Point3> masked_centers) {
  if (visible_summaries.value().rows() != visible_centers.size() || visible_centers.empty())
    throw ShapeError("global_decode: " + std::to_string(visible_summaries.value().rows()) + " summaries for " +
                     std::to_string(visible_centers.size()) + " visible centers");
  if (masked_centers.empty()) throw ShapeError("global_decode: no masked cluster to predict");
  const Var known = num::add(linear(p, "decoder_global.in", visible_summaries),
                             positional_embedding(p, "decoder_global.pos", visible_centers));
  return decoder_stack(c, p, "decoder_global", known, masked_centers);
}

Array gather_features(const voxel::VoxelSample& sample, std::span<const std::size_t> indices) {
  Array a = Array::matrix(indices.size(), sample.feature_length);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& f = sample.voxels.at(indices[r]).feature;
    std::copy(f.begin(), f.end(), a.data() + r * sample.feature_length);
  }
  return a;
}

std::vector<Point3> gather_coords(const voxel::VoxelSample& sample, std::span<const std::size_t> indices) {
  std::vector<Point3> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(sample.coords.at(i));
  return out;
}

Var encode_summary(const ModelConfig& c, Binding& p, const voxel::VoxelSample& sample,
                   std::span<const std::size_t> indices) {
  const auto coords = gather_coords(sample, indices);
  return summarize(encoder_forward(c, p, embed_voxels(c, p, gather_features(sample, indices), coords)));
}

}  // namespace evssl::model
