#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evssl/numerics/ops.hpp"
#include "evssl/numerics/params.hpp"
#include "evssl/voxel.hpp"

namespace evssl::model {

using num::Array;
using num::Binding;
using num::ParamStore;
using num::Var;
using voxel::Point3;

inline constexpr std::size_t kStages = 4;

struct ModelConfig {
  std::string variant = "small";
  std::size_t in_features = 25;  // v_w * v_h
  std::array<std::size_t, kStages> stage_channels{64, 128, 256, 512};
  std::array<std::size_t, kStages> stage_layers{1, 1, 1, 1};
  std::array<std::size_t, kStages> heads_per_stage{2, 4, 8, 16};
  std::size_t decoder_dim = 256;
  std::size_t decoder_layers = 2;
  std::size_t decoder_heads = 4;
  std::size_t mlp_ratio = 4;
  double downsample_ratio = 0.5;
  std::size_t knn_aggregation_size = 8;
  double time_scale = 1.0;  // weight of the temporal axis in every neighbor search

  bool operator==(const ModelConfig&) const = default;
};

/// Named variants: small [64..512] x [1,1,1,1], base [96..768] x [2,2,2,2],
/// tiny [8..64] x [1,1,1,1]. Heads default to channels / 32 (at least 1).
ModelConfig variant_config(std::string_view variant);
std::array<std::size_t, kStages> default_heads(const std::array<std::size_t, kStages>& channels);

void validate(const ModelConfig& config);

/// Shape of every learned tensor, keyed by parameter path.
std::map<std::string, num::Shape> param_shapes(const ModelConfig& config);
std::size_t param_count(const ModelConfig& config);

/// Truncated-normal (std 0.02, cut at 2 std) weights and mask tokens, zero
/// biases, unit layer-norm gains.
ParamStore init_params(const ModelConfig& config, std::uint64_t seed);

/// Paths read by the encoder (embedding, stages, downsampling).
bool is_encoder_param(const std::string& path);

struct TokenSet {
  Var features;  // [tokens x channels]
  std::vector<Point3> coords;
  std::vector<std::size_t> provenance;  // row of the stage-1 token set each token came from

  std::size_t size() const { return coords.size(); }
};

struct EncoderOutput {
  std::vector<TokenSet> stages;
  const TokenSet& last() const { return stages.back(); }
};

/// Token count of every stage: ceil(n * ratio^j), at least 1.
std::array<std::size_t, kStages> stage_token_counts(const ModelConfig& config, std::size_t tokens);

Var positional_embedding(Binding& params, const std::string& prefix, std::span<const Point3> coords);

/// Affine projection of voxel features to stage-1 width plus the encoder
/// positional embedding.
TokenSet embed_voxels(const ModelConfig& config, Binding& params, const Array& features,
                      std::span<const Point3> coords);

/// Stacks of KNN-restricted attention blocks with FPS downsampling and an
/// affine channel lift between stages.
EncoderOutput encoder_forward(const ModelConfig& config, Binding& params, TokenSet tokens);

/// Inverse-squared-distance weights over the 3 nearest sources per target;
/// a zero-distance source takes the whole weight. [targets x sources].
Array interpolation_weights(std::span<const Point3> sources, std::span<const Point3> targets, double time_scale);

/// Interpolates each stage onto `targets`, concatenates channelwise and
/// projects to decoder width.
Var interpolate_upsample(const ModelConfig& config, Binding& params, const EncoderOutput& stages,
                         std::span<const Point3> targets);

/// Dec_L: predicts masked voxel features [masked x in_features]. Returns
/// nullopt when nothing is masked.
std::optional<Var> local_decode(const ModelConfig& config, Binding& params, const Var& visible_tokens,
                                std::span<const Point3> visible_coords, std::span<const Point3> masked_coords);

/// Mean of the last-stage tokens, [1 x stage-4 width].
Var summarize(const EncoderOutput& stages);

/// Dec_G: predicts the summaries of masked clusters [masked x stage-4 width]
/// from the visible ones.
Var global_decode(const ModelConfig& config, Binding& params, const Var& visible_summaries,
                  std::span<const Point3> visible_centers, std::span<const Point3> masked_centers);

/// Stage-1 feature matrix of a voxel subset.
Array gather_features(const voxel::VoxelSample& sample, std::span<const std::size_t> indices);
std::vector<Point3> gather_coords(const voxel::VoxelSample& sample, std::span<const std::size_t> indices);

/// Encoder run over a voxel subset followed by summarize().
Var encode_summary(const ModelConfig& config, Binding& params, const voxel::VoxelSample& sample,
                   std::span<const std::size_t> indices);

}  // namespace evssl::model
