#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "groupdiff/attention_types.hpp"
#include "groupdiff/autograd.hpp"
#include "groupdiff/checkpoint.hpp"
#include "groupdiff/tensor.hpp"

namespace groupdiff {

struct ModelConfig {
  std::size_t depth = 4;
  std::size_t hidden = 64;
  std::size_t heads = 4;
  std::size_t patch = 4;
  std::size_t image_size = 16;
  std::size_t channels = 3;
  std::size_t num_classes = 8;
  std::size_t max_group = 16;
  std::size_t time_embed_dim = 64;
  std::size_t mlp_ratio = 4;

  void validate() const;
  std::size_t tokens() const { return (image_size / patch) * (image_size / patch); }
  std::size_t patch_dim() const { return patch * patch * channels; }
  /// Label used for the unconditional (∅) branch.
  int null_class() const { return static_cast<int>(num_classes); }

  bool operator==(const ModelConfig&) const = default;
};

struct AttnCaptureSpec {
  bool enabled = false;
  std::vector<std::size_t> layers;  // empty: every layer

  bool includes(std::size_t layer) const;
  bool operator==(const AttnCaptureSpec&) const = default;
};

struct GroupAttentionOptions {
  std::size_t heads = 1;
  /// Consecutive batch rows forming one group.
  std::size_t group_size = 1;
  /// false: every image attends only to its own tokens.
  bool group_on = false;
};

/// [N, H, W, Ch] → [N, L, patch²·Ch]; patches in raster order, each patch
/// flattened as (row, col, channel).
Tensor patchify(const Tensor& images, std::size_t patch);
Tensor unpatchify(const Tensor& patches, std::size_t patch, std::size_t image_size, std::size_t channels);

/// h[N, L, C] + slot_table[i, :] on every token of member i (N ≤ rows of the table).
Tensor add_sample_embedding(const Tensor& h, const Tensor& slot_table);

/// Multi-head attention over q, k, v of shape [B, L, C] (no projections).
///
/// With group_on, every run of `group_size` consecutive images is flattened to
/// one sequence of group_size·L tokens, attended jointly and split back; without
/// it each image is its own sequence. `capture` receives one record per group.
Tensor group_attention(const Tensor& q, const Tensor& k, const Tensor& v, const GroupAttentionOptions& options,
                       std::vector<AttentionBlockSums>* capture = nullptr);

/// Differentiable form over a packed qkv [B, L, 3C] tensor.
ag::Var group_attention(const ag::Var& qkv, const GroupAttentionOptions& options,
                        std::vector<AttentionBlockSums>* capture = nullptr, std::size_t layer = 0);

struct ForwardOptions {
  std::size_t group_size = 1;
  bool group_on = false;
  /// Per-layer override; empty means every layer follows `group_on`.
  std::vector<bool> layer_group_mask;
  AttnCaptureSpec capture;
  /// When set, mean-pooled tokens after this block are returned as features.
  std::optional<std::size_t> feature_layer;
};

struct ForwardResult {
  Tensor eps;  // [B, H, W, Ch]
  std::vector<AttentionBlockSums> attention;
  Tensor features;  // [B, C] when requested
};

/// Patch-based diffusion transformer with adaptive-layer-norm conditioning and
/// per-slot sample embeddings. Group attention replaces per-image attention
/// when enabled.
class Denoiser {
 public:
  enum class Init { kAdaLnZero, kRandom };

  Denoiser(ModelConfig config, std::uint64_t seed, Init init = Init::kAdaLnZero);
  Denoiser(ModelConfig config, std::vector<NamedTensor> parameters);

  const ModelConfig& config() const noexcept { return config_; }
  const std::vector<NamedTensor>& parameters() const noexcept { return params_; }
  std::vector<NamedTensor>& parameters() noexcept { return params_; }
  Tensor& parameter(std::string_view name);
  const Tensor& parameter(std::string_view name) const;
  std::size_t parameter_count() const;

  /// Builds the graph from caller-owned parameter Vars (ordered as parameters()).
  /// Returns ε̂ in patch layout [B, L, patch²·Ch].
  ag::Var forward_graph(std::span<const ag::Var> params, const Tensor& x_t, std::span<const int> timesteps,
                        std::span<const int> labels, const ForwardOptions& options,
                        ForwardResult* side = nullptr) const;

  /// Inference pass; ε̂ is returned in image layout.
  ForwardResult forward(const Tensor& x_t, std::span<const int> timesteps, std::span<const int> labels,
                        const ForwardOptions& options) const;

  /// True when the output projection is still all zeros.
  bool output_head_is_zero() const;

  Checkpoint to_checkpoint() const;
  static Denoiser from_checkpoint(const Checkpoint& ckpt);
  void save(const std::string& path) const;
  static Denoiser load(const std::string& path);

 private:
  std::size_t index_of(std::string_view name) const;

  ModelConfig config_;
  std::vector<NamedTensor> params_;
  Tensor pos_embed_;
};

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

/// Sinusoidal timestep features [B, dim] (cos half then sin half).
Tensor timestep_embedding(std::span<const int> timesteps, std::size_t dim);
/// Fixed 2-D sine-cosine table [grid², dim].
Tensor positional_embedding_2d(std::size_t grid, std::size_t dim);

}  // namespace groupdiff
