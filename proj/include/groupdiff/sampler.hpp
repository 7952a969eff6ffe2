#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "groupdiff/attention_types.hpp"
#include "groupdiff/denoiser.hpp"
#include "groupdiff/diffusion.hpp"

namespace groupdiff {

enum class SamplerMode { kBaseline, kGroupDiffF, kGroupDiffL };

std::string to_string(SamplerMode mode);
SamplerMode parse_sampler_mode(const std::string& text);

/// Sub-range of normalized denoising time, 0 = pure noise and 1 = clean.
/// Step j of S sits at j/S and is inside when lo ≤ j/S < hi, so [0, 0]
/// never fires and [0, 1] always does.
struct TimeWindow {
  double lo = 0.0;
  double hi = 1.0;

  bool contains(double u) const { return lo <= u && u < hi; }
  void validate(const char* what) const;
  bool operator==(const TimeWindow&) const = default;
};

/// Parses "a:b".
TimeWindow parse_time_window(const std::string& text);

struct SamplerPlan {
  SamplerMode mode = SamplerMode::kGroupDiffL;
  std::size_t steps = 50;
  double cfg_scale = 1.5;
  TimeWindow guidance{0.0, 1.0};
  TimeWindow group_window{0.0, 1.0};
  /// Layers where group attention may run; empty means all layers.
  std::vector<std::size_t> group_layers;
  std::size_t group_size = 4;
  std::size_t num_groups = 1;
  int class_label = 0;
  /// Optional per-group class (size num_groups).
  std::vector<int> group_labels;
  /// Optional per-member class (size group_size), overriding the group class.
  std::vector<int> member_labels;
  std::uint64_t seed = 0;
  /// Optional per-member noise seeds (size num_groups·group_size).
  std::vector<std::uint64_t> member_seeds;
  bool clip_denoised = true;
  bool capture_attention = false;
  AttnCaptureSpec capture_layers{true, {}};
  std::vector<std::size_t> snapshot_steps;

  void validate(const ModelConfig& model) const;
  bool operator==(const SamplerPlan&) const = default;
};

struct SampleTrace {
  std::size_t num_groups = 0;
  std::size_t group_size = 0;
  std::size_t steps = 0;
  Tensor images;  // [G·N, H, W, Ch], model space
  std::vector<AttentionBlockSums> attention;
  std::vector<std::size_t> snapshot_steps;
  std::vector<Tensor> snapshots;
};

/// ẽ = e_c + s·(e_c − e_u); s = 0 returns e_c exactly.
Tensor cfg_combine(const Tensor& conditional, const Tensor& unconditional, double scale);

struct ScoreRequest {
  SamplerMode mode = SamplerMode::kBaseline;
  std::size_t group_size = 1;
  /// Group attention allowed at this step (timestep window).
  bool group_active = true;
  std::vector<bool> layer_mask;
  double cfg_scale = 0.0;
  /// Receives block sums of the unconditional pass when non-null.
  std::vector<AttentionBlockSums>* capture = nullptr;
  AttnCaptureSpec capture_layers{true, {}};
};

/// Conditional and unconditional passes combined by CFG.
///  baseline:     both passes per image
///  groupdiff-f:  both passes with group attention
///  groupdiff-l:  conditional per image, unconditional with group attention
Tensor predict_scores(const Tensor& x_t, std::span<const int> timesteps, std::span<const int> labels,
                      const Denoiser& denoiser, const ScoreRequest& request);

/// Respaced timesteps for `steps` sampling steps, noisiest first.
std::vector<int> respaced_timesteps(std::size_t schedule_steps, std::size_t steps);

/// Ancestral sampling with fixed posterior variance, one RNG stream per member.
SampleTrace generate(const SamplerPlan& plan, const Denoiser& denoiser, const NoiseSchedule& schedule);

/// "GDT1" u32 version, u32 groups, u32 group size, u32 H, u32 W, u32 Ch, u32 steps,
/// f64 images; u32 records, per record (u32 step, u32 layer, u32 group, u32 n, n² f64);
/// u32 snapshots, per snapshot (u32 step, f64 images).
void write_trace(const std::string& path, const SampleTrace& trace);
SampleTrace read_trace(const std::string& path);

}  // namespace groupdiff
