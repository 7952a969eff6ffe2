#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "groupdiff/rng.hpp"
#include "groupdiff/tensor.hpp"

namespace groupdiff {

/// Discrete variance schedule. Index 0 is the least noisy step.
struct NoiseSchedule {
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  std::size_t steps() const noexcept { return betas.size(); }

  static NoiseSchedule from_betas(std::vector<double> betas);
  /// β linearly spaced from `beta_start` to `beta_end` over T steps.
  static NoiseSchedule linear(std::size_t steps, double beta_start, double beta_end);
  /// The 1000-step DDPM range (1e-4, 0.02) rescaled to T steps.
  static NoiseSchedule scaled_linear(std::size_t steps);
};

struct GroupNoisePolicy {
  /// Maximum |t_i − t_0| inside a group, in steps.
  std::size_t max_timestep_deviation = 0;
  double label_dropout = 0.1;

  void validate() const;
  bool operator==(const GroupNoisePolicy&) const = default;
};

/// One training group: member 0 is the anchor.
struct GroupBatch {
  Tensor images;  // [N, H, W, Ch]
  std::vector<int> labels;
  std::vector<int> timesteps;
  Tensor noise;  // [N, H, W, Ch]

  std::size_t size() const { return labels.size(); }
  /// Shape agreement plus the group timestep constraint.
  void validate(std::size_t max_timestep_deviation, std::size_t schedule_steps, int null_label) const;
};

/// √ᾱ x0 + √(1−ᾱ) ε for an explicit ᾱ.
Tensor noise_with_alpha_bar(const Tensor& x0, const Tensor& eps, double alpha_bar);

/// x_t = √ᾱ_t x0 + √(1−ᾱ_t) ε. With a batch, `t` holds one step per leading row
/// (or a single step shared by all rows).
Tensor forward_noising(const Tensor& x0, std::span<const int> t, const Tensor& eps, const NoiseSchedule& schedule);
Tensor forward_noising(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& schedule);

/// t_0 uniform on [0, T); the others uniform on [t_0 − σ, t_0 + σ] ∩ [0, T).
std::vector<int> sample_group_timesteps(std::size_t n, const GroupNoisePolicy& policy, const NoiseSchedule& schedule,
                                        Rng& rng);

/// Σ_i mean over elements of (ε̂_i − ε_i)².
double group_loss(const Tensor& predicted, const Tensor& target);

struct DroppedLabels {
  std::vector<int> labels;
  bool dropped = false;
};

/// One Bernoulli(p) draw for the whole group: either every label becomes
/// `null_label` or none does.
DroppedLabels label_dropout(std::span<const int> labels, double p, int null_label, Rng& rng);

}  // namespace groupdiff
