#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "groupdiff/tensor.hpp"

namespace groupdiff {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  bool operator==(const AdamWConfig&) const = default;
};

struct OptimizerState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;
};

/// Decoupled-weight-decay Adam:
///   p ← p − lr·wd·p;  m ← β1 m + (1−β1) g;  v ← β2 v + (1−β2) g²
///   p ← p − lr · m̂ / (√v̂ + eps)  with bias-corrected m̂, v̂.
class AdamW {
 public:
  explicit AdamW(AdamWConfig config);

  const AdamWConfig& config() const noexcept { return config_; }
  void set_lr(double lr);
  const OptimizerState& state() const noexcept { return state_; }

  /// One update of every parameter. Moments are created on the first call.
  void step(std::span<Tensor> params, std::span<const Tensor> grads);

 private:
  AdamWConfig config_;
  OptimizerState state_;
};

}  // namespace groupdiff
