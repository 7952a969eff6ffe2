#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "groupdiff/denoiser.hpp"
#include "groupdiff/diffusion.hpp"
#include "groupdiff/sampler.hpp"
#include "groupdiff/toy_data.hpp"

namespace groupdiff {

struct FeatureGaussian {
  std::vector<double> mean;
  std::vector<double> covariance;  // row-major F×F
  std::size_t count = 0;

  std::size_t dim() const noexcept { return mean.size(); }
};

/// Sample mean and unbiased covariance of row vectors.
FeatureGaussian fit_gaussian(std::span<const std::vector<double>> rows);

/// d² = ‖μa − μb‖² + Tr(Σa + Σb − 2 (Σa Σb)^{1/2}).
///
/// The trace term is the nuclear norm of √Σa √Σb, which equals
/// Tr((√Σa Σb √Σa)^{1/2}). Covariance eigenvalues below −1e-8 are rejected.
double frechet_distance(const FeatureGaussian& a, const FeatureGaussian& b);

/// Encoder features of each image in a [N, H, W, 3] pixel tensor.
std::vector<std::vector<double>> encode_batch(const Tensor& pixels);

/// Fréchet distance between Gaussians fitted on encoder features of both sets
/// (pixel tensors in [0, 1]). Each set needs at least F + 1 images.
double fid_proxy(const Tensor& generated_pixels, const Tensor& reference_pixels);

struct ProbeResult {
  std::size_t layer = 0;
  double accuracy = 0.0;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
};

/// One-vs-rest ridge classifier on standardized features, scored on a held-out split.
ProbeResult ridge_probe(std::span<const std::vector<double>> features, std::span<const int> labels,
                        std::size_t num_classes, std::uint64_t seed, double train_fraction = 0.7,
                        double ridge = 1e-3);

struct LinearProbeOptions {
  std::size_t layer = 0;
  /// Normalized denoising time of the probe input (0 = pure noise, 1 = clean).
  double noise_time = 0.5;
  std::uint64_t seed = 0;
  double train_fraction = 0.7;
  std::size_t batch = 64;
};

/// Mean-pooled activations after `layer` on noised dataset images (∅ label),
/// fed to `ridge_probe`.
ProbeResult linear_probe(const Denoiser& denoiser, const Dataset& dataset, const NoiseSchedule& schedule,
                         const LinearProbeOptions& options);

struct SweepRow {
  double scale = 0.0;
  double fid = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::size_t argmin = 0;
};

/// One generation + fid_proxy per guidance scale, all with the template's seeds.
SweepResult cfg_sweep(const SamplerPlan& plan_template, std::span<const double> scales, const Denoiser& denoiser,
                      const NoiseSchedule& schedule, const Tensor& reference_pixels);

/// Scales lo, lo+step, …, hi (inclusive, rounded to 1e-9).
std::vector<double> scale_grid(double lo, double hi, double step);

}  // namespace groupdiff
