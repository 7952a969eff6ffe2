#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "groupdiff/attention_types.hpp"
#include "groupdiff/denoiser.hpp"
#include "groupdiff/diffusion.hpp"
#include "groupdiff/sampler.hpp"

namespace groupdiff {

/// Image-to-image mass from raw attention weights.
///
/// `weights` holds `heads` row-stochastic (N·L)×(N·L) matrices back to back.
/// Throws NumericError when a row does not sum to one.
AttentionBlockSums block_sums(std::span<const double> weights, std::size_t n, std::size_t tokens,
                              std::size_t heads = 1);

struct ImageCrossStats {
  double p_self = 0.0;
  double p_cross_mean = 0.0;
  double p_cross_max = 0.0;
  /// (max − mean) / max; absent for a group of one. A zero max gives 0.
  std::optional<double> s_cross;
};

/// Per-image statistics over P_cross = {B[i][j] : j ≠ i}.
std::vector<ImageCrossStats> cross_stats(const AttentionBlockSums& block);

/// (max − mean) / max of an explicit cross-mass set.
std::optional<double> cross_sample_score(std::span<const double> p_cross);

/// Average of several records of the same group size (entry-wise).
AttentionBlockSums average_blocks(std::span<const AttentionBlockSums> records);

enum class ScoreAggregation {
  kAverageThenScore,  // average B over layers/steps, then score
  kScoreThenAverage,  // score every record, then average
};

enum class ScoreLevel {
  kImage,  // S per image, averaged over images
  kGroup,  // P_mean and P_max averaged over images first, then one S
};

/// One S_cross for a whole run. Throws for an empty capture or N < 2.
double aggregate_s_cross(std::span<const AttentionBlockSums> records,
                         ScoreAggregation aggregation = ScoreAggregation::kAverageThenScore,
                         ScoreLevel level = ScoreLevel::kImage);

struct StepProfile {
  std::vector<std::size_t> steps;
  std::vector<double> p_cross_mean;
  std::vector<double> p_cross_max;
};

/// Per-step P_cross-mean and P_cross-max averaged over images, groups and layers.
StepProfile step_profile(std::span<const AttentionBlockSums> records);
inline StepProfile step_profile(const SampleTrace& trace) { return step_profile(trace.attention); }

struct LayerProfile {
  std::vector<std::size_t> layers;
  std::vector<double> p_cross_mean;
  std::vector<double> p_cross_max;
};

LayerProfile layer_profile(std::span<const AttentionBlockSums> records);

double pearson(std::span<const double> x, std::span<const double> y);
/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

/// Pearson r over (S_cross, quality) pairs; needs ≥ 3 pairs with spread.
double fid_correlation(std::span<const std::pair<double, double>> pairs);

struct CrossConditionResult {
  /// p^{anchor→j} averaged over the reference run's records.
  std::vector<double> attention_from_anchor;
  /// Members 1..N−1 ordered by attention received from the anchor, highest first.
  std::vector<std::size_t> ranking;
  /// ‖anchor(reference) − anchor(member j relabelled)‖₂ for every j.
  std::vector<double> anchor_delta;
};

/// Generates the reference group, then re-generates with each member's label
/// replaced by `new_class` under identical noise seeds.
CrossConditionResult cross_condition_probe(const SamplerPlan& reference, int new_class, const Denoiser& denoiser,
                                           const NoiseSchedule& schedule);

}  // namespace groupdiff
