#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "groupdiff/attn_metrics.hpp"
#include "groupdiff/denoiser.hpp"
#include "groupdiff/run_config.hpp"
#include "groupdiff/sampler.hpp"
#include "groupdiff/toy_data.hpp"

namespace groupdiff {

/// The run's sampler defaults spread over ⌊num_images / group_size⌋ groups,
/// group g conditioned on class g mod K. Attention is captured whenever a
/// group has at least two members.
SamplerPlan evaluation_plan(const RunConfig& config);

struct RunMetrics {
  double fid_proxy = 0.0;
  std::optional<double> s_cross;
  double probe_acc = 0.0;
  StepProfile step_profile;
};

/// Generates the evaluation set, then fid_proxy against every dataset image,
/// aggregate S_cross of the capture, and the linear probe.
RunMetrics evaluate_model(const RunConfig& config, const Denoiser& model, const Dataset& dataset,
                          const SamplerPlan& plan);
inline RunMetrics evaluate_model(const RunConfig& config, const Denoiser& model, const Dataset& dataset) {
  return evaluate_model(config, model, dataset, evaluation_plan(config));
}

struct RunOutcome {
  std::string tag;
  /// "ok" or "error: <message>".
  std::string status;
  std::optional<RunMetrics> metrics;
};

struct ReproduceOptions {
  /// Skip training when <run>/model.gdf already exists.
  bool reuse_checkpoints = false;
  std::function<void(const std::string& tag, const std::string& stage)> on_progress;
};

/// One subdirectory per tag (config, log, checkpoint, metrics, step profile)
/// plus summary.csv with columns tag, fid_proxy, s_cross, probe_acc, status.
/// A failing run is recorded in its row and the others continue.
std::vector<RunOutcome> reproduce(const ExperimentManifest& manifest, const ReproduceOptions& options = {});

}  // namespace groupdiff
