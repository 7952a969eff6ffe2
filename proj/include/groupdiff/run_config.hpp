#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "groupdiff/denoiser.hpp"
#include "groupdiff/diffusion.hpp"
#include "groupdiff/grouping.hpp"
#include "groupdiff/optim.hpp"
#include "groupdiff/sampler.hpp"
#include "groupdiff/toy_data.hpp"

namespace groupdiff {

inline constexpr int kRunConfigVersion = 1;

enum class ScheduleKind { kScaledLinear, kLinear };

struct ScheduleConfig {
  std::size_t steps = 100;
  ScheduleKind kind = ScheduleKind::kScaledLinear;
  /// Only read for kLinear.
  double beta_start = 1e-4;
  double beta_end = 0.02;

  NoiseSchedule build() const;
  bool operator==(const ScheduleConfig&) const = default;
};

struct TrainConfig {
  std::size_t iterations = 5000;
  std::size_t batch_groups = 32;
  AdamWConfig optimizer{};
  std::size_t warmup = 0;
  std::size_t log_every = 1;
  /// 0 disables intermediate checkpoints; the final one is always written.
  std::size_t checkpoint_every = 0;

  bool operator==(const TrainConfig&) const = default;
};

struct EvalConfig {
  /// Images generated for fid_proxy / S_cross (rounded down to whole groups).
  std::size_t num_images = 64;
  std::size_t probe_layer = 2;
  double probe_noise_time = 0.5;

  bool operator==(const EvalConfig&) const = default;
};

struct RunPaths {
  std::string dataset;
  /// Empty: the index is built in memory from the dataset.
  std::string index;
  std::string output_dir = "run";

  bool operator==(const RunPaths&) const = default;
};

struct RunConfig {
  int version = kRunConfigVersion;
  /// Training mode. baseline: N = 1 always. groupdiff_f: every group trains
  /// grouped. groupdiff_l: only label-dropped groups train grouped.
  SamplerMode mode = SamplerMode::kGroupDiffL;
  std::uint64_t seed = 0;
  ModelConfig model{};
  ScheduleConfig schedule{};
  DatasetSpec dataset{};
  GroupSpec group{4, QueryMode::kSimilarity, kDefaultSimilarityThreshold, 0};
  GroupNoisePolicy noise{};
  TrainConfig train{};
  SamplerPlan sampler{};
  EvalConfig eval{};
  RunPaths paths{};

  /// Value checks only; paths are not touched.
  void validate() const;
  /// Throws IoError for referenced inputs that do not exist.
  void validate_paths() const;

  bool operator==(const RunConfig&) const = default;
};

std::string serialize(const RunConfig& config);
RunConfig parse_run_config(const std::string& text);

RunConfig load_run_config(const std::string& path);
void save_run_config(const std::string& path, const RunConfig& config);

struct ManifestEntry {
  std::string tag;
  RunConfig config;

  bool operator==(const ManifestEntry&) const = default;
};

struct ExperimentManifest {
  int version = kRunConfigVersion;
  std::string output_dir = "report";
  std::vector<ManifestEntry> runs;

  void validate() const;
  bool operator==(const ExperimentManifest&) const = default;
};

std::string serialize(const ExperimentManifest& manifest);
ExperimentManifest parse_manifest(const std::string& text);
ExperimentManifest load_manifest(const std::string& path);

}  // namespace groupdiff
