#pragma once

#include <functional>
#include <string>
#include <vector>

#include "groupdiff/denoiser.hpp"
#include "groupdiff/grouping.hpp"
#include "groupdiff/run_config.hpp"
#include "groupdiff/toy_data.hpp"

namespace groupdiff {

struct TrainLogRow {
  std::size_t iter = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct TrainOptions {
  /// Reuse the first iteration's anchors, labels, timesteps and noise every step.
  bool fixed_batch = false;
  /// Directory for intermediate checkpoints; empty skips them.
  std::string checkpoint_dir;
  std::function<void(const TrainLogRow&)> on_log;
};

struct TrainResult {
  Denoiser model;
  std::vector<TrainLogRow> log;
  /// Groups trained with group attention on / as single images.
  std::size_t grouped_groups = 0;
  std::size_t single_groups = 0;
};

/// Per iteration: draw anchors, one label-dropout draw per group, assemble
/// groups according to the mode, sample group timesteps and noise, forward,
/// average group losses over groups, one AdamW step.
///
/// Throws NumericError naming the iteration when the loss stops being finite.
TrainResult train(const RunConfig& config, const Dataset& dataset, const DatasetIndex& index,
                  const TrainOptions& options = {});

/// Reads inputs from config.paths and writes into config.paths.output_dir:
/// config.json, train_log.csv, model.gdf (and ckpt_<iter>.gdf when enabled).
TrainResult train_run(const RunConfig& config);

void write_train_log(const std::string& path, const std::vector<TrainLogRow>& log);

/// Dataset from the path, index from its path or built in memory.
DatasetIndex load_or_build_index(const RunConfig& config, const Dataset& dataset);

}  // namespace groupdiff
