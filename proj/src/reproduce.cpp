#include "groupdiff/reproduce.hpp"

#include <filesystem>

#include "groupdiff/csv.hpp"
#include "groupdiff/error.hpp"
#include "groupdiff/eval.hpp"
#include "groupdiff/train.hpp"

namespace groupdiff {

namespace fs = std::filesystem;

namespace {

std::string optional_str(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

void write_run_outputs(const fs::path& dir, const RunMetrics& m) {
  CsvTable metrics({"fid_proxy", "s_cross", "probe_acc"});
  metrics.add_row({format_double(m.fid_proxy), optional_str(m.s_cross), format_double(m.probe_acc)});
  metrics.write((dir / "metrics.csv").string());
  if (m.step_profile.steps.empty()) return;
  CsvTable profile({"step", "p_cross_mean", "p_cross_max"});
  PlotSeries mean{"P_cross mean", {}, {}}, mx{"P_cross max", {}, {}};
  for (std::size_t i = 0; i < m.step_profile.steps.size(); ++i) {
    profile.add_row({std::to_string(m.step_profile.steps[i]), format_double(m.step_profile.p_cross_mean[i]),
                     format_double(m.step_profile.p_cross_max[i])});
    mean.x.push_back(static_cast<double>(m.step_profile.steps[i]));
    mean.y.push_back(m.step_profile.p_cross_mean[i]);
    mx.x.push_back(static_cast<double>(m.step_profile.steps[i]));
    mx.y.push_back(m.step_profile.p_cross_max[i]);
  }
  profile.write((dir / "step_profile.csv").string());
  write_line_plot((dir / "step_profile.svg").string(), "Cross-sample attention per step", "step", "mass", {mean, mx});
}

}  // namespace

SamplerPlan evaluation_plan(const RunConfig& config) {
  SamplerPlan plan = config.sampler;
  const std::size_t n = plan.group_size;
  plan.num_groups = std::max<std::size_t>(1, config.eval.num_images / n);
  plan.group_labels.resize(plan.num_groups);
  for (std::size_t g = 0; g < plan.num_groups; ++g) {
    plan.group_labels[g] = static_cast<int>(g % config.model.num_classes);
  }
  plan.member_labels.clear();
  plan.member_seeds.clear();
  plan.capture_attention = n >= 2 && plan.mode != SamplerMode::kBaseline;
  return plan;
}

RunMetrics evaluate_model(const RunConfig& config, const Denoiser& model, const Dataset& dataset,
                          const SamplerPlan& plan) {
  const NoiseSchedule schedule = config.schedule.build();
  const SampleTrace trace = generate(plan, model, schedule);

  std::vector<std::size_t> all(dataset.images.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  RunMetrics m;
  m.fid_proxy = fid_proxy(to_pixel_space(trace.images), stack_pixels(dataset, all));
  if (!trace.attention.empty() && trace.group_size >= 2) {
    m.s_cross = aggregate_s_cross(trace.attention);
    m.step_profile = step_profile(trace.attention);
  }
  LinearProbeOptions probe;
  probe.layer = config.eval.probe_layer;
  probe.noise_time = config.eval.probe_noise_time;
  probe.seed = derive_seed(config.seed, 0x9d);
  m.probe_acc = linear_probe(model, dataset, schedule, probe).accuracy;
  return m;
}

std::vector<RunOutcome> reproduce(const ExperimentManifest& manifest, const ReproduceOptions& options) {
  manifest.validate();
  const fs::path root(manifest.output_dir);
  fs::create_directories(root);
  std::vector<RunOutcome> outcomes;
  CsvTable summary({"tag", "fid_proxy", "s_cross", "probe_acc", "status"});

  for (const auto& entry : manifest.runs) {
    RunOutcome outcome{entry.tag, "ok", std::nullopt};
    try {
      RunConfig cfg = entry.config;
      cfg.paths.output_dir = (root / entry.tag).string();
      cfg.validate_paths();
      const fs::path model_path = fs::path(cfg.paths.output_dir) / "model.gdf";
      std::optional<Denoiser> model;
      if (options.reuse_checkpoints && fs::exists(model_path)) {
        model = Denoiser::load(model_path.string());
        if (model->config() != cfg.model) throw ValidationError("existing checkpoint has a different model config");
      } else {
        if (options.on_progress) options.on_progress(entry.tag, "train");
        model = train_run(cfg).model;
      }
      if (options.on_progress) options.on_progress(entry.tag, "evaluate");
      const Dataset dataset = read_dataset(cfg.paths.dataset);
      outcome.metrics = evaluate_model(cfg, *model, dataset);
      write_run_outputs(cfg.paths.output_dir, *outcome.metrics);
    } catch (const std::exception& e) {
      outcome.status = std::string("error: ") + e.what();
      outcome.metrics.reset();
    }
    if (outcome.metrics) {
      summary.add_row({outcome.tag, format_double(outcome.metrics->fid_proxy), optional_str(outcome.metrics->s_cross),
                       format_double(outcome.metrics->probe_acc), outcome.status});
    } else {
      summary.add_row({outcome.tag, "", "", "", outcome.status});
    }
    outcomes.push_back(std::move(outcome));
  }
  summary.write((root / "summary.csv").string());
  return outcomes;
}

}  // namespace groupdiff
