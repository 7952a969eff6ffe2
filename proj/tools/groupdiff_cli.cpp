// groupdiff command-line tool: datasets, indexes, training, sampling,
// attention analysis, evaluation and manifest-driven reproduction.
//
// Exit codes: 0 success, 2 validation/usage error, 3 numeric failure.

#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>

#include "groupdiff/attn_metrics.hpp"
#include "groupdiff/csv.hpp"
#include "groupdiff/error.hpp"
#include "groupdiff/eval.hpp"
#include "groupdiff/grouping.hpp"
#include "groupdiff/reproduce.hpp"
#include "groupdiff/run_config.hpp"
#include "groupdiff/sampler.hpp"
#include "groupdiff/toy_data.hpp"
#include "groupdiff/train.hpp"

namespace fs = std::filesystem;
using namespace groupdiff;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;

// Sampler flags shared by `sample`, `eval sweep` and `analyze cross-condition`.
struct PlanFlags {
  std::string mode = "groupdiff_l";
  std::size_t steps = 50;
  double cfg = 1.5;
  std::string guidance = "0:1";
  std::string group_window = "0:1";
  std::vector<std::size_t> group_layers;
  std::size_t group_size = 4;
  std::size_t groups = 1;
  int class_label = 0;
  bool spread_classes = false;
  std::uint64_t seed = 0;
  bool no_clip = false;

  void add(CLI::App* app) {
    app->add_option("--mode", mode, "baseline | groupdiff_f | groupdiff_l")->capture_default_str();
    app->add_option("--steps", steps, "Sampling steps")->capture_default_str();
    app->add_option("--cfg", cfg, "Guidance scale s")->capture_default_str();
    app->add_option("--guidance", guidance, "Guidance interval lo:hi on normalized time")->capture_default_str();
    app->add_option("--group-window", group_window, "Group-attention window lo:hi")->capture_default_str();
    app->add_option("--group-layers", group_layers, "Layers with group attention (default all)");
    app->add_option("--group-size", group_size, "Images per group")->capture_default_str();
    app->add_option("--groups", groups, "Number of groups")->capture_default_str();
    app->add_option("--class", class_label, "Class label of every group")->capture_default_str();
    app->add_flag("--spread-classes", spread_classes, "Group g uses class g mod K");
    app->add_option("--seed", seed, "Noise seed")->capture_default_str();
    app->add_flag("--no-clip", no_clip, "Do not clip predicted x0 to [-1, 1]");
  }

  SamplerPlan plan(const ModelConfig& model) const {
    SamplerPlan p;
    p.mode = parse_sampler_mode(mode);
    p.steps = steps;
    p.cfg_scale = cfg;
    p.guidance = parse_time_window(guidance);
    p.group_window = parse_time_window(group_window);
    p.group_layers = group_layers;
    p.group_size = group_size;
    p.num_groups = groups;
    p.class_label = class_label;
    if (spread_classes) {
      for (std::size_t g = 0; g < groups; ++g) p.group_labels.push_back(static_cast<int>(g % model.num_classes));
    }
    p.seed = seed;
    p.clip_denoised = !no_clip;
    p.validate(model);
    return p;
  }
};

// Schedule from a run config when given, otherwise the default with T steps.
struct ScheduleFlags {
  std::string config;
  std::size_t timesteps = 100;

  void add(CLI::App* app) {
    app->add_option("--config", config, "Run config supplying the noise schedule");
    app->add_option("--timesteps", timesteps, "Schedule length T when no config is given")->capture_default_str();
  }

  NoiseSchedule build() const {
    if (!config.empty()) return load_run_config(config).schedule.build();
    ScheduleConfig s;
    s.steps = timesteps;
    return s.build();
  }
};

void write_sweep_csv(const std::string& path, const SweepResult& sweep) {
  CsvTable t({"s", "fid", "is_argmin"});
  for (std::size_t i = 0; i < sweep.rows.size(); ++i) {
    t.add_row({format_double(sweep.rows[i].scale), format_double(sweep.rows[i].fid), i == sweep.argmin ? "1" : "0"});
  }
  t.write(path);
}

Tensor all_pixels(const Dataset& d) {
  std::vector<std::size_t> pos(d.images.size());
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
  return stack_pixels(d, pos);
}

// Pixel tensor of one trace file or every *.gdt in a directory (sorted by name).
Tensor generated_pixels(const std::string& path) {
  std::vector<std::string> files;
  if (fs::is_directory(path)) {
    for (const auto& e : fs::directory_iterator(path)) {
      if (e.path().extension() == ".gdt") files.push_back(e.path().string());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ValidationError("no .gdt traces in '" + path + "'");
  } else {
    files.push_back(path);
  }
  Shape shape;
  std::vector<double> values;
  for (const auto& f : files) {
    const Tensor px = to_pixel_space(read_trace(f).images);
    if (shape.empty()) {
      shape = px.shape();
      shape[0] = 0;
    } else if (!std::equal(shape.begin() + 1, shape.end(), px.shape().begin() + 1)) {
      throw DimensionError("traces in '" + path + "' have different image shapes");
    }
    shape[0] += px.dim(0);
    values.insert(values.end(), px.storage().begin(), px.storage().end());
  }
  return Tensor(shape, std::move(values));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GroupDiff desk-scale toolkit"};
  app.require_subcommand(1);

  // dataset gen
  auto* dataset_cmd = app.add_subcommand("dataset", "Toy dataset management")->require_subcommand(1);
  auto* dataset_gen = dataset_cmd->add_subcommand("gen", "Render a procedural dataset");
  DatasetSpec dspec;
  std::string dataset_out, dataset_config;
  dataset_gen->add_option("--out", dataset_out, "Output .gdd file")->required();
  dataset_gen->add_option("--config", dataset_config, "Take the dataset spec from a run config");
  dataset_gen->add_option("--classes", dspec.num_classes)->capture_default_str();
  dataset_gen->add_option("--per-class", dspec.images_per_class)->capture_default_str();
  dataset_gen->add_option("--size", dspec.image_size)->capture_default_str();
  dataset_gen->add_option("--seed", dspec.seed)->capture_default_str();
  dataset_gen->add_option("--spread", dspec.within_class_spread)->capture_default_str();
  dataset_gen->add_option("--group-max", dspec.group_size_max)->capture_default_str();

  // index build
  auto* index_cmd = app.add_subcommand("index", "Retrieval index management")->require_subcommand(1);
  auto* index_build = index_cmd->add_subcommand("build", "Encode a dataset into a retrieval index");
  std::string index_dataset, index_out;
  double index_tau = kDefaultSimilarityThreshold;
  index_build->add_option("--dataset", index_dataset)->required()->check(CLI::ExistingFile);
  index_build->add_option("--out", index_out, "Output .gdi file")->required();
  index_build->add_option("--tau", index_tau, "Similarity threshold")->capture_default_str();

  // config init
  auto* config_cmd = app.add_subcommand("config", "Run config helpers")->require_subcommand(1);
  auto* config_init = config_cmd->add_subcommand("init", "Write a default run config");
  std::string config_out, config_mode = "groupdiff_l", config_dataset, config_output_dir = "run";
  std::size_t config_group = 4;
  config_init->add_option("--out", config_out)->required();
  config_init->add_option("--mode", config_mode)->capture_default_str();
  config_init->add_option("--group-size", config_group)->capture_default_str();
  config_init->add_option("--dataset", config_dataset, "paths.dataset");
  config_init->add_option("--output-dir", config_output_dir, "paths.output_dir")->capture_default_str();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a denoiser from a run config");
  std::string train_config, train_out;
  std::optional<std::size_t> train_iters;
  train_cmd->add_option("--config", train_config)->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", train_out, "Override paths.output_dir");
  train_cmd->add_option("--iterations", train_iters, "Override train.iterations");

  // sample
  auto* sample_cmd = app.add_subcommand("sample", "Generate groups and write a trace");
  std::string sample_ckpt, sample_out;
  bool sample_capture = false;
  std::vector<std::size_t> sample_capture_layers, sample_snapshots;
  PlanFlags sample_flags;
  ScheduleFlags sample_sched;
  sample_cmd->add_option("--ckpt", sample_ckpt)->required()->check(CLI::ExistingFile);
  sample_cmd->add_option("--out", sample_out, "Output .gdt trace")->required();
  sample_cmd->add_flag("--capture", sample_capture, "Record attention block sums");
  sample_cmd->add_option("--capture-layers", sample_capture_layers, "Layers to capture (default all)");
  sample_cmd->add_option("--snapshots", sample_snapshots, "Steps whose x_t is stored");
  sample_flags.add(sample_cmd);
  sample_sched.add(sample_cmd);

  // analyze attn | cross-condition
  auto* analyze_cmd = app.add_subcommand("analyze", "Attention analysis")->require_subcommand(1);
  auto* analyze_attn = analyze_cmd->add_subcommand("attn", "Per-image cross-sample statistics of a trace");
  std::string attn_trace, attn_out, attn_plot;
  bool attn_group_level = false, attn_score_first = false;
  analyze_attn->add_option("--trace", attn_trace)->required()->check(CLI::ExistingFile);
  analyze_attn->add_option("--out", attn_out, "stats CSV")->required();
  analyze_attn->add_option("--plot", attn_plot, "SVG of the per-step profile");
  analyze_attn->add_flag("--group-level", attn_group_level, "Aggregate S_cross at group level");
  analyze_attn->add_flag("--score-then-average", attn_score_first, "Score each record before averaging");

  auto* analyze_cc = analyze_cmd->add_subcommand("cross-condition", "Relabel members and measure the anchor change");
  std::string cc_ckpt, cc_out;
  int cc_new_class = 1;
  PlanFlags cc_flags;
  ScheduleFlags cc_sched;
  analyze_cc->add_option("--ckpt", cc_ckpt)->required()->check(CLI::ExistingFile);
  analyze_cc->add_option("--new-class", cc_new_class, "Class given to the replaced member")->capture_default_str();
  analyze_cc->add_option("--out", cc_out, "CSV")->required();
  cc_flags.add(analyze_cc);
  cc_sched.add(analyze_cc);

  // eval fid | probe | sweep
  auto* eval_cmd = app.add_subcommand("eval", "Evaluation")->require_subcommand(1);
  auto* eval_fid = eval_cmd->add_subcommand("fid", "fid_proxy of generated images against a dataset");
  std::string fid_gen, fid_ref, fid_out;
  eval_fid->add_option("--gen", fid_gen, "Trace file or directory of traces")->required()->check(CLI::ExistingPath);
  eval_fid->add_option("--ref", fid_ref, "Reference dataset")->required()->check(CLI::ExistingFile);
  eval_fid->add_option("--out", fid_out, "CSV");

  auto* eval_probe = eval_cmd->add_subcommand("probe", "Linear probe on pooled denoiser features");
  std::string probe_ckpt, probe_dataset, probe_out;
  LinearProbeOptions probe_opts;
  ScheduleFlags probe_sched;
  eval_probe->add_option("--ckpt", probe_ckpt)->required()->check(CLI::ExistingFile);
  eval_probe->add_option("--dataset", probe_dataset)->required()->check(CLI::ExistingFile);
  eval_probe->add_option("--layer", probe_opts.layer)->capture_default_str();
  eval_probe->add_option("--noise-time", probe_opts.noise_time, "0 = noise, 1 = clean")->capture_default_str();
  eval_probe->add_option("--seed", probe_opts.seed)->capture_default_str();
  eval_probe->add_option("--out", probe_out, "CSV");
  probe_sched.add(eval_probe);

  auto* eval_sweep = eval_cmd->add_subcommand("sweep", "fid_proxy over a grid of guidance scales");
  std::string sweep_ckpt, sweep_ref, sweep_out = "sweep.csv", sweep_plot;
  double sweep_lo = 1.0, sweep_hi = 3.0, sweep_step = 0.1;
  PlanFlags sweep_flags;
  ScheduleFlags sweep_sched;
  eval_sweep->add_option("--ckpt", sweep_ckpt)->required()->check(CLI::ExistingFile);
  eval_sweep->add_option("--ref", sweep_ref)->required()->check(CLI::ExistingFile);
  eval_sweep->add_option("--lo", sweep_lo)->capture_default_str();
  eval_sweep->add_option("--hi", sweep_hi)->capture_default_str();
  eval_sweep->add_option("--step", sweep_step)->capture_default_str();
  eval_sweep->add_option("--out", sweep_out)->capture_default_str();
  eval_sweep->add_option("--plot", sweep_plot, "SVG of fid vs s");
  sweep_flags.add(eval_sweep);
  sweep_sched.add(eval_sweep);

  // reproduce
  auto* repro_cmd = app.add_subcommand("reproduce", "Train and evaluate every run of a manifest");
  std::string repro_manifest;
  bool repro_reuse = false;
  repro_cmd->add_option("--manifest", repro_manifest)->required()->check(CLI::ExistingFile);
  repro_cmd->add_flag("--reuse", repro_reuse, "Reuse existing run checkpoints");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (dataset_gen->parsed()) {
      if (!dataset_config.empty()) dspec = load_run_config(dataset_config).dataset;
      const Dataset d = generate_dataset(dspec);
      write_dataset(dataset_out, d);
      std::cout << "wrote " << d.images.size() << " images to " << dataset_out << "\n";
    } else if (index_build->parsed()) {
      const DatasetIndex idx = build_index(read_dataset(index_dataset), index_tau);
      write_index(index_out, idx);
      std::cout << "wrote index of " << idx.size() << " rows (F=" << idx.feature_dim() << ") to " << index_out << "\n";
    } else if (config_init->parsed()) {
      RunConfig c;
      c.mode = parse_sampler_mode(config_mode);
      c.group.group_size = c.mode == SamplerMode::kBaseline ? 1 : config_group;
      c.sampler.mode = c.mode;
      c.sampler.group_size = c.group.group_size;
      c.paths.dataset = config_dataset;
      c.paths.output_dir = config_output_dir;
      c.validate();
      save_run_config(config_out, c);
      std::cout << "wrote " << config_out << "\n";
    } else if (train_cmd->parsed()) {
      RunConfig c = load_run_config(train_config);
      if (!train_out.empty()) c.paths.output_dir = train_out;
      if (train_iters) c.train.iterations = *train_iters;
      const auto r = train_run(c);
      const double last = r.log.empty() ? 0.0 : r.log.back().loss;
      std::cout << "trained " << c.train.iterations << " iterations, final loss " << last << ", outputs in "
                << c.paths.output_dir << "\n";
    } else if (sample_cmd->parsed()) {
      const Denoiser model = Denoiser::load(sample_ckpt);
      SamplerPlan plan = sample_flags.plan(model.config());
      plan.capture_attention = sample_capture;
      plan.capture_layers = AttnCaptureSpec{true, sample_capture_layers};
      plan.snapshot_steps = sample_snapshots;
      const SampleTrace trace = generate(plan, model, sample_sched.build());
      write_trace(sample_out, trace);
      std::cout << "wrote " << trace.images.dim(0) << " images";
      if (!trace.attention.empty()) std::cout << " and " << trace.attention.size() << " attention records";
      std::cout << " to " << sample_out << "\n";
    } else if (analyze_attn->parsed()) {
      const SampleTrace trace = read_trace(attn_trace);
      if (trace.attention.empty()) throw ValidationError("trace has no attention capture (sample with --capture)");
      CsvTable t({"step", "layer", "image", "p_self", "p_cross_mean", "p_cross_max", "s_cross"});
      for (const auto& rec : trace.attention) {
        const auto stats = cross_stats(rec);
        for (std::size_t i = 0; i < stats.size(); ++i) {
          const auto& s = stats[i];
          t.add_row({std::to_string(rec.step), std::to_string(rec.layer), std::to_string(rec.group * rec.n + i),
                     format_double(s.p_self), format_double(s.p_cross_mean), format_double(s.p_cross_max),
                     s.s_cross ? format_double(*s.s_cross) : ""});
        }
      }
      t.write(attn_out);
      const StepProfile prof = step_profile(trace.attention);
      if (!attn_plot.empty()) {
        PlotSeries mean{"P_cross mean", {}, prof.p_cross_mean}, mx{"P_cross max", {}, prof.p_cross_max};
        for (auto s : prof.steps) {
          mean.x.push_back(static_cast<double>(s));
          mx.x.push_back(static_cast<double>(s));
        }
        write_line_plot(attn_plot, "Cross-sample attention per step", "step", "mass", {mean, mx});
      }
      std::cout << "wrote " << t.rows().size() << " rows to " << attn_out << "\n";
      if (trace.group_size >= 2) {
        const double s = aggregate_s_cross(
            trace.attention,
            attn_score_first ? ScoreAggregation::kScoreThenAverage : ScoreAggregation::kAverageThenScore,
            attn_group_level ? ScoreLevel::kGroup : ScoreLevel::kImage);
        std::cout << "aggregate s_cross " << format_double(s) << "\n";
      }
    } else if (analyze_cc->parsed()) {
      const Denoiser model = Denoiser::load(cc_ckpt);
      const auto r = cross_condition_probe(cc_flags.plan(model.config()), cc_new_class, model, cc_sched.build());
      CsvTable t({"member", "attention_from_anchor", "rank", "anchor_delta"});
      for (std::size_t j = 0; j < r.anchor_delta.size(); ++j) {
        const auto rank = std::find(r.ranking.begin(), r.ranking.end(), j) - r.ranking.begin();
        t.add_row({std::to_string(j), format_double(r.attention_from_anchor[j]), std::to_string(rank),
                   format_double(r.anchor_delta[j])});
      }
      t.write(cc_out);
      std::cout << "wrote " << cc_out << "\n";
    } else if (eval_fid->parsed()) {
      const double fid = fid_proxy(generated_pixels(fid_gen), all_pixels(read_dataset(fid_ref)));
      if (!fid_out.empty()) {
        CsvTable t({"gen", "ref", "fid_proxy"});
        t.add_row({fid_gen, fid_ref, format_double(fid)});
        t.write(fid_out);
      }
      std::cout << "fid_proxy " << format_double(fid) << "\n";
    } else if (eval_probe->parsed()) {
      const Denoiser model = Denoiser::load(probe_ckpt);
      const auto r = linear_probe(model, read_dataset(probe_dataset), probe_sched.build(), probe_opts);
      if (!probe_out.empty()) {
        CsvTable t({"layer", "accuracy", "train_size", "test_size"});
        t.add_row({std::to_string(r.layer), format_double(r.accuracy), std::to_string(r.train_size),
                   std::to_string(r.test_size)});
        t.write(probe_out);
      }
      std::cout << "probe layer " << r.layer << " accuracy " << format_double(r.accuracy) << " (" << r.test_size
                << " held out)\n";
    } else if (eval_sweep->parsed()) {
      const Denoiser model = Denoiser::load(sweep_ckpt);
      const auto grid = scale_grid(sweep_lo, sweep_hi, sweep_step);
      const auto sweep = cfg_sweep(sweep_flags.plan(model.config()), grid, model, sweep_sched.build(),
                                   all_pixels(read_dataset(sweep_ref)));
      write_sweep_csv(sweep_out, sweep);
      if (!sweep_plot.empty()) {
        PlotSeries s{"fid_proxy", {}, {}};
        for (const auto& r : sweep.rows) {
          s.x.push_back(r.scale);
          s.y.push_back(r.fid);
        }
        write_line_plot(sweep_plot, "Guidance sweep", "s", "fid_proxy", {s});
      }
      std::cout << "best s " << format_double(sweep.rows[sweep.argmin].scale) << " fid_proxy "
                << format_double(sweep.rows[sweep.argmin].fid) << "\n";
    } else if (repro_cmd->parsed()) {
      ReproduceOptions opts;
      opts.reuse_checkpoints = repro_reuse;
      opts.on_progress = [](const std::string& tag, const std::string& stage) {
        std::cerr << "[" << tag << "] " << stage << "\n";
      };
      const ExperimentManifest m = load_manifest(repro_manifest);
      const auto outcomes = reproduce(m, opts);
      std::size_t failed = 0;
      for (const auto& o : outcomes) {
        std::cout << o.tag << ": " << o.status << "\n";
        if (!o.metrics) ++failed;
      }
      std::cout << "summary at " << (fs::path(m.output_dir) / "summary.csv").string() << "\n";
      if (failed > 0) return kExitValidation;
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return 0;
}
