#include "groupdiff/run_config.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include <json.hpp>

#include "groupdiff/error.hpp"

namespace groupdiff {

namespace {

using json = nlohmann::ordered_json;

std::string to_string(ScheduleKind k) { return k == ScheduleKind::kLinear ? "linear" : "scaled_linear"; }

ScheduleKind parse_schedule_kind(const std::string& s) {
  if (s == "scaled_linear") return ScheduleKind::kScaledLinear;
  if (s == "linear") return ScheduleKind::kLinear;
  throw ValidationError("unknown schedule kind '" + s + "'");
}

// Reads an object field by field and rejects keys nobody asked for.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ValidationError(where_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ValidationError("expected a boolean");
        out = v.get<bool>();
      } else if constexpr (std::is_unsigned_v<T>) {
        if (!v.is_number_unsigned()) throw ValidationError("expected a non-negative integer");
        out = v.get<T>();
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ValidationError("expected an integer");
        out = v.get<T>();
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ValidationError("expected a number");
        out = v.get<T>();
      } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
        if (!v.is_array()) throw ValidationError("expected an array");
        out.clear();
        for (const auto& e : v) {
          if (!e.is_number_unsigned()) throw ValidationError("expected non-negative integers");
          out.push_back(e.get<std::size_t>());
        }
      } else {
        out = v.get<T>();
      }
    } catch (const ValidationError& e) {
      throw ValidationError(where_ + "." + key + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(where_ + "." + key + ": " + e.what());
    }
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string path(const char* key) const { return where_ + "." + key; }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.contains(item.key())) throw ValidationError(where_ + ": unknown key '" + item.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

json to_json(const TimeWindow& w) { return json::array({w.lo, w.hi}); }

TimeWindow window_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    throw ValidationError(where + ": expected [lo, hi]");
  }
  return TimeWindow{j[0].get<double>(), j[1].get<double>()};
}

json model_json(const ModelConfig& c) { return json::parse(model_config_to_json(c)); }

json run_json(const RunConfig& c) {
  json j;
  j["version"] = c.version;
  j["mode"] = to_string(c.mode);
  j["seed"] = c.seed;
  j["model"] = model_json(c.model);
  j["schedule"] = {{"steps", c.schedule.steps},
                   {"kind", to_string(c.schedule.kind)},
                   {"beta_start", c.schedule.beta_start},
                   {"beta_end", c.schedule.beta_end}};
  j["dataset"] = {{"num_classes", c.dataset.num_classes},
                  {"images_per_class", c.dataset.images_per_class},
                  {"image_size", c.dataset.image_size},
                  {"seed", c.dataset.seed},
                  {"within_class_spread", c.dataset.within_class_spread},
                  {"group_size_max", c.dataset.group_size_max}};
  j["group"] = {{"group_size", c.group.group_size},
                {"mode", to_string(c.group.mode)},
                {"tau", c.group.tau},
                {"seed", c.group.seed}};
  j["noise"] = {{"max_timestep_deviation", c.noise.max_timestep_deviation},
                {"label_dropout", c.noise.label_dropout}};
  const auto& o = c.train.optimizer;
  j["train"] = {{"iterations", c.train.iterations},
                {"batch_groups", c.train.batch_groups},
                {"lr", o.lr},
                {"beta1", o.beta1},
                {"beta2", o.beta2},
                {"eps", o.eps},
                {"weight_decay", o.weight_decay},
                {"warmup", c.train.warmup},
                {"log_every", c.train.log_every},
                {"checkpoint_every", c.train.checkpoint_every}};
  const auto& s = c.sampler;
  j["sampler"] = {{"mode", to_string(s.mode)},
                  {"steps", s.steps},
                  {"cfg_scale", s.cfg_scale},
                  {"guidance", to_json(s.guidance)},
                  {"group_window", to_json(s.group_window)},
                  {"group_layers", s.group_layers},
                  {"group_size", s.group_size},
                  {"num_groups", s.num_groups},
                  {"class_label", s.class_label},
                  {"seed", s.seed},
                  {"clip_denoised", s.clip_denoised}};
  j["eval"] = {{"num_images", c.eval.num_images},
               {"probe_layer", c.eval.probe_layer},
               {"probe_noise_time", c.eval.probe_noise_time}};
  j["paths"] = {{"dataset", c.paths.dataset}, {"index", c.paths.index}, {"output_dir", c.paths.output_dir}};
  return j;
}

RunConfig run_from_json(const json& j, const std::string& where) {
  Fields root(j, where);
  RunConfig c;
  root.get("version", c.version);
  if (!j.contains("version")) throw ValidationError(where + ": missing version");
  if (c.version != kRunConfigVersion) {
    throw ValidationError(where + ": unsupported version " + std::to_string(c.version));
  }
  std::string mode = to_string(c.mode);
  root.get("mode", mode);
  c.mode = parse_sampler_mode(mode);
  root.get("seed", c.seed);

  if (const json* m = root.sub("model")) c.model = model_config_from_json(m->dump());

  if (const json* s = root.sub("schedule")) {
    Fields f(*s, root.path("schedule"));
    std::string kind = to_string(c.schedule.kind);
    f.get("steps", c.schedule.steps);
    f.get("kind", kind);
    f.get("beta_start", c.schedule.beta_start);
    f.get("beta_end", c.schedule.beta_end);
    f.finish();
    c.schedule.kind = parse_schedule_kind(kind);
  }
  if (const json* s = root.sub("dataset")) {
    Fields f(*s, root.path("dataset"));
    f.get("num_classes", c.dataset.num_classes);
    f.get("images_per_class", c.dataset.images_per_class);
    f.get("image_size", c.dataset.image_size);
    f.get("seed", c.dataset.seed);
    f.get("within_class_spread", c.dataset.within_class_spread);
    f.get("group_size_max", c.dataset.group_size_max);
    f.finish();
  }
  if (const json* s = root.sub("group")) {
    Fields f(*s, root.path("group"));
    std::string qm = to_string(c.group.mode);
    f.get("group_size", c.group.group_size);
    f.get("mode", qm);
    f.get("tau", c.group.tau);
    f.get("seed", c.group.seed);
    f.finish();
    c.group.mode = parse_query_mode(qm);
  }
  if (const json* s = root.sub("noise")) {
    Fields f(*s, root.path("noise"));
    f.get("max_timestep_deviation", c.noise.max_timestep_deviation);
    f.get("label_dropout", c.noise.label_dropout);
    f.finish();
  }
  if (const json* s = root.sub("train")) {
    Fields f(*s, root.path("train"));
    auto& o = c.train.optimizer;
    f.get("iterations", c.train.iterations);
    f.get("batch_groups", c.train.batch_groups);
    f.get("lr", o.lr);
    f.get("beta1", o.beta1);
    f.get("beta2", o.beta2);
    f.get("eps", o.eps);
    f.get("weight_decay", o.weight_decay);
    f.get("warmup", c.train.warmup);
    f.get("log_every", c.train.log_every);
    f.get("checkpoint_every", c.train.checkpoint_every);
    f.finish();
  }
  if (const json* s = root.sub("sampler")) {
    Fields f(*s, root.path("sampler"));
    auto& p = c.sampler;
    std::string mode_text = to_string(p.mode);
    f.get("mode", mode_text);
    p.mode = parse_sampler_mode(mode_text);
    f.get("steps", p.steps);
    f.get("cfg_scale", p.cfg_scale);
    if (const json* w = f.sub("guidance")) p.guidance = window_from_json(*w, f.path("guidance"));
    if (const json* w = f.sub("group_window")) p.group_window = window_from_json(*w, f.path("group_window"));
    f.get("group_layers", p.group_layers);
    f.get("group_size", p.group_size);
    f.get("num_groups", p.num_groups);
    f.get("class_label", p.class_label);
    f.get("seed", p.seed);
    f.get("clip_denoised", p.clip_denoised);
    f.finish();
  }
  if (const json* s = root.sub("eval")) {
    Fields f(*s, root.path("eval"));
    f.get("num_images", c.eval.num_images);
    f.get("probe_layer", c.eval.probe_layer);
    f.get("probe_noise_time", c.eval.probe_noise_time);
    f.finish();
  }
  if (const json* s = root.sub("paths")) {
    Fields f(*s, root.path("paths"));
    f.get("dataset", c.paths.dataset);
    f.get("index", c.paths.index);
    f.get("output_dir", c.paths.output_dir);
    f.finish();
  }
  root.finish();
  c.validate();
  return c;
}

json parse_text(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string(what) + ": " + e.what());
  }
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

NoiseSchedule ScheduleConfig::build() const {
  if (steps < 2) throw ValidationError("schedule: need at least 2 steps");
  return kind == ScheduleKind::kLinear ? NoiseSchedule::linear(steps, beta_start, beta_end)
                                       : NoiseSchedule::scaled_linear(steps);
}

void RunConfig::validate() const {
  if (version != kRunConfigVersion) throw ValidationError("run config: unsupported version");
  model.validate();
  dataset.validate();
  group.validate();
  noise.validate();
  sampler.validate(model);
  if (static_cast<std::size_t>(dataset.num_classes) != model.num_classes) {
    throw ValidationError("run config: dataset and model class counts differ");
  }
  if (static_cast<std::size_t>(dataset.image_size) != model.image_size) {
    throw ValidationError("run config: dataset and model image sizes differ");
  }
  if (group.group_size > model.max_group) throw ValidationError("run config: group size exceeds model.max_group");
  if (mode == SamplerMode::kBaseline && group.group_size != 1) {
    throw ValidationError("run config: baseline mode trains with group_size 1");
  }
  if (noise.max_timestep_deviation >= schedule.steps) {
    throw ValidationError("run config: timestep deviation must be below the schedule length");
  }
  if (train.batch_groups == 0) throw ValidationError("run config: batch_groups must be positive");
  if (!(train.optimizer.lr > 0.0)) throw ValidationError("run config: lr must be positive");
  if (train.log_every == 0) throw ValidationError("run config: log_every must be positive");
  if (eval.probe_layer >= model.depth) throw ValidationError("run config: probe_layer out of range");
  if (!(eval.probe_noise_time >= 0.0 && eval.probe_noise_time <= 1.0)) {
    throw ValidationError("run config: probe_noise_time must be in [0, 1]");
  }
  (void)schedule.build();
}

void RunConfig::validate_paths() const {
  namespace fs = std::filesystem;
  if (paths.dataset.empty()) throw ValidationError("run config: paths.dataset is required");
  if (!fs::exists(paths.dataset)) throw IoError("dataset '" + paths.dataset + "' does not exist");
  if (!paths.index.empty() && !fs::exists(paths.index)) throw IoError("index '" + paths.index + "' does not exist");
}

std::string serialize(const RunConfig& config) { return run_json(config).dump(2) + "\n"; }

RunConfig parse_run_config(const std::string& text) { return run_from_json(parse_text(text, "run config"), "config"); }

RunConfig load_run_config(const std::string& path) { return parse_run_config(slurp(path)); }

void save_run_config(const std::string& path, const RunConfig& config) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << serialize(config);
}

void ExperimentManifest::validate() const {
  if (version != kRunConfigVersion) throw ValidationError("manifest: unsupported version");
  std::set<std::string> tags;
  for (const auto& r : runs) {
    if (r.tag.empty()) throw ValidationError("manifest: empty tag");
    if (r.tag.find_first_of("/\\,\n") != std::string::npos) {
      throw ValidationError("manifest: tag '" + r.tag + "' has path or CSV separators");
    }
    if (!tags.insert(r.tag).second) throw ValidationError("manifest: duplicate tag '" + r.tag + "'");
    r.config.validate();
  }
}

std::string serialize(const ExperimentManifest& manifest) {
  json j;
  j["version"] = manifest.version;
  j["output_dir"] = manifest.output_dir;
  j["runs"] = json::array();
  for (const auto& r : manifest.runs) j["runs"].push_back({{"tag", r.tag}, {"config", run_json(r.config)}});
  return j.dump(2) + "\n";
}

ExperimentManifest parse_manifest(const std::string& text) {
  const json j = parse_text(text, "manifest");
  Fields root(j, "manifest");
  ExperimentManifest m;
  if (!j.is_object() || !j.contains("version")) throw ValidationError("manifest: missing version");
  root.get("version", m.version);
  if (m.version != kRunConfigVersion) throw ValidationError("manifest: unsupported version");
  root.get("output_dir", m.output_dir);
  if (const json* runs = root.sub("runs")) {
    if (!runs->is_array()) throw ValidationError("manifest.runs: expected an array");
    for (std::size_t i = 0; i < runs->size(); ++i) {
      const std::string where = "manifest.runs[" + std::to_string(i) + "]";
      Fields f((*runs)[i], where);
      ManifestEntry e;
      f.get("tag", e.tag);
      const json* cfg = f.sub("config");
      if (!cfg) throw ValidationError(where + ": missing config");
      e.config = run_from_json(*cfg, where + ".config");
      f.finish();
      m.runs.push_back(std::move(e));
    }
  }
  root.finish();
  m.validate();
  return m;
}

ExperimentManifest load_manifest(const std::string& path) { return parse_manifest(slurp(path)); }

}  // namespace groupdiff
