#include "groupdiff/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "groupdiff/binary_io.hpp"
#include "groupdiff/error.hpp"
#include "groupdiff/rng.hpp"

namespace groupdiff {

std::string to_string(SamplerMode mode) {
  switch (mode) {
    case SamplerMode::kBaseline: return "baseline";
    case SamplerMode::kGroupDiffF: return "groupdiff_f";
    case SamplerMode::kGroupDiffL: return "groupdiff_l";
  }
  return "?";
}

SamplerMode parse_sampler_mode(const std::string& text) {
  if (text == "baseline") return SamplerMode::kBaseline;
  if (text == "groupdiff_f" || text == "groupdiff-f") return SamplerMode::kGroupDiffF;
  if (text == "groupdiff_l" || text == "groupdiff-l") return SamplerMode::kGroupDiffL;
  throw ValidationError("unknown sampler mode '" + text + "'");
}

void TimeWindow::validate(const char* what) const {
  if (!(lo >= 0.0 && lo <= hi && hi <= 1.0)) {
    throw ValidationError(std::string(what) + ": window must satisfy 0 <= lo <= hi <= 1");
  }
}

TimeWindow parse_time_window(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ValidationError("window '" + text + "' must look like lo:hi");
  TimeWindow w;
  try {
    std::size_t used = 0;
    w.lo = std::stod(text.substr(0, colon), &used);
    if (used != colon) throw ValidationError("bad window");
    const std::string rest = text.substr(colon + 1);
    w.hi = std::stod(rest, &used);
    if (used != rest.size()) throw ValidationError("bad window");
  } catch (const std::exception&) {
    throw ValidationError("window '" + text + "' must look like lo:hi");
  }
  w.validate("window");
  return w;
}

void SamplerPlan::validate(const ModelConfig& model) const {
  if (steps < 1) throw ValidationError("sampler: steps must be >= 1");
  if (!(cfg_scale >= 0.0) || !std::isfinite(cfg_scale)) throw ValidationError("sampler: cfg scale must be >= 0");
  guidance.validate("guidance interval");
  group_window.validate("group window");
  if (group_size < 1) throw ValidationError("sampler: group size must be >= 1");
  if (group_size > model.max_group) throw ValidationError("sampler: group size exceeds the model's slot count");
  if (num_groups < 1) throw ValidationError("sampler: need at least one group");
  for (auto l : group_layers) {
    if (l >= model.depth) throw ValidationError("sampler: group layer out of range");
  }
  auto check_label = [&](int c) {
    if (c < 0 || c >= static_cast<int>(model.num_classes)) throw ValidationError("sampler: class label out of range");
  };
  check_label(class_label);
  if (!group_labels.empty() && group_labels.size() != num_groups) {
    throw ValidationError("sampler: group_labels needs one entry per group");
  }
  for (int c : group_labels) check_label(c);
  if (!member_labels.empty() && member_labels.size() != group_size) {
    throw ValidationError("sampler: member_labels needs one entry per member");
  }
  for (int c : member_labels) check_label(c);
  if (!member_seeds.empty() && member_seeds.size() != num_groups * group_size) {
    throw ValidationError("sampler: member_seeds needs one entry per generated image");
  }
  for (auto s : snapshot_steps) {
    if (s >= steps) throw ValidationError("sampler: snapshot step out of range");
  }
}

Tensor cfg_combine(const Tensor& conditional, const Tensor& unconditional, double scale) {
  require_same_shape(conditional, unconditional, "cfg_combine");
  if (scale == 0.0) return conditional;
  Tensor out(conditional.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = conditional[i] + scale * (conditional[i] - unconditional[i]);
  }
  return out;
}

Tensor predict_scores(const Tensor& x_t, std::span<const int> timesteps, std::span<const int> labels,
                      const Denoiser& denoiser, const ScoreRequest& request) {
  if (x_t.rank() == 0 || x_t.dim(0) == 0) throw ValidationError("predict_scores: empty group");
  if (!request.layer_mask.empty() && request.layer_mask.size() != denoiser.config().depth) {
    throw ValidationError("predict_scores: layer mask must cover every layer");
  }
  ForwardOptions cond;
  cond.group_size = request.group_size;
  cond.layer_group_mask = request.layer_mask;
  cond.group_on = request.mode == SamplerMode::kGroupDiffF && request.group_active;

  ForwardOptions uncond = cond;
  uncond.group_on = request.mode != SamplerMode::kBaseline && request.group_active;
  if (request.capture) uncond.capture = request.capture_layers;
  uncond.capture.enabled = request.capture != nullptr;

  std::vector<int> null_labels(labels.size(), denoiser.config().null_class());
  const Tensor e_c = denoiser.forward(x_t, timesteps, labels, cond).eps;
  ForwardResult u = denoiser.forward(x_t, timesteps, null_labels, uncond);
  if (request.capture) {
    for (auto& rec : u.attention) request.capture->push_back(std::move(rec));
  }
  return cfg_combine(e_c, u.eps, request.cfg_scale);
}

std::vector<int> respaced_timesteps(std::size_t schedule_steps, std::size_t steps) {
  if (steps == 0 || schedule_steps == 0) throw ValidationError("respaced_timesteps: need at least one step");
  if (steps > schedule_steps) throw ValidationError("sampler: more steps than the schedule has");
  std::vector<int> out(steps);
  if (steps == 1) {
    out[0] = static_cast<int>(schedule_steps - 1);
    return out;
  }
  for (std::size_t j = 0; j < steps; ++j) {
    const double f = static_cast<double>(steps - 1 - j) / static_cast<double>(steps - 1);
    out[j] = static_cast<int>(std::lround(f * static_cast<double>(schedule_steps - 1)));
  }
  return out;
}

SampleTrace generate(const SamplerPlan& plan, const Denoiser& denoiser, const NoiseSchedule& schedule) {
  const auto& cfg = denoiser.config();
  plan.validate(cfg);
  const auto taus = respaced_timesteps(schedule.steps(), plan.steps);
  const std::size_t n = plan.group_size, batch = plan.num_groups * n;
  const std::size_t per = cfg.image_size * cfg.image_size * cfg.channels;

  std::vector<int> labels(batch);
  for (std::size_t g = 0; g < plan.num_groups; ++g) {
    for (std::size_t m = 0; m < n; ++m) {
      int c = plan.group_labels.empty() ? plan.class_label : plan.group_labels[g];
      if (!plan.member_labels.empty()) c = plan.member_labels[m];
      labels[g * n + m] = c;
    }
  }

  std::vector<Rng> member_rng;
  member_rng.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    member_rng.emplace_back(plan.member_seeds.empty() ? derive_seed(plan.seed, 0x5a, b) : plan.member_seeds[b]);
  }
  Tensor x(Shape{batch, cfg.image_size, cfg.image_size, cfg.channels});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < per; ++i) x[b * per + i] = standard_normal(member_rng[b]);
  }

  std::vector<bool> layer_mask;
  if (!plan.group_layers.empty()) {
    layer_mask.assign(cfg.depth, false);
    for (auto l : plan.group_layers) layer_mask[l] = true;
  }

  SampleTrace trace;
  trace.num_groups = plan.num_groups;
  trace.group_size = n;
  trace.steps = plan.steps;
  std::vector<int> t(batch);
  for (std::size_t j = 0; j < plan.steps; ++j) {
    const double u = static_cast<double>(j) / static_cast<double>(plan.steps);
    const auto tau = static_cast<std::size_t>(taus[j]);
    std::fill(t.begin(), t.end(), taus[j]);

    ScoreRequest req;
    req.mode = plan.mode;
    req.group_size = n;
    req.group_active = plan.group_window.contains(u);
    req.layer_mask = layer_mask;
    req.cfg_scale = plan.guidance.contains(u) ? plan.cfg_scale : 0.0;
    std::vector<AttentionBlockSums> captured;
    if (plan.capture_attention) {
      req.capture = &captured;
      req.capture_layers = plan.capture_layers;
      req.capture_layers.enabled = true;
    }
    const Tensor eps = predict_scores(x, t, labels, denoiser, req);
    for (auto& rec : captured) {
      rec.step = j;
      trace.attention.push_back(std::move(rec));
    }

    const double ab = schedule.alpha_bars[tau];
    const double ab_prev = j + 1 < plan.steps ? schedule.alpha_bars[static_cast<std::size_t>(taus[j + 1])] : 1.0;
    const double beta = 1.0 - ab / ab_prev;
    const double coef_x0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
    const double coef_xt = std::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab);
    const double var = beta * (1.0 - ab_prev) / (1.0 - ab);
    const double sd = std::sqrt(std::max(var, 0.0));
    const double inv_sqrt_ab = 1.0 / std::sqrt(ab), sqrt_1m_ab = std::sqrt(1.0 - ab);
    const bool last = j + 1 == plan.steps;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
        double x0 = (x[i] - sqrt_1m_ab * eps[i]) * inv_sqrt_ab;
        if (plan.clip_denoised) x0 = std::clamp(x0, -1.0, 1.0);
        double next = coef_x0 * x0 + coef_xt * x[i];
        if (!last) next += sd * standard_normal(member_rng[b]);
        x[i] = next;
      }
    }
    if (!x.all_finite()) throw NumericError("sampler diverged at step " + std::to_string(j));
    if (std::find(plan.snapshot_steps.begin(), plan.snapshot_steps.end(), j) != plan.snapshot_steps.end()) {
      trace.snapshot_steps.push_back(j);
      trace.snapshots.push_back(x);
    }
  }
  trace.images = std::move(x);
  return trace;
}

namespace {
constexpr std::uint32_t kTraceVersion = 1;
}

void write_trace(const std::string& path, const SampleTrace& trace) {
  if (trace.images.rank() != 4) throw DimensionError("write_trace: images must be [B,H,W,Ch]");
  io::BinaryWriter w(path);
  w.magic("GDT1");
  w.u32(kTraceVersion);
  w.u32(static_cast<std::uint32_t>(trace.num_groups));
  w.u32(static_cast<std::uint32_t>(trace.group_size));
  w.u32(static_cast<std::uint32_t>(trace.images.dim(1)));
  w.u32(static_cast<std::uint32_t>(trace.images.dim(2)));
  w.u32(static_cast<std::uint32_t>(trace.images.dim(3)));
  w.u32(static_cast<std::uint32_t>(trace.steps));
  w.f64s(trace.images.values());
  w.u32(static_cast<std::uint32_t>(trace.attention.size()));
  for (const auto& rec : trace.attention) {
    w.u32(static_cast<std::uint32_t>(rec.step));
    w.u32(static_cast<std::uint32_t>(rec.layer));
    w.u32(static_cast<std::uint32_t>(rec.group));
    w.u32(static_cast<std::uint32_t>(rec.n));
    w.f64s(rec.mass);
  }
  w.u32(static_cast<std::uint32_t>(trace.snapshots.size()));
  for (std::size_t i = 0; i < trace.snapshots.size(); ++i) {
    w.u32(static_cast<std::uint32_t>(trace.snapshot_steps[i]));
    w.f64s(trace.snapshots[i].values());
  }
  w.close();
}

SampleTrace read_trace(const std::string& path) {
  io::BinaryReader r(path);
  r.expect_magic("GDT1");
  if (r.u32() != kTraceVersion) throw IoError(path + ": unsupported trace version");
  SampleTrace t;
  t.num_groups = r.u32();
  t.group_size = r.u32();
  const std::size_t h = r.u32(), w = r.u32(), ch = r.u32();
  t.steps = r.u32();
  const std::size_t batch = t.num_groups * t.group_size;
  if (batch == 0 || batch > (1u << 24) || h * w * ch == 0 || h * w * ch > (1u << 24)) {
    throw IoError(path + ": implausible trace geometry");
  }
  t.images = Tensor(Shape{batch, h, w, ch});
  r.f64s(t.images.values());
  const auto records = r.u32();
  for (std::uint32_t i = 0; i < records; ++i) {
    AttentionBlockSums rec;
    rec.step = r.u32();
    rec.layer = r.u32();
    rec.group = r.u32();
    rec.n = r.u32();
    if (rec.n == 0 || rec.n > 4096) throw IoError(path + ": implausible block size");
    rec.mass.resize(rec.n * rec.n);
    r.f64s(rec.mass);
    t.attention.push_back(std::move(rec));
  }
  const auto snaps = r.u32();
  for (std::uint32_t i = 0; i < snaps; ++i) {
    t.snapshot_steps.push_back(r.u32());
    Tensor s(Shape{batch, h, w, ch});
    r.f64s(s.values());
    t.snapshots.push_back(std::move(s));
  }
  if (!r.at_end()) throw IoError(path + ": trailing bytes after trace");
  return t;
}

}  // namespace groupdiff
