#include "groupdiff/diffusion.hpp"

#include <cmath>

#include "groupdiff/error.hpp"

namespace groupdiff {

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  if (betas.empty()) throw ValidationError("schedule: need at least one step");
  NoiseSchedule s;
  s.betas = std::move(betas);
  double prod = 1.0;
  for (double b : s.betas) {
    if (!(b > 0.0 && b < 1.0)) throw ValidationError("schedule: every beta must lie in (0, 1)");
    s.alphas.push_back(1.0 - b);
    prod *= 1.0 - b;
    s.alpha_bars.push_back(prod);
  }
  return s;
}

NoiseSchedule NoiseSchedule::linear(std::size_t steps, double beta_start, double beta_end) {
  if (steps == 0) throw ValidationError("schedule: need at least one step");
  std::vector<double> betas(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double f = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    betas[i] = beta_start + f * (beta_end - beta_start);
  }
  return from_betas(std::move(betas));
}

NoiseSchedule NoiseSchedule::scaled_linear(std::size_t steps) {
  if (steps == 0) throw ValidationError("schedule: need at least one step");
  const double scale = 1000.0 / static_cast<double>(steps);
  return linear(steps, 1e-4 * scale, std::min(0.02 * scale, 0.999));
}

void GroupNoisePolicy::validate() const {
  if (!(label_dropout >= 0.0 && label_dropout <= 1.0)) throw ValidationError("label dropout must lie in [0, 1]");
}

void GroupBatch::validate(std::size_t max_timestep_deviation, std::size_t schedule_steps, int null_label) const {
  const std::size_t n = labels.size();
  if (n == 0) throw ValidationError("group batch: empty group");
  if (images.rank() != 4 || images.dim(0) != n || timesteps.size() != n) {
    throw DimensionError("group batch: images/labels/timesteps disagree on N");
  }
  require_same_shape(images, noise, "group batch noise");
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] > null_label) throw ValidationError("group batch: label out of range");
    if (timesteps[i] < 0 || static_cast<std::size_t>(timesteps[i]) >= schedule_steps) {
      throw ValidationError("group batch: timestep out of range");
    }
    if (static_cast<std::size_t>(std::abs(timesteps[i] - timesteps[0])) > max_timestep_deviation) {
      throw ValidationError("group batch: timestep deviation exceeds the group limit");
    }
  }
}

Tensor noise_with_alpha_bar(const Tensor& x0, const Tensor& eps, double alpha_bar) {
  require_same_shape(x0, eps, "forward_noising");
  if (!(alpha_bar >= 0.0 && alpha_bar <= 1.0)) throw ValidationError("alpha_bar must lie in [0, 1]");
  const double a = std::sqrt(alpha_bar), b = std::sqrt(1.0 - alpha_bar);
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

Tensor forward_noising(const Tensor& x0, std::span<const int> t, const Tensor& eps, const NoiseSchedule& schedule) {
  require_same_shape(x0, eps, "forward_noising");
  if (t.empty()) throw DimensionError("forward_noising: no timestep given");
  for (int ti : t) {
    if (ti < 0 || static_cast<std::size_t>(ti) >= schedule.steps()) {
      throw ValidationError("forward_noising: timestep " + std::to_string(ti) + " out of range");
    }
  }
  if (t.size() == 1) return noise_with_alpha_bar(x0, eps, schedule.alpha_bars[static_cast<std::size_t>(t[0])]);
  if (x0.rank() == 0 || x0.dim(0) != t.size()) throw DimensionError("forward_noising: one timestep per row required");
  const std::size_t per = x0.numel() / t.size();
  Tensor out(x0.shape());
  for (std::size_t r = 0; r < t.size(); ++r) {
    const double ab = schedule.alpha_bars[static_cast<std::size_t>(t[r])];
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    for (std::size_t i = r * per; i < (r + 1) * per; ++i) out[i] = a * x0[i] + b * eps[i];
  }
  return out;
}

Tensor forward_noising(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& schedule) {
  const int ts[1] = {t};
  return forward_noising(x0, ts, eps, schedule);
}

std::vector<int> sample_group_timesteps(std::size_t n, const GroupNoisePolicy& policy, const NoiseSchedule& schedule,
                                        Rng& rng) {
  policy.validate();
  if (n == 0) return {};
  const auto T = static_cast<std::int64_t>(schedule.steps());
  const auto sigma = static_cast<std::int64_t>(policy.max_timestep_deviation);
  std::vector<int> t(n);
  t[0] = static_cast<int>(uniform_int(rng, 0, T - 1));
  const std::int64_t lo = std::max<std::int64_t>(0, t[0] - sigma);
  const std::int64_t hi = std::min<std::int64_t>(T - 1, t[0] + sigma);
  for (std::size_t i = 1; i < n; ++i) t[i] = static_cast<int>(uniform_int(rng, lo, hi));
  return t;
}

double group_loss(const Tensor& predicted, const Tensor& target) {
  require_same_shape(predicted, target, "group_loss");
  if (predicted.rank() == 0 || predicted.dim(0) == 0) throw DimensionError("group_loss: empty input");
  const std::size_t n = predicted.dim(0), per = predicted.numel() / n;
  double total = 0.0;
  for (std::size_t m = 0; m < n; ++m) {
    double s = 0.0;
    for (std::size_t i = m * per; i < (m + 1) * per; ++i) {
      const double e = predicted[i] - target[i];
      s += e * e;
    }
    total += s / static_cast<double>(per);
  }
  return total;
}

DroppedLabels label_dropout(std::span<const int> labels, double p, int null_label, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("label dropout must lie in [0, 1]");
  DroppedLabels out{std::vector<int>(labels.begin(), labels.end()), bernoulli(rng, p)};
  if (out.dropped) {
    for (auto& l : out.labels) l = null_label;
  }
  return out;
}

}  // namespace groupdiff
