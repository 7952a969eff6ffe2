#include "groupdiff/optim.hpp"

#include <cmath>

#include "groupdiff/error.hpp"

namespace groupdiff {

AdamW::AdamW(AdamWConfig config) : config_(config) {
  if (!(config_.lr > 0.0)) throw ValidationError("AdamW: lr must be > 0");
  if (config_.beta1 < 0.0 || config_.beta1 >= 1.0 || config_.beta2 < 0.0 || config_.beta2 >= 1.0) {
    throw ValidationError("AdamW: betas must lie in [0, 1)");
  }
  if (config_.weight_decay < 0.0) throw ValidationError("AdamW: weight decay must be >= 0");
}

void AdamW::set_lr(double lr) {
  if (!(lr > 0.0)) throw ValidationError("AdamW: lr must be > 0");
  config_.lr = lr;
}

void AdamW::step(std::span<Tensor> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) throw DimensionError("AdamW: params/grads count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(params[i], grads[i], "AdamW");
    grads[i].require_finite("AdamW gradient");
  }
  if (state_.first_moment.empty()) {
    for (const auto& p : params) {
      state_.first_moment.emplace_back(p.shape());
      state_.second_moment.emplace_back(p.shape());
    }
  } else if (state_.first_moment.size() != params.size()) {
    throw DimensionError("AdamW: parameter set changed between steps");
  }

  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  const double decay = 1.0 - config_.lr * config_.weight_decay;

  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(params[i], state_.first_moment[i], "AdamW moments");
    double* p = params[i].data();
    const double* g = grads[i].data();
    double* m = state_.first_moment[i].data();
    double* v = state_.second_moment[i].data();
    for (std::size_t j = 0; j < params[i].numel(); ++j) {
      p[j] *= decay;
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      p[j] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
}

}  // namespace groupdiff
