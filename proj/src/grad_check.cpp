#include "groupdiff/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "groupdiff/error.hpp"

namespace groupdiff {

namespace {

double evaluate(const ScalarGraphFn& f, const std::vector<Tensor>& params) {
  std::vector<ag::Var> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(ag::constant(p));
  const double v = f(vars).value().item();
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite function value");
  return v;
}

}  // namespace

double grad_check(const ScalarGraphFn& f, std::vector<Tensor> params, const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw ValidationError("grad_check: step must be > 0");

  std::vector<ag::Var> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(ag::parameter(p));
  const ag::Var out = f(vars);
  if (!std::isfinite(out.value().item())) throw NumericError("grad_check: non-finite function value");
  out.backward();

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const Tensor analytic = vars[pi].grad();
    const std::size_t n = params[pi].numel();
    std::size_t stride = 1;
    if (options.max_entries_per_param > 0 && n > options.max_entries_per_param) {
      stride = (n + options.max_entries_per_param - 1) / options.max_entries_per_param;
    }
    for (std::size_t j = 0; j < n; j += stride) {
      const double saved = params[pi][j];
      params[pi][j] = saved + options.step;
      const double up = evaluate(f, params);
      params[pi][j] = saved - options.step;
      const double down = evaluate(f, params);
      params[pi][j] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[j];
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
  }
  return worst;
}

}  // namespace groupdiff
