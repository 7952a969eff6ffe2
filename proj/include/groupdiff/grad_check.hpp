#pragma once

#include <functional>
#include <span>
#include <vector>

#include "groupdiff/autograd.hpp"

namespace groupdiff {

using ScalarGraphFn = std::function<ag::Var(std::span<const ag::Var>)>;

struct GradCheckOptions {
  double step = 1e-4;
  /// Check at most this many entries per parameter (evenly strided); 0 = all.
  std::size_t max_entries_per_param = 0;
};

/// Maximum over checked entries of |analytic − central difference| / max(1, |analytic|).
///
/// `f` builds a scalar graph from parameter Vars; it is evaluated once with
/// gradients and twice per checked entry without.
double grad_check(const ScalarGraphFn& f, std::vector<Tensor> params, const GradCheckOptions& options = {});

}  // namespace groupdiff
