#pragma once

#include <cmath>
#include <vector>

#include "groupdiff/tensor.hpp"

namespace groupdiff::testing {

// Brute-force group attention: for each group of n consecutive images, build
// the (n·L)×(n·L) score matrix per head with explicit loops and apply softmax.
// Also returns the (n·L)×(n·L) head-averaged weights per group when asked.
inline Tensor brute_group_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                                    std::size_t n, std::vector<std::vector<double>>* weights = nullptr) {
  const std::size_t b = q.dim(0), l = q.dim(1), c = q.dim(2), dh = c / heads, s = n * l;
  Tensor out(q.shape());
  for (std::size_t g = 0; g < b / n; ++g) {
    std::vector<double> avg(s * s, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < s; ++i) {
        const std::size_t bi = g * n + i / l, ti = i % l;
        std::vector<double> w(s);
        double mx = -INFINITY;
        for (std::size_t j = 0; j < s; ++j) {
          const std::size_t bj = g * n + j / l, tj = j % l;
          double d = 0.0;
          for (std::size_t e = 0; e < dh; ++e) d += q.at({bi, ti, h * dh + e}) * k.at({bj, tj, h * dh + e});
          w[j] = d / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, w[j]);
        }
        double z = 0.0;
        for (auto& x : w) z += (x = std::exp(x - mx));
        for (std::size_t j = 0; j < s; ++j) {
          const std::size_t bj = g * n + j / l, tj = j % l;
          const double a = w[j] / z;
          avg[i * s + j] += a / static_cast<double>(heads);
          for (std::size_t e = 0; e < dh; ++e) out.at({bi, ti, h * dh + e}) += a * v.at({bj, tj, h * dh + e});
        }
      }
    }
    if (weights) weights->push_back(std::move(avg));
  }
  return out;
}

}  // namespace groupdiff::testing
