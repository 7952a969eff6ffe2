#pragma once

#include <cstddef>
#include <vector>

namespace groupdiff {

/// Image-to-image attention mass of one group at one (layer, step).
///
/// mass[i·n + j] is the attention that image i's query tokens place on image
/// j's key tokens, summed over queries and heads and divided by L·heads, so
/// every row sums to one.
struct AttentionBlockSums {
  std::size_t layer = 0;
  std::size_t step = 0;
  std::size_t group = 0;
  std::size_t n = 0;
  std::vector<double> mass;

  double at(std::size_t i, std::size_t j) const { return mass[i * n + j]; }
  double& at(std::size_t i, std::size_t j) { return mass[i * n + j]; }

  bool operator==(const AttentionBlockSums&) const = default;
};

}  // namespace groupdiff
