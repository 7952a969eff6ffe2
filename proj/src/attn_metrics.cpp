#include "groupdiff/attn_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "groupdiff/error.hpp"
#include "groupdiff/tolerances.hpp"

namespace groupdiff {

AttentionBlockSums block_sums(std::span<const double> weights, std::size_t n, std::size_t tokens,
                              std::size_t heads) {
  if (n == 0 || tokens == 0 || heads == 0) throw DimensionError("block_sums: empty geometry");
  const std::size_t s = n * tokens;
  if (weights.size() != heads * s * s) {
    throw DimensionError("block_sums: expected " + std::to_string(heads * s * s) + " weights, got " +
                         std::to_string(weights.size()));
  }
  AttentionBlockSums out{0, 0, 0, n, std::vector<double>(n * n, 0.0)};
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t q = 0; q < s; ++q) {
      const double* row = weights.data() + (h * s + q) * s;
      double total = 0.0;
      for (std::size_t k = 0; k < s; ++k) {
        if (!(row[k] >= 0.0) || !std::isfinite(row[k])) throw NumericError("block_sums: negative or non-finite weight");
        total += row[k];
      }
      if (std::abs(total - 1.0) > tol::kAttentionRowSum) throw NumericError("block_sums: attention row is not stochastic");
      const std::size_t i = q / tokens;
      for (std::size_t j = 0; j < n; ++j) {
        double m = 0.0;
        for (std::size_t k = j * tokens; k < (j + 1) * tokens; ++k) m += row[k];
        out.at(i, j) += m;
      }
    }
  }
  const double norm = 1.0 / static_cast<double>(tokens * heads);
  for (auto& v : out.mass) v *= norm;
  return out;
}

std::optional<double> cross_sample_score(std::span<const double> p_cross) {
  if (p_cross.empty()) return std::nullopt;
  const double mx = *std::max_element(p_cross.begin(), p_cross.end());
  const double mean = std::accumulate(p_cross.begin(), p_cross.end(), 0.0) / static_cast<double>(p_cross.size());
  if (mx <= 0.0) return 0.0;
  return (mx - mean) / mx;
}

std::vector<ImageCrossStats> cross_stats(const AttentionBlockSums& block) {
  const std::size_t n = block.n;
  if (n == 0 || block.mass.size() != n * n) throw DimensionError("cross_stats: malformed block");
  std::vector<ImageCrossStats> out(n);
  std::vector<double> cross;
  for (std::size_t i = 0; i < n; ++i) {
    cross.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) cross.push_back(block.at(i, j));
    }
    out[i].p_self = block.at(i, i);
    if (!cross.empty()) {
      out[i].p_cross_max = *std::max_element(cross.begin(), cross.end());
      out[i].p_cross_mean = std::accumulate(cross.begin(), cross.end(), 0.0) / static_cast<double>(cross.size());
    }
    out[i].s_cross = cross_sample_score(cross);
  }
  return out;
}

AttentionBlockSums average_blocks(std::span<const AttentionBlockSums> records) {
  if (records.empty()) throw ValidationError("no attention records captured");
  const std::size_t n = records.front().n;
  AttentionBlockSums avg{records.front().layer, records.front().step, 0, n, std::vector<double>(n * n, 0.0)};
  for (const auto& r : records) {
    if (r.n != n) throw DimensionError("attention records mix group sizes");
    for (std::size_t i = 0; i < n * n; ++i) avg.mass[i] += r.mass[i];
  }
  for (auto& v : avg.mass) v /= static_cast<double>(records.size());
  return avg;
}

namespace {

double score_block(const AttentionBlockSums& b, ScoreLevel level) {
  const auto stats = cross_stats(b);
  if (level == ScoreLevel::kImage) {
    double s = 0.0;
    for (const auto& st : stats) s += *st.s_cross;
    return s / static_cast<double>(stats.size());
  }
  double mean = 0.0, mx = 0.0;
  for (const auto& st : stats) {
    mean += st.p_cross_mean;
    mx += st.p_cross_max;
  }
  return mx > 0.0 ? (mx - mean) / mx : 0.0;
}

}  // namespace

double aggregate_s_cross(std::span<const AttentionBlockSums> records, ScoreAggregation aggregation,
                         ScoreLevel level) {
  if (records.empty()) throw ValidationError("aggregate_s_cross: empty capture");
  if (records.front().n < 2) throw ValidationError("aggregate_s_cross: S_cross needs a group of at least 2");
  if (aggregation == ScoreAggregation::kAverageThenScore) return score_block(average_blocks(records), level);
  double total = 0.0;
  for (const auto& r : records) total += score_block(r, level);
  return total / static_cast<double>(records.size());
}

StepProfile step_profile(std::span<const AttentionBlockSums> records) {
  if (records.empty()) throw ValidationError("step_profile: empty capture");
  std::map<std::size_t, std::pair<double, double>> sums;
  std::map<std::size_t, std::size_t> counts;
  for (const auto& r : records) {
    for (const auto& st : cross_stats(r)) {
      auto& [mean, mx] = sums[r.step];
      mean += st.p_cross_mean;
      mx += st.p_cross_max;
      ++counts[r.step];
    }
  }
  StepProfile p;
  for (const auto& [step, s] : sums) {
    const double c = static_cast<double>(counts[step]);
    p.steps.push_back(step);
    p.p_cross_mean.push_back(s.first / c);
    p.p_cross_max.push_back(s.second / c);
  }
  return p;
}

LayerProfile layer_profile(std::span<const AttentionBlockSums> records) {
  if (records.empty()) throw ValidationError("layer_profile: empty capture");
  std::map<std::size_t, std::pair<double, double>> sums;
  std::map<std::size_t, std::size_t> counts;
  for (const auto& r : records) {
    for (const auto& st : cross_stats(r)) {
      auto& [mean, mx] = sums[r.layer];
      mean += st.p_cross_mean;
      mx += st.p_cross_max;
      ++counts[r.layer];
    }
  }
  LayerProfile p;
  for (const auto& [layer, s] : sums) {
    const double c = static_cast<double>(counts[layer]);
    p.layers.push_back(layer);
    p.p_cross_mean.push_back(s.first / c);
    p.p_cross_max.push_back(s.second / c);
  }
  return p;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("pearson: length mismatch");
  if (x.size() < 2) throw ValidationError("pearson: need at least two points");
  auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double e) { return e == v.front(); });
  };
  if (constant(x) || constant(y)) throw NumericError("pearson: degenerate variance");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) throw NumericError("pearson: degenerate variance");
  return sxy / std::sqrt(sxx * syy);
}

namespace {

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = ranks(x), ry = ranks(y);
  return pearson(rx, ry);
}

double fid_correlation(std::span<const std::pair<double, double>> pairs) {
  if (pairs.size() < 3) throw ValidationError("fid_correlation: need at least 3 pairs");
  std::vector<double> x, y;
  for (const auto& [s, q] : pairs) {
    x.push_back(s);
    y.push_back(q);
  }
  return pearson(x, y);
}

CrossConditionResult cross_condition_probe(const SamplerPlan& reference, int new_class, const Denoiser& denoiser,
                                           const NoiseSchedule& schedule) {
  if (reference.num_groups != 1) throw ValidationError("cross_condition_probe: reference plan must hold one group");
  if (reference.group_size < 3) throw ValidationError("cross_condition_probe: needs a group of at least 3");
  if (denoiser.output_head_is_zero()) {
    throw ValidationError("cross_condition_probe: model is untrained (zero output head), probe is meaningless");
  }
  const std::size_t n = reference.group_size;
  SamplerPlan plan = reference;
  plan.capture_attention = true;
  if (plan.member_seeds.empty()) {
    for (std::size_t m = 0; m < n; ++m) plan.member_seeds.push_back(derive_seed(plan.seed, 0x5a, m));
  }
  if (plan.member_labels.empty()) plan.member_labels.assign(n, plan.class_label);
  const SampleTrace ref = generate(plan, denoiser, schedule);

  CrossConditionResult res;
  res.attention_from_anchor.assign(n, 0.0);
  if (!ref.attention.empty()) {
    const auto avg = average_blocks(ref.attention);
    for (std::size_t j = 0; j < n; ++j) res.attention_from_anchor[j] = avg.at(0, j);
  }
  for (std::size_t j = 1; j < n; ++j) res.ranking.push_back(j);
  std::stable_sort(res.ranking.begin(), res.ranking.end(), [&](std::size_t a, std::size_t b) {
    return res.attention_from_anchor[a] > res.attention_from_anchor[b];
  });

  const std::size_t per = ref.images.numel() / n;
  plan.capture_attention = false;
  for (std::size_t j = 0; j < n; ++j) {
    SamplerPlan changed = plan;
    changed.member_labels[j] = new_class;
    const SampleTrace alt = generate(changed, denoiser, schedule);
    double d = 0.0;
    for (std::size_t i = 0; i < per; ++i) {
      const double e = alt.images[i] - ref.images[i];
      d += e * e;
    }
    res.anchor_delta.push_back(std::sqrt(d));
  }
  return res;
}

}  // namespace groupdiff
