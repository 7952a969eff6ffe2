#include "groupdiff/eval.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "groupdiff/error.hpp"
#include "groupdiff/rng.hpp"
#include "groupdiff/tolerances.hpp"

namespace groupdiff {

namespace {

using Mat = Eigen::MatrixXd;

Mat to_matrix(const FeatureGaussian& g) {
  const auto f = static_cast<Eigen::Index>(g.dim());
  Mat m(f, f);
  for (Eigen::Index i = 0; i < f; ++i) {
    for (Eigen::Index j = 0; j < f; ++j) m(i, j) = g.covariance[static_cast<std::size_t>(i * f + j)];
  }
  return m;
}

// Principal square root of a symmetric PSD matrix. Eigenvalues at or below
// the solver's noise floor count as zero; clearly negative ones are rejected.
Mat psd_sqrt(const Mat& m, const char* what) {
  const Mat sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(sym);
  if (es.info() != Eigen::Success) throw NumericError(std::string(what) + ": eigendecomposition failed");
  const Eigen::VectorXd& vals = es.eigenvalues();
  if (vals.size() == 0) return sym;
  if (vals.minCoeff() < -tol::kPsdClamp) throw NumericError(std::string(what) + ": matrix is not positive semi-definite");
  const double floor = std::max(vals.cwiseAbs().maxCoeff(), 1.0) * static_cast<double>(vals.size()) * 1e-14;
  Eigen::VectorXd roots(vals.size());
  for (Eigen::Index i = 0; i < vals.size(); ++i) roots(i) = vals(i) > floor ? std::sqrt(vals(i)) : 0.0;
  const Mat r = es.eigenvectors() * roots.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (r + r.transpose());
}

}  // namespace

FeatureGaussian fit_gaussian(std::span<const std::vector<double>> rows) {
  if (rows.size() < 2) throw ValidationError("fit_gaussian: need at least two samples");
  const std::size_t f = rows.front().size();
  FeatureGaussian g;
  g.count = rows.size();
  g.mean.assign(f, 0.0);
  for (const auto& r : rows) {
    if (r.size() != f) throw DimensionError("fit_gaussian: ragged feature rows");
    for (std::size_t j = 0; j < f; ++j) g.mean[j] += r[j];
  }
  for (auto& m : g.mean) m /= static_cast<double>(rows.size());
  g.covariance.assign(f * f, 0.0);
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < f; ++i) {
      const double di = r[i] - g.mean[i];
      for (std::size_t j = i; j < f; ++j) g.covariance[i * f + j] += di * (r[j] - g.mean[j]);
    }
  }
  const double denom = static_cast<double>(rows.size() - 1);
  for (std::size_t i = 0; i < f; ++i) {
    for (std::size_t j = i; j < f; ++j) {
      g.covariance[i * f + j] /= denom;
      g.covariance[j * f + i] = g.covariance[i * f + j];
    }
  }
  return g;
}

double frechet_distance(const FeatureGaussian& a, const FeatureGaussian& b) {
  const std::size_t f = a.dim();
  if (f == 0 || b.dim() != f) throw DimensionError("frechet_distance: feature widths differ");
  if (a.covariance.size() != f * f || b.covariance.size() != f * f) {
    throw DimensionError("frechet_distance: covariance shape mismatch");
  }
  double mean_term = 0.0;
  for (std::size_t i = 0; i < f; ++i) mean_term += (a.mean[i] - b.mean[i]) * (a.mean[i] - b.mean[i]);

  const Mat sa = to_matrix(a), sb = to_matrix(b);
  const Mat ra = psd_sqrt(sa, "frechet_distance(a)"), rb = psd_sqrt(sb, "frechet_distance(b)");
  // Tr((√Σa Σb √Σa)^{1/2}) equals the nuclear norm of √Σa √Σb.
  const double tr_sqrt = Eigen::JacobiSVD<Mat>(ra * rb).singularValues().sum();

  const double d = mean_term + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
  return std::max(d, 0.0);
}

std::vector<std::vector<double>> encode_batch(const Tensor& pixels) {
  if (pixels.rank() != 4) throw DimensionError("encode_batch: expected [N,H,W,3]");
  const std::size_t n = pixels.dim(0), per = pixels.numel() / std::max<std::size_t>(n, 1);
  std::vector<std::vector<double>> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor img(Shape{pixels.dim(1), pixels.dim(2), pixels.dim(3)},
               std::vector<double>(pixels.data() + i * per, pixels.data() + (i + 1) * per));
    out.push_back(encode(img));
  }
  return out;
}

double fid_proxy(const Tensor& generated_pixels, const Tensor& reference_pixels) {
  const std::size_t need = kFeatureDim + 1;
  if (generated_pixels.rank() != 4 || generated_pixels.dim(0) < need) {
    throw ValidationError("fid_proxy: generated set needs at least " + std::to_string(need) + " images");
  }
  if (reference_pixels.rank() != 4 || reference_pixels.dim(0) < need) {
    throw ValidationError("fid_proxy: reference set needs at least " + std::to_string(need) + " images");
  }
  const auto fg = encode_batch(generated_pixels);
  const auto fr = encode_batch(reference_pixels);
  return frechet_distance(fit_gaussian(fg), fit_gaussian(fr));
}

ProbeResult ridge_probe(std::span<const std::vector<double>> features, std::span<const int> labels,
                        std::size_t num_classes, std::uint64_t seed, double train_fraction, double ridge) {
  if (features.size() != labels.size() || features.empty()) throw DimensionError("ridge_probe: features/labels mismatch");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ValidationError("ridge_probe: train fraction in (0,1)");
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) throw ValidationError("ridge_probe: label out of range");
  }
  if (std::all_of(labels.begin(), labels.end(), [&](int l) { return l == labels.front(); })) {
    throw ValidationError("ridge_probe: dataset has a single class");
  }
  const std::size_t n = features.size(), f = features.front().size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 0x9b));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(train_fraction * n)), 1, n - 1);

  std::vector<double> mu(f, 0.0), sd(f, 0.0);
  for (std::size_t i = 0; i < n_train; ++i) {
    for (std::size_t j = 0; j < f; ++j) mu[j] += features[order[i]][j];
  }
  for (auto& m : mu) m /= static_cast<double>(n_train);
  for (std::size_t i = 0; i < n_train; ++i) {
    for (std::size_t j = 0; j < f; ++j) sd[j] += std::pow(features[order[i]][j] - mu[j], 2);
  }
  for (auto& s : sd) s = std::sqrt(s / static_cast<double>(n_train)) + 1e-12;

  auto design = [&](std::size_t row) {
    Eigen::VectorXd x(static_cast<Eigen::Index>(f + 1));
    for (std::size_t j = 0; j < f; ++j) x(static_cast<Eigen::Index>(j)) = (features[row][j] - mu[j]) / sd[j];
    x(static_cast<Eigen::Index>(f)) = 1.0;
    return x;
  };
  const auto F1 = static_cast<Eigen::Index>(f + 1), K = static_cast<Eigen::Index>(num_classes);
  Mat gram = Mat::Zero(F1, F1), rhs = Mat::Zero(F1, K);
  for (std::size_t i = 0; i < n_train; ++i) {
    const auto x = design(order[i]);
    gram.noalias() += x * x.transpose();
    rhs.col(labels[order[i]]) += x;
  }
  gram.diagonal().array() += ridge * static_cast<double>(n_train);
  const Mat w = gram.ldlt().solve(rhs);

  std::size_t correct = 0;
  for (std::size_t i = n_train; i < n; ++i) {
    const Eigen::VectorXd scores = w.transpose() * design(order[i]);
    Eigen::Index best = 0;
    scores.maxCoeff(&best);
    if (best == labels[order[i]]) ++correct;
  }
  ProbeResult r;
  r.train_size = n_train;
  r.test_size = n - n_train;
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.test_size);
  return r;
}

ProbeResult linear_probe(const Denoiser& denoiser, const Dataset& dataset, const NoiseSchedule& schedule,
                         const LinearProbeOptions& options) {
  const auto& cfg = denoiser.config();
  if (options.layer >= cfg.depth) throw ValidationError("linear_probe: layer out of range");
  if (!(options.noise_time >= 0.0 && options.noise_time <= 1.0)) throw ValidationError("linear_probe: noise time in [0,1]");
  if (dataset.image_size != cfg.image_size) throw ValidationError("linear_probe: dataset/model image size differ");
  const int t = static_cast<int>(std::lround((1.0 - options.noise_time) * static_cast<double>(schedule.steps() - 1)));

  std::vector<std::vector<double>> feats;
  std::vector<int> labels;
  Rng rng(derive_seed(options.seed, 0x9c));
  const std::size_t batch = std::max<std::size_t>(1, options.batch);
  for (std::size_t start = 0; start < dataset.images.size(); start += batch) {
    const std::size_t count = std::min(batch, dataset.images.size() - start);
    std::vector<std::size_t> pos(count);
    std::iota(pos.begin(), pos.end(), start);
    const Tensor x0 = to_model_space(stack_pixels(dataset, pos));
    const Tensor eps = randn(x0.shape(), rng);
    const Tensor xt = forward_noising(x0, t, eps, schedule);
    std::vector<int> ts(count, t), null_labels(count, cfg.null_class());
    ForwardOptions fo;
    fo.feature_layer = options.layer;
    const auto res = denoiser.forward(xt, ts, null_labels, fo);
    const std::size_t c = res.features.dim(1);
    for (std::size_t i = 0; i < count; ++i) {
      feats.emplace_back(res.features.data() + i * c, res.features.data() + (i + 1) * c);
      labels.push_back(dataset.images[start + i].class_id);
    }
  }
  auto r = ridge_probe(feats, labels, static_cast<std::size_t>(dataset.num_classes), options.seed,
                       options.train_fraction);
  r.layer = options.layer;
  return r;
}

SweepResult cfg_sweep(const SamplerPlan& plan_template, std::span<const double> scales, const Denoiser& denoiser,
                      const NoiseSchedule& schedule, const Tensor& reference_pixels) {
  if (scales.empty()) throw ValidationError("cfg_sweep: empty scale grid");
  SweepResult out;
  for (double s : scales) {
    SamplerPlan plan = plan_template;
    plan.cfg_scale = s;
    const SampleTrace trace = generate(plan, denoiser, schedule);
    out.rows.push_back({s, fid_proxy(to_pixel_space(trace.images), reference_pixels)});
  }
  for (std::size_t i = 1; i < out.rows.size(); ++i) {
    if (out.rows[i].fid < out.rows[out.argmin].fid) out.argmin = i;
  }
  return out;
}

std::vector<double> scale_grid(double lo, double hi, double step) {
  if (!(step > 0.0) || hi < lo) throw ValidationError("scale grid: need step > 0 and hi >= lo");
  std::vector<double> out;
  const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
  for (std::size_t i = 0; i < count; ++i) out.push_back(std::round((lo + step * static_cast<double>(i)) * 1e9) / 1e9);
  return out;
}

}  // namespace groupdiff
