#include <Eigen/Core>
#include <cmath>

#include "groupdiff/attention_kernel.hpp"

namespace groupdiff::kernel {

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
}  // namespace

void attention_forward(std::size_t seq, std::size_t width, const double* q, const double* k,
                       const double* v, double* out, double* probs) {
  const auto s = static_cast<Eigen::Index>(seq);
  const auto d = static_cast<Eigen::Index>(width);
  ConstMap Q(q, s, d), K(k, s, d), V(v, s, d);
  MutMap P(probs, s, s), O(out, s, d);

  const double scale = 1.0 / std::sqrt(static_cast<double>(width));
  P.noalias() = (Q * K.transpose()) * scale;
  for (Eigen::Index r = 0; r < s; ++r) {
    double* row = probs + r * s;
    double m = row[0];
    for (Eigen::Index c = 1; c < s; ++c) m = std::max(m, row[c]);
    double z = 0.0;
    for (Eigen::Index c = 0; c < s; ++c) {
      row[c] = std::exp(row[c] - m);
      z += row[c];
    }
    const double inv = 1.0 / z;
    for (Eigen::Index c = 0; c < s; ++c) row[c] *= inv;
  }
  O.noalias() = P * V;
}

void attention_backward(std::size_t seq, std::size_t width, const double* q, const double* k,
                        const double* v, const double* probs, const double* dout, double* dq,
                        double* dk, double* dv) {
  const auto s = static_cast<Eigen::Index>(seq);
  const auto d = static_cast<Eigen::Index>(width);
  ConstMap Q(q, s, d), K(k, s, d), V(v, s, d), P(probs, s, s), dO(dout, s, d);
  MutMap dQ(dq, s, d), dK(dk, s, d), dV(dv, s, d);

  dV.noalias() = P.transpose() * dO;
  RowMat dS = dO * V.transpose();
  // softmax backward: dS_ij = P_ij (dP_ij - sum_k P_ik dP_ik)
  for (Eigen::Index r = 0; r < s; ++r) {
    const double inner = P.row(r).dot(dS.row(r));
    dS.row(r) = (P.row(r).array() * (dS.row(r).array() - inner)).matrix();
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(width));
  dQ.noalias() = (dS * K) * scale;
  dK.noalias() = (dS.transpose() * Q) * scale;
}

}  // namespace groupdiff::kernel
