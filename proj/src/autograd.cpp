#include "groupdiff/autograd.hpp"

#include <Eigen/Core>
#include <cmath>
#include <unordered_set>

#include "groupdiff/error.hpp"

namespace groupdiff::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using ConstVec = Eigen::Map<const Eigen::RowVectorXd>;
using MutVec = Eigen::Map<Eigen::RowVectorXd>;

Tensor& grad_of(Node& n) {
  if (n.grad.shape() != n.value.shape()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

bool wants_grad(const Var& v) { return v.defined() && v.requires_grad(); }

Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> bw) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  for (const auto& in : inputs) {
    if (wants_grad(in)) {
      node->requires_grad = true;
      break;
    }
  }
  if (node->requires_grad) {
    node->parents.reserve(inputs.size());
    for (auto& in : inputs) {
      if (in.defined()) node->parents.push_back(in.ptr());
    }
    node->backward = std::move(bw);
  }
  return Var(std::move(node));
}

// Split [.., C] tensors into (rows, C).
std::pair<std::size_t, std::size_t> rows_cols(const Tensor& t) {
  if (t.rank() == 0) throw DimensionError("rank-0 tensor");
  const std::size_t cols = t.shape().back();
  return {cols ? t.numel() / cols : 0, cols};
}

// (B, L, C) view of a rank-3 tensor, validated against a [B, C] companion.
struct BlcDims {
  std::size_t b, l, c;
};

BlcDims blc_dims(const Tensor& x, const Tensor& per_batch, const char* op) {
  if (x.rank() != 3) throw DimensionError(std::string(op) + ": expected [B,L,C], got " + shape_str(x.shape()));
  BlcDims d{x.dim(0), x.dim(1), x.dim(2)};
  if (per_batch.shape() != Shape{d.b, d.c}) {
    throw DimensionError(std::string(op) + ": per-member tensor " + shape_str(per_batch.shape()) +
                         " does not match " + shape_str(x.shape()));
  }
  return d;
}

}  // namespace

Tensor Var::grad() const {
  if (!node_) throw ValidationError("grad() on undefined Var");
  if (node_->grad.shape() != node_->value.shape()) return Tensor(node_->value.shape());
  return node_->grad;
}

void Var::backward() const {
  if (!node_) throw ValidationError("backward() on undefined Var");
  if (node_->value.numel() != 1) throw DimensionError("backward() needs a single-element output");
  if (!node_->requires_grad) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  grad_of(*node_).fill(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node& n = **it;
    if (n.backward && n.grad.shape() == n.value.shape()) n.backward(n);
  }
}

Var parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
  auto pa = a.ptr(), pb = b.ptr();
  return make_op(std::move(out), {a, b}, [pa, pb](Node& self) {
    for (auto* p : {pa.get(), pb.get()}) {
      if (!p->requires_grad) continue;
      auto& g = grad_of(*p);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) { return add(a, scale(b, -1.0)); }

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  auto pa = a.ptr(), pb = b.ptr();
  return make_op(std::move(out), {a, b}, [pa, pb](Node& self) {
    if (pa->requires_grad) {
      auto& g = grad_of(*pa);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      auto& g = grad_of(*pb);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * pa->value[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& x : out.values()) x *= s;
  auto pa = a.ptr();
  return make_op(std::move(out), {a}, [pa, s](Node& self) {
    auto& g = grad_of(*pa);
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += s * self.grad[i];
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double x : a.value().values()) s += x;
  auto pa = a.ptr();
  return make_op(Tensor::scalar(s), {a}, [pa](Node& self) {
    auto& g = grad_of(*pa);
    const double d = self.grad[0];
    for (auto& x : g.values()) x += d;
  });
}

Var mean(const Var& a) {
  const auto n = a.value().numel();
  if (n == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (wv.rank() != 2) throw DimensionError("linear: weight must be [K,M]");
  auto [rows, k] = rows_cols(xv);
  if (k != wv.dim(0)) {
    throw DimensionError("linear: input " + shape_str(xv.shape()) + " vs weight " + shape_str(wv.shape()));
  }
  const std::size_t m = wv.dim(1);
  if (b.defined() && b.value().shape() != Shape{m}) throw DimensionError("linear: bias shape mismatch");

  Shape out_shape = xv.shape();
  out_shape.back() = m;
  Tensor out(out_shape);
  const auto R = static_cast<Eigen::Index>(rows), K = static_cast<Eigen::Index>(k),
             M = static_cast<Eigen::Index>(m);
  {
    ConstMap X(xv.data(), R, K), W(wv.data(), K, M);
    MutMap Y(out.data(), R, M);
    Y.noalias() = X * W;
    if (b.defined()) Y.rowwise() += ConstVec(b.value().data(), M);
  }
  auto px = x.ptr(), pw = w.ptr();
  std::shared_ptr<Node> pb = b.defined() ? b.ptr() : nullptr;
  return make_op(std::move(out), {x, w, b}, [px, pw, pb, R, K, M](Node& self) {
    ConstMap dY(self.grad.data(), R, M);
    if (px->requires_grad) {
      MutMap dX(grad_of(*px).data(), R, K);
      dX.noalias() += dY * ConstMap(pw->value.data(), K, M).transpose();
    }
    if (pw->requires_grad) {
      MutMap dW(grad_of(*pw).data(), K, M);
      dW.noalias() += ConstMap(px->value.data(), R, K).transpose() * dY;
    }
    if (pb && pb->requires_grad) {
      MutVec db(grad_of(*pb).data(), M);
      db += dY.colwise().sum();
    }
  });
}

Var silu(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.values()) v = v / (1.0 + std::exp(-v));
  auto px = x.ptr();
  return make_op(std::move(out), {x}, [px](Node& self) {
    auto& g = grad_of(*px);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double v = px->value[i];
      const double s = 1.0 / (1.0 + std::exp(-v));
      g[i] += self.grad[i] * s * (1.0 + v * (1.0 - s));
    }
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.values()) v = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  auto px = x.ptr();
  return make_op(std::move(out), {x}, [px](Node& self) {
    auto& g = grad_of(*px);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double v = px->value[i];
      const double u = kGeluC * (v + kGeluA * v * v * v);
      const double t = std::tanh(u);
      const double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      g[i] += self.grad[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
    }
  });
}

Var layer_norm(const Var& x, double eps) {
  const Tensor& xv = x.value();
  auto [rows, c] = rows_cols(xv);
  Tensor out(xv.shape());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * c;
    double* o = out.data() + r * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += in[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < c; ++j) o[j] = (in[j] - mu) * is;
  }
  auto px = x.ptr();
  Tensor normalized = out;
  return make_op(std::move(out), {x},
                 [px, rows, c, inv_std = std::move(inv_std), y = std::move(normalized)](Node& self) {
                   auto& g = grad_of(*px);
                   for (std::size_t r = 0; r < rows; ++r) {
                     const double* dy = self.grad.data() + r * c;
                     const double* yr = y.data() + r * c;
                     double mean_dy = 0.0, mean_dyy = 0.0;
                     for (std::size_t j = 0; j < c; ++j) {
                       mean_dy += dy[j];
                       mean_dyy += dy[j] * yr[j];
                     }
                     mean_dy /= static_cast<double>(c);
                     mean_dyy /= static_cast<double>(c);
                     double* gx = g.data() + r * c;
                     for (std::size_t j = 0; j < c; ++j) {
                       gx[j] += inv_std[r] * (dy[j] - mean_dy - yr[j] * mean_dyy);
                     }
                   }
                 });
}

Var add_token_broadcast(const Var& x, const Var& table) {
  const Tensor& xv = x.value();
  if (xv.rank() != 3 || table.value().shape() != Shape{xv.dim(1), xv.dim(2)}) {
    throw DimensionError("add_token_broadcast: " + shape_str(xv.shape()) + " + " + shape_str(table.value().shape()));
  }
  const std::size_t per = xv.dim(1) * xv.dim(2);
  Tensor out = xv;
  for (std::size_t b = 0; b < xv.dim(0); ++b) {
    for (std::size_t i = 0; i < per; ++i) out[b * per + i] += table.value()[i];
  }
  auto px = x.ptr(), pt = table.ptr();
  return make_op(std::move(out), {x, table}, [px, pt, per](Node& self) {
    const std::size_t batch = self.value.dim(0);
    if (px->requires_grad) {
      auto& g = grad_of(*px);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (pt->requires_grad) {
      auto& g = grad_of(*pt);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < per; ++i) g[i] += self.grad[b * per + i];
      }
    }
  });
}

Var add_sample_embedding(const Var& x, const Var& slots, std::size_t group_size) {
  const Tensor& xv = x.value();
  const Tensor& sv = slots.value();
  if (xv.rank() != 3 || sv.rank() != 2 || sv.dim(1) != xv.dim(2)) {
    throw DimensionError("add_sample_embedding: " + shape_str(xv.shape()) + " with table " + shape_str(sv.shape()));
  }
  if (group_size == 0 || xv.dim(0) % group_size != 0) {
    throw DimensionError("add_sample_embedding: batch " + std::to_string(xv.dim(0)) +
                         " is not a multiple of group size " + std::to_string(group_size));
  }
  if (group_size > sv.dim(0)) {
    throw DimensionError("add_sample_embedding: group size " + std::to_string(group_size) +
                         " exceeds slot table rows " + std::to_string(sv.dim(0)));
  }
  const std::size_t batch = xv.dim(0), tokens = xv.dim(1), c = xv.dim(2);
  Tensor out = xv;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* slot = sv.data() + (b % group_size) * c;
    for (std::size_t l = 0; l < tokens; ++l) {
      double* o = out.data() + (b * tokens + l) * c;
      for (std::size_t j = 0; j < c; ++j) o[j] += slot[j];
    }
  }
  auto px = x.ptr(), ps = slots.ptr();
  return make_op(std::move(out), {x, slots}, [px, ps, group_size, batch, tokens, c](Node& self) {
    if (px->requires_grad) {
      auto& g = grad_of(*px);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (ps->requires_grad) {
      auto& g = grad_of(*ps);
      for (std::size_t b = 0; b < batch; ++b) {
        double* gs = g.data() + (b % group_size) * c;
        for (std::size_t l = 0; l < tokens; ++l) {
          const double* d = self.grad.data() + (b * tokens + l) * c;
          for (std::size_t j = 0; j < c; ++j) gs[j] += d[j];
        }
      }
    }
  });
}

Var embedding(const Var& table, std::span<const int> rows) {
  const Tensor& tv = table.value();
  if (tv.rank() != 2) throw DimensionError("embedding: table must be rank 2");
  const std::size_t c = tv.dim(1);
  Tensor out(Shape{rows.size(), c});
  std::vector<int> idx(rows.begin(), rows.end());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= tv.dim(0)) {
      throw DimensionError("embedding: row " + std::to_string(idx[i]) + " out of range");
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(idx[i]) * c, c, out.data() + i * c);
  }
  auto pt = table.ptr();
  return make_op(std::move(out), {table}, [pt, idx = std::move(idx), c](Node& self) {
    auto& g = grad_of(*pt);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      double* gr = g.data() + static_cast<std::size_t>(idx[i]) * c;
      const double* d = self.grad.data() + i * c;
      for (std::size_t j = 0; j < c; ++j) gr[j] += d[j];
    }
  });
}

Var modulate(const Var& x, const Var& shift, const Var& scale_v) {
  const auto d = blc_dims(x.value(), shift.value(), "modulate");
  require_same_shape(shift.value(), scale_v.value(), "modulate");
  Tensor out(x.value().shape());
  const Tensor& xv = x.value();
  for (std::size_t b = 0; b < d.b; ++b) {
    const double* sh = shift.value().data() + b * d.c;
    const double* sc = scale_v.value().data() + b * d.c;
    for (std::size_t l = 0; l < d.l; ++l) {
      const std::size_t off = (b * d.l + l) * d.c;
      for (std::size_t j = 0; j < d.c; ++j) out[off + j] = xv[off + j] * (1.0 + sc[j]) + sh[j];
    }
  }
  auto px = x.ptr(), psh = shift.ptr(), psc = scale_v.ptr();
  return make_op(std::move(out), {x, shift, scale_v}, [px, psh, psc, d](Node& self) {
    Tensor* gx = px->requires_grad ? &grad_of(*px) : nullptr;
    Tensor* gsh = psh->requires_grad ? &grad_of(*psh) : nullptr;
    Tensor* gsc = psc->requires_grad ? &grad_of(*psc) : nullptr;
    for (std::size_t b = 0; b < d.b; ++b) {
      const double* sc = psc->value.data() + b * d.c;
      for (std::size_t l = 0; l < d.l; ++l) {
        const std::size_t off = (b * d.l + l) * d.c;
        for (std::size_t j = 0; j < d.c; ++j) {
          const double dy = self.grad[off + j];
          if (gx) (*gx)[off + j] += dy * (1.0 + sc[j]);
          if (gsh) (*gsh)[b * d.c + j] += dy;
          if (gsc) (*gsc)[b * d.c + j] += dy * px->value[off + j];
        }
      }
    }
  });
}

Var gated_add(const Var& x, const Var& gate, const Var& y) {
  const auto d = blc_dims(x.value(), gate.value(), "gated_add");
  require_same_shape(x.value(), y.value(), "gated_add");
  Tensor out = x.value();
  const Tensor& yv = y.value();
  for (std::size_t b = 0; b < d.b; ++b) {
    const double* gt = gate.value().data() + b * d.c;
    for (std::size_t l = 0; l < d.l; ++l) {
      const std::size_t off = (b * d.l + l) * d.c;
      for (std::size_t j = 0; j < d.c; ++j) out[off + j] += gt[j] * yv[off + j];
    }
  }
  auto px = x.ptr(), pg = gate.ptr(), py = y.ptr();
  return make_op(std::move(out), {x, gate, y}, [px, pg, py, d](Node& self) {
    Tensor* gx = px->requires_grad ? &grad_of(*px) : nullptr;
    Tensor* gg = pg->requires_grad ? &grad_of(*pg) : nullptr;
    Tensor* gy = py->requires_grad ? &grad_of(*py) : nullptr;
    for (std::size_t b = 0; b < d.b; ++b) {
      const double* gt = pg->value.data() + b * d.c;
      for (std::size_t l = 0; l < d.l; ++l) {
        const std::size_t off = (b * d.l + l) * d.c;
        for (std::size_t j = 0; j < d.c; ++j) {
          const double dy = self.grad[off + j];
          if (gx) (*gx)[off + j] += dy;
          if (gg) (*gg)[b * d.c + j] += dy * py->value[off + j];
          if (gy) (*gy)[off + j] += dy * gt[j];
        }
      }
    }
  });
}

Var slice_columns(const Var& x, std::size_t start, std::size_t len) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || start + len > xv.dim(1)) {
    throw DimensionError("slice_columns: [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") of " + shape_str(xv.shape()));
  }
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  Tensor out(Shape{rows, len});
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(xv.data() + r * cols + start, len, out.data() + r * len);
  auto px = x.ptr();
  return make_op(std::move(out), {x}, [px, rows, cols, start, len](Node& self) {
    auto& g = grad_of(*px);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < len; ++j) g[r * cols + start + j] += self.grad[r * len + j];
    }
  });
}

Var group_mse(const Var& prediction, const Tensor& target) {
  require_same_shape(prediction.value(), target, "group_mse");
  const Tensor& pv = prediction.value();
  if (pv.rank() == 0 || pv.dim(0) == 0) throw DimensionError("group_mse: empty prediction");
  const std::size_t members = pv.dim(0);
  const std::size_t per = pv.numel() / members;
  double total = 0.0;
  for (std::size_t m = 0; m < members; ++m) {
    double s = 0.0;
    for (std::size_t i = 0; i < per; ++i) {
      const double e = pv[m * per + i] - target[m * per + i];
      s += e * e;
    }
    total += s / static_cast<double>(per);
  }
  auto pp = prediction.ptr();
  return make_op(Tensor::scalar(total), {prediction}, [pp, target, per](Node& self) {
    auto& g = grad_of(*pp);
    const double k = 2.0 * self.grad[0] / static_cast<double>(per);
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += k * (pp->value[i] - target[i]);
  });
}

}  // namespace groupdiff::ag
