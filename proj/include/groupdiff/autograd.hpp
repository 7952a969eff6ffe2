#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "groupdiff/tensor.hpp"

// Tape-free reverse-mode differentiation over coarse tensor operations.
//
// Every op returns a Var owning its value; when any input requires a gradient
// the Var also keeps its inputs and a closure that pushes the output gradient
// back to them. `Var::backward()` runs those closures in reverse topological
// order. Ops whose inputs are all constants record nothing, so inference
// through the same code path stays allocation-light.
namespace groupdiff::ag {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  /// Accumulated gradient; a zero tensor if nothing reached this node.
  Tensor grad() const;

  /// Seeds d(self)/d(self) = 1 and propagates. Requires a single-element value.
  void backward() const;

  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var parameter(Tensor value);
Var constant(Tensor value);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var sum(const Var& a);
Var mean(const Var& a);

/// x[..., K] · w[K, M] + b[M]. `b` may be an undefined Var.
Var linear(const Var& x, const Var& w, const Var& b);

Var silu(const Var& x);
/// tanh approximation of GELU.
Var gelu(const Var& x);
/// Normalizes over the last axis, no affine parameters.
Var layer_norm(const Var& x, double eps = 1e-6);

/// x[B, L, C] + table[L, C] for every b.
Var add_token_broadcast(const Var& x, const Var& table);

/// x[B, L, C] + slots[b mod group_size, C]: the same slot vector reaches every
/// token of a group member.
Var add_sample_embedding(const Var& x, const Var& slots, std::size_t group_size);

/// Row gather: out[i] = table[rows[i]].
Var embedding(const Var& table, std::span<const int> rows);

/// x[B, L, C] * (1 + scale[B, C]) + shift[B, C].
Var modulate(const Var& x, const Var& shift, const Var& scale);

/// x[B, L, C] + gate[B, C] * y[B, L, C].
Var gated_add(const Var& x, const Var& gate, const Var& y);

/// Columns [start, start+len) of a rank-2 tensor.
Var slice_columns(const Var& x, std::size_t start, std::size_t len);

/// Sum over the leading axis (members) of the per-member mean squared error
/// against a constant target.
Var group_mse(const Var& prediction, const Tensor& target);

}  // namespace groupdiff::ag
