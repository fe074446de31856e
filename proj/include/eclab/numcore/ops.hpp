#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "eclab/numcore/tensor.hpp"

// Differentiable primitives. Every op checks shapes up front and throws
// ShapeError naming both operand shapes on mismatch.
namespace eclab::num {

// (M,K) x (K,N) -> (M,N)
Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise with broadcasting of `b` when b is a scalar or matches the
// trailing dimensions of `a` (bias rows).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor reciprocal(const Tensor& a);

Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);

// Negative axis counts from the back.
Tensor softmax(const Tensor& a, int axis = -1);
Tensor log_softmax(const Tensor& a, int axis = -1);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, std::size_t start, std::size_t length);
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);  // 2-D only

// Rows of `table` (V,E) selected by ids -> (n,E).
Tensor embedding(const Tensor& table, std::span<const int> ids);
// Probability rows (n,V) times table (V,E).
Tensor soft_embedding(const Tensor& probs, const Tensor& table);

// Normalizes over the last axis; gamma/beta may be undefined (no affine).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

struct AttentionMask {
  bool causal = false;
  // Valid key count per batch item; empty means all keys valid. Group g of
  // the attention input uses key_lengths[g / heads].
  std::vector<std::size_t> key_lengths;
  std::size_t heads = 1;
};

// q (G,Tq,dk), k (G,Tk,dk), v (G,Tk,dv) -> (G,Tq,dv); softmax(q k^T / sqrt(dk)) v.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const AttentionMask& mask = {});

// (B*T, H*dh) <-> (B*H, T, dh)
Tensor split_heads(const Tensor& x, std::size_t batch, std::size_t heads);
Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t heads);

// Sum of squares over the last axis: (..., D) -> (...).
Tensor squared_l2(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// (N, D) -> (N*n, D), each row repeated n times consecutively.
Tensor repeat_rows(const Tensor& x, std::size_t n);

// Picks x[i, idx[i]] from (N,C) -> (N).
Tensor pick(const Tensor& x, std::span<const int> idx);

// Per-row negative log-likelihood of `targets` under softmax(logits);
// rows whose target equals `ignore_index` contribute 0. (N,C) -> (N).
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets,
                             int ignore_index = -1);

// Forward value of `hard`, gradient routed to `soft` unchanged.
Tensor straight_through(const Tensor& hard, const Tensor& soft);

// Row-wise argmax of a 2-D tensor, lowest index on ties.
std::vector<int> argmax_rows(const Tensor& x);

}  // namespace eclab::num
