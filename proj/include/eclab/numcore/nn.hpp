#pragma once

#include <cstddef>
#include <string>

#include "eclab/numcore/adam.hpp"
#include "eclab/numcore/ops.hpp"
#include "eclab/numcore/prng.hpp"

namespace eclab::num {

Tensor init_uniform(Shape shape, double bound, Prng& rng, DType dt);
Tensor init_normal(Shape shape, double stddev, Prng& rng, DType dt);

// Affine map x (N,in) -> (N,out). Weight is stored (in,out).
struct Linear {
  Tensor weight;
  Tensor bias;

  std::size_t in_dim() const { return weight.dim(0); }
  std::size_t out_dim() const { return weight.dim(1); }
  Tensor operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }
  void collect(ParamList& out, const std::string& prefix) const;
};

// uniform(-1/sqrt(in), 1/sqrt(in)) weights and biases.
Linear make_linear_uniform(std::size_t in, std::size_t out, Prng& rng, DType dt);
// normal(0, stddev) weights, zero bias.
Linear make_linear_normal(std::size_t in, std::size_t out, double stddev, Prng& rng, DType dt);

struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
  void collect(ParamList& out, const std::string& prefix) const;
};

LayerNorm make_layer_norm(std::size_t dim, DType dt);

// Update/reset/candidate gates acting on [x, h]; weights are (E+H, H).
struct GruParams {
  Tensor w_z, b_z;
  Tensor w_r, b_r;
  Tensor w_h, b_h;

  std::size_t input_dim() const { return w_z.dim(0) - hidden_dim(); }
  std::size_t hidden_dim() const { return w_z.dim(1); }
  void collect(ParamList& out, const std::string& prefix) const;
};

// uniform(-1/sqrt(H), 1/sqrt(H)) for every gate tensor.
GruParams make_gru(std::size_t input_dim, std::size_t hidden_dim, Prng& rng, DType dt);

// z = sigma([x,h] Wz + bz), r = sigma([x,h] Wr + br),
// c = tanh([x, r*h] Wh + bh), h' = (1-z)*h + z*c.   x (N,E), h (N,H).
Tensor gru_cell(const Tensor& x, const Tensor& h, const GruParams& p);

// Soft mode: softmax((logits + g) / tau), g = -log(-log u). Hard mode: one-hot
// of the soft argmax forward with the soft gradient. logits (N,V) or (V).
Tensor gumbel_softmax(const Tensor& logits, double temperature, Prng& rng, bool hard);
// Same with caller-supplied Gumbel noise of the logits' shape.
Tensor gumbel_softmax_with_noise(const Tensor& logits, const Tensor& noise, double temperature,
                                 bool hard);
Tensor sample_gumbel_noise(const Shape& shape, DType dt, Prng& rng);

inline constexpr double kGumbelClamp = 1e-12;

}  // namespace eclab::num
