#include "eclab/numcore/nn.hpp"

#include <algorithm>
#include <cmath>

namespace eclab::num {

Tensor init_uniform(Shape shape, double bound, Prng& rng, DType dt) {
  Tensor t = Tensor::zeros(std::move(shape), dt, true);
  for (std::size_t i = 0; i < t.numel(); ++i) t.buffer().set(i, rng.uniform(-bound, bound));
  return t;
}

Tensor init_normal(Shape shape, double stddev, Prng& rng, DType dt) {
  Tensor t = Tensor::zeros(std::move(shape), dt, true);
  for (std::size_t i = 0; i < t.numel(); ++i) t.buffer().set(i, rng.normal(0.0, stddev));
  return t;
}

void Linear::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Linear make_linear_uniform(std::size_t in, std::size_t out, Prng& rng, DType dt) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Linear l;
  l.weight = init_uniform({in, out}, bound, rng, dt);
  l.bias = init_uniform({out}, bound, rng, dt);
  return l;
}

Linear make_linear_normal(std::size_t in, std::size_t out, double stddev, Prng& rng, DType dt) {
  Linear l;
  l.weight = init_normal({in, out}, stddev, rng, dt);
  l.bias = Tensor::zeros({out}, dt, true);
  return l;
}

void LayerNorm::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

LayerNorm make_layer_norm(std::size_t dim, DType dt) {
  return {Tensor::full({dim}, 1.0, dt, true), Tensor::zeros({dim}, dt, true)};
}

void GruParams::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".w_z", w_z});
  out.push_back({prefix + ".b_z", b_z});
  out.push_back({prefix + ".w_r", w_r});
  out.push_back({prefix + ".b_r", b_r});
  out.push_back({prefix + ".w_h", w_h});
  out.push_back({prefix + ".b_h", b_h});
}

GruParams make_gru(std::size_t input_dim, std::size_t hidden_dim, Prng& rng, DType dt) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  const std::size_t fan = input_dim + hidden_dim;
  GruParams p;
  p.w_z = init_uniform({fan, hidden_dim}, bound, rng, dt);
  p.b_z = init_uniform({hidden_dim}, bound, rng, dt);
  p.w_r = init_uniform({fan, hidden_dim}, bound, rng, dt);
  p.b_r = init_uniform({hidden_dim}, bound, rng, dt);
  p.w_h = init_uniform({fan, hidden_dim}, bound, rng, dt);
  p.b_h = init_uniform({hidden_dim}, bound, rng, dt);
  return p;
}

Tensor gru_cell(const Tensor& x, const Tensor& h, const GruParams& p) {
  if (x.rank() != 2 || h.rank() != 2 || x.dim(0) != h.dim(0) || x.dim(1) != p.input_dim() ||
      h.dim(1) != p.hidden_dim()) {
    throw ShapeError("gru_cell: input " + shape_str(x.shape()) + " and hidden " +
                     shape_str(h.shape()) + " do not match gate weights " + shape_str(p.w_z.shape()));
  }
  Tensor xh = concat({x, h}, 1);
  Tensor z = sigmoid(add(matmul(xh, p.w_z), p.b_z));
  Tensor r = sigmoid(add(matmul(xh, p.w_r), p.b_r));
  Tensor xrh = concat({x, mul(r, h)}, 1);
  Tensor cand = tanh(add(matmul(xrh, p.w_h), p.b_h));
  return add(h, mul(z, sub(cand, h)));
}

Tensor sample_gumbel_noise(const Shape& shape, DType dt, Prng& rng) {
  Tensor g = Tensor::zeros(shape, dt);
  for (std::size_t i = 0; i < g.numel(); ++i) {
    const double u = std::clamp(rng.uniform(), kGumbelClamp, 1.0 - kGumbelClamp);
    g.buffer().set(i, -std::log(-std::log(u)));
  }
  return g;
}

Tensor gumbel_softmax_with_noise(const Tensor& logits, const Tensor& noise, double temperature,
                                 bool hard) {
  if (!(temperature > 0.0)) {
    throw ContractError("gumbel_softmax: temperature must be positive, got " + std::to_string(temperature));
  }
  Tensor soft = softmax(mul_scalar(add(logits, noise), 1.0 / temperature), -1);
  if (!hard) return soft;
  Tensor rows = soft.rank() == 1 ? reshape(soft, {1, soft.numel()}) : soft;
  std::vector<int> best = argmax_rows(rows);
  Tensor onehot = Tensor::zeros(soft.shape(), soft.dtype());
  const std::size_t v = soft.shape().back();
  for (std::size_t r = 0; r < best.size(); ++r) onehot.buffer().set(r * v + static_cast<std::size_t>(best[r]), 1.0);
  return straight_through(onehot, soft);
}

Tensor gumbel_softmax(const Tensor& logits, double temperature, Prng& rng, bool hard) {
  if (!(temperature > 0.0)) {
    throw ContractError("gumbel_softmax: temperature must be positive, got " + std::to_string(temperature));
  }
  return gumbel_softmax_with_noise(logits, sample_gumbel_noise(logits.shape(), logits.dtype(), rng),
                                   temperature, hard);
}

}  // namespace eclab::num
