#include "eclab/numcore/adam.hpp"

#include <cmath>

namespace eclab::num {

AdamState make_adam(const ParamList& params, double learning_rate) {
  AdamState s;
  s.learning_rate = learning_rate;
  for (const auto& p : params) {
    s.m.emplace_back(p.tensor.dtype(), p.tensor.numel());
    s.v.emplace_back(p.tensor.dtype(), p.tensor.numel());
  }
  return s;
}

double grad_norm(const ParamList& params) {
  double total = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    dispatch(p.tensor.dtype(), [&]<class T>() {
      for (T g : p.tensor.grad().view<T>()) total += static_cast<double>(g) * static_cast<double>(g);
    });
  }
  return std::sqrt(total);
}

void adam_step(const ParamList& params, AdamState& state) {
  if (state.m.size() != params.size()) {
    throw ContractError("adam_step: state tracks " + std::to_string(state.m.size()) +
                        " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    if (!p.tensor.has_grad()) throw ContractError("adam_step: parameter '" + p.name + "' has no gradient");
    if (state.m[i].size() != p.tensor.numel()) {
      throw ShapeError("adam_step: moment buffer of '" + p.name + "' does not match its shape " +
                       shape_str(p.tensor.shape()));
    }
  }
  double scale = 1.0;
  if (state.clip_norm > 0.0) {
    const double norm = grad_norm(params);
    if (norm > state.clip_norm) scale = state.clip_norm / norm;
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    dispatch(t.dtype(), [&]<class T>() {
      auto w = t.data<T>();
      auto g = t.grad().view<T>();
      auto m = state.m[i].view<T>();
      auto v = state.v[i].view<T>();
      const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
      const T lr = static_cast<T>(state.learning_rate), eps = static_cast<T>(state.eps);
      const T c1 = static_cast<T>(bc1), c2 = static_cast<T>(bc2), sc = static_cast<T>(scale);
      for (std::size_t j = 0; j < w.size(); ++j) {
        const T gj = g[j] * sc;
        m[j] = b1 * m[j] + (T(1) - b1) * gj;
        v[j] = b2 * v[j] + (T(1) - b2) * gj * gj;
        const T mhat = m[j] / c1;
        const T vhat = v[j] / c2;
        w[j] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    });
    t.clear_grad();
  }
}

void zero_grads(const ParamList& params) {
  for (auto p : params) p.tensor.zero_grad();
}

void clear_grads(const ParamList& params) {
  for (auto p : params) p.tensor.clear_grad();
}

}  // namespace eclab::num
