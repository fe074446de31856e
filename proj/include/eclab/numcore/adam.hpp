#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eclab/numcore/tensor.hpp"

namespace eclab::num {

struct Param {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<Param>;

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Global gradient-norm clip; 0 disables it.
  double clip_norm = 0.0;
  std::int64_t step = 0;
  std::vector<Buffer> m;
  std::vector<Buffer> v;
};

AdamState make_adam(const ParamList& params, double learning_rate);

// Bias-corrected Adam update of every parameter, then clears the gradients.
// Throws ContractError naming the first parameter that has no gradient.
void adam_step(const ParamList& params, AdamState& state);

void zero_grads(const ParamList& params);
void clear_grads(const ParamList& params);
double grad_norm(const ParamList& params);

}  // namespace eclab::num
