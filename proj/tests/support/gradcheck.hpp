#pragma once

// Central finite-difference oracle. Kept in test code so it never shares a
// path with the analytic backward rules it checks.

#include <cmath>
#include <functional>
#include <sstream>
#include <string>

#include "eclab/numcore/adam.hpp"
#include "eclab/numcore/tensor.hpp"

namespace eclab::testing {

struct GradcheckResult {
  bool ok = true;
  double worst_error = 0.0;  // |analytic - numeric| / (rtol*scale + atol), <= 1 passes
  std::string worst;
  std::size_t checked = 0;
};

inline GradcheckResult gradcheck(const std::function<num::Tensor()>& loss_fn,
                                 const num::ParamList& inputs, double rtol, double atol = 1e-9,
                                 double h = 1e-6) {
  for (auto p : inputs) p.tensor.clear_grad();
  num::Tensor loss = loss_fn();
  loss.backward();
  GradcheckResult res;
  for (auto p : inputs) {
    const std::vector<double> analytic = p.tensor.grad_vector();
    for (std::size_t i = 0; i < p.tensor.numel(); ++i) {
      const double orig = p.tensor.at(i);
      double fp, fm;
      {
        num::NoGradGuard guard;
        p.tensor.buffer().set(i, orig + h);
        fp = loss_fn().item();
        p.tensor.buffer().set(i, orig - h);
        fm = loss_fn().item();
        p.tensor.buffer().set(i, orig);
      }
      const double numeric = (fp - fm) / (2 * h);
      const double scale = std::max(std::abs(numeric), std::abs(analytic[i]));
      const double err = std::abs(numeric - analytic[i]) / (rtol * scale + atol);
      ++res.checked;
      if (err > res.worst_error) {
        res.worst_error = err;
        std::ostringstream os;
        os << p.name << "[" << i << "] analytic=" << analytic[i] << " numeric=" << numeric;
        res.worst = os.str();
      }
    }
    p.tensor.clear_grad();
  }
  res.ok = res.worst_error <= 1.0;
  return res;
}

}  // namespace eclab::testing
