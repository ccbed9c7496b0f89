#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "ifl/errors.hpp"
#include "ifl/tensor.hpp"

namespace ifl {

// A loss builder maps parameter tensors to a scalar. The same callable
// serves the analytic pass (tracked params) and the central-difference
// probes (plain copies), so the two paths stay independent.
using LossFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Max over all coordinates of
//   |analytic - central difference| / max(1e-8, |analytic| + |numeric|).
inline double grad_check(const LossFn& f, const std::vector<Tensor>& params, double eps = 1e-5) {
  if (eps <= 0.0) throw std::invalid_argument("grad_check: eps must be positive");

  Tape tape;
  std::vector<Tensor> tracked;
  tracked.reserve(params.size());
  for (const auto& p : params) tracked.push_back(tape.var(p.detached_copy()));
  Tensor root = f(tracked);
  if (root.rows() != 1 || root.cols() != 1)
    throw std::invalid_argument("grad_check: loss is not scalar");
  tape.backward(root);

  std::vector<Tensor> probes;
  probes.reserve(params.size());
  for (const auto& p : params) probes.push_back(p.detached_copy());

  auto eval = [&]() {
    const Tensor out = f(probes);
    const double v = scalar_value(out);
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss during perturbation");
    return v;
  };

  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const Tensor analytic = tape.grad(tracked[p]);
    auto& values = probes[p].values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double hi = eval();
      values[i] = saved - eps;
      const double lo = eval();
      values[i] = saved;
      const double numeric = (hi - lo) / (2.0 * eps);
      const double a = analytic.values()[i];
      const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace ifl
