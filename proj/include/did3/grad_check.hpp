#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "did3/tensor.hpp"

namespace did3 {

// Central-difference gradient of a scalar function. This is the reference
// oracle every analytic backward pass is tested against; it must stay
// independent of the layer implementations.
//
// eps = 1e-5 balances truncation against round-off at double precision.
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f,
                               const Tensor& x, double eps = 1e-5) {
  if (!(eps > 0.0)) throw Error("finite_diff_grad: eps must be positive");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + eps;
    const double fp = f(probe);
    probe[i] = saved - eps;
    const double fm = f(probe);
    probe[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw Error("finite_diff_grad: non-finite function value at component " +
                  std::to_string(i));
    }
    grad[i] = (fp - fm) / (2.0 * eps);
  }
  return grad;
}

// Max relative error between an analytic gradient and the finite-difference
// one, with an absolute floor so near-zero components do not blow up the
// ratio.
inline double max_relative_error(const Tensor& analytic, const Tensor& numeric,
                                 double floor = 1e-8) {
  require_same_shape(analytic, numeric, "max_relative_error");
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom =
        std::max({std::fabs(analytic[i]), std::fabs(numeric[i]), floor});
    worst = std::max(worst, std::fabs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

}  // namespace did3
