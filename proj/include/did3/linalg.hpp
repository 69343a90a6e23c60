#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "did3/tensor.hpp"

namespace did3 {

// Small dense routines for the recognition pipeline. Matrices are rank-2
// Tensors, row-major.

inline Tensor identity_matrix(std::size_t n) {
  Tensor m({n, n});
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

inline Tensor mat_mul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0))
    throw ShapeError("mat_mul: " + a.shape_string() + " x " +
                     b.shape_string());
  const std::size_t n = a.extent(0), k = a.extent(1), m = b.extent(1);
  Tensor c({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) c(i, j) += av * b(p, j);
    }
  return c;
}

inline Tensor mat_transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("mat_transpose: " + a.shape_string());
  Tensor t({a.extent(1), a.extent(0)});
  for (std::size_t i = 0; i < a.extent(0); ++i)
    for (std::size_t j = 0; j < a.extent(1); ++j) t(j, i) = a(i, j);
  return t;
}

inline Tensor mat_vec(const Tensor& a, const Tensor& x) {
  if (a.rank() != 2 || a.extent(1) != x.size())
    throw ShapeError("mat_vec: " + a.shape_string() + " x " +
                     x.shape_string());
  Tensor y({a.extent(0)});
  for (std::size_t i = 0; i < a.extent(0); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.extent(1); ++j) s += a(i, j) * x[j];
    y[i] = s;
  }
  return y;
}

inline void mat_symmetrize(Tensor& a) {
  const std::size_t n = a.extent(0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = 0.5 * (a(i, j) + a(j, i));
      a(i, j) = v;
      a(j, i) = v;
    }
}

struct EigenSym {
  std::vector<double> values;  // descending
  Tensor vectors;              // column k is the eigenvector of values[k]
};

// Cyclic Jacobi rotations for symmetric matrices. Adequate for the toy-scale
// dimensions used here (a few hundred at most).
inline EigenSym jacobi_eigen_sym(const Tensor& input, std::size_t max_sweeps = 64) {
  if (input.rank() != 2 || input.extent(0) != input.extent(1))
    throw ShapeError("jacobi_eigen_sym: matrix must be square, got " +
                     input.shape_string());
  const std::size_t n = input.extent(0);
  Tensor a = input;
  Tensor v = identity_matrix(n);

  auto off_norm = [&]() {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) s += a(i, j) * a(i, j);
    return std::sqrt(2.0 * s);
  };

  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      scale = std::max(scale, std::fabs(input(i, j)));
  const double tol = std::max(1e-300, scale * 1e-14 * static_cast<double>(n));

  for (std::size_t sweep = 0; sweep < max_sweeps && off_norm() > tol; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::fabs(apq) <= tol / static_cast<double>(n * n)) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> diag(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = a(i, i);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return diag[x] > diag[y]; });

  EigenSym out;
  out.values.resize(n);
  out.vectors = Tensor({n, n});
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = diag[order[k]];
    for (std::size_t i = 0; i < n; ++i) out.vectors(i, k) = v(i, order[k]);
  }
  return out;
}

// Lower-triangular Cholesky factor; throws ModelError if the matrix is not
// positive definite.
inline Tensor cholesky(const Tensor& a) {
  if (a.rank() != 2 || a.extent(0) != a.extent(1))
    throw ShapeError("cholesky: matrix must be square, got " +
                     a.shape_string());
  const std::size_t n = a.extent(0);
  Tensor l({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      if (i == j) {
        if (!(s > 0.0))
          throw ModelError("cholesky: matrix not positive definite at pivot " +
                           std::to_string(i));
        l(i, i) = std::sqrt(s);
      } else {
        l(i, j) = s / l(j, j);
      }
    }
  }
  return l;
}

inline double cholesky_logdet(const Tensor& l) {
  double s = 0.0;
  for (std::size_t i = 0; i < l.extent(0); ++i) s += std::log(l(i, i));
  return 2.0 * s;
}

// Solves A x = b given A's Cholesky factor.
inline Tensor cholesky_solve(const Tensor& l, const Tensor& b) {
  const std::size_t n = l.extent(0);
  if (b.size() != n) throw ShapeError("cholesky_solve: size mismatch");
  Tensor y({n});
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
    y[i] = s / l(i, i);
  }
  Tensor x({n});
  for (std::size_t ii = n; ii-- > 0;) {
    double s = y[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x[k];
    x[ii] = s / l(ii, ii);
  }
  return x;
}

inline Tensor cholesky_inverse(const Tensor& l) {
  const std::size_t n = l.extent(0);
  Tensor inv({n, n});
  Tensor e({n});
  for (std::size_t j = 0; j < n; ++j) {
    e.fill(0.0);
    e[j] = 1.0;
    const Tensor col = cholesky_solve(l, e);
    for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
  }
  mat_symmetrize(inv);
  return inv;
}

// Symmetric positive definite inverse.
inline Tensor spd_inverse(const Tensor& a) { return cholesky_inverse(cholesky(a)); }

// log N(x; 0, Sigma) with Sigma given by its Cholesky factor.
inline double gaussian_logpdf_zero_mean(const Tensor& l, const Tensor& x) {
  static constexpr double kLog2Pi = 1.8378770664093454836;
  const std::size_t n = l.extent(0);
  // quadratic form via forward substitution: ||L^-1 x||^2
  Tensor y({n});
  for (std::size_t i = 0; i < n; ++i) {
    double s = x[i];
    for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
    y[i] = s / l(i, i);
  }
  double quad = 0.0;
  for (std::size_t i = 0; i < n; ++i) quad += y[i] * y[i];
  return -0.5 * (static_cast<double>(n) * kLog2Pi + cholesky_logdet(l) + quad);
}

inline double frobenius_norm(const Tensor& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * a[i];
  return std::sqrt(s);
}

inline double relative_frobenius_error(const Tensor& estimate,
                                       const Tensor& truth) {
  require_same_shape(estimate, truth, "relative_frobenius_error");
  Tensor diff = estimate;
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] -= truth[i];
  return frobenius_norm(diff) / frobenius_norm(truth);
}

}  // namespace did3
