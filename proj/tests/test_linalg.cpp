#include <gtest/gtest.h>

#include <cmath>

#include "did3/linalg.hpp"
#include "did3/rng.hpp"

using namespace did3;

namespace {

Tensor random_spd(std::size_t n, Rng& rng, double ridge = 0.1) {
  Tensor r({n, n});
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = rng.normal();
  Tensor a = mat_mul(r, mat_transpose(r));
  for (std::size_t i = 0; i < n; ++i) a(i, i) += ridge;
  return a;
}

}  // namespace

TEST(Jacobi, KnownTwoByTwo) {
  const Tensor a({2, 2}, {2, 1, 1, 2});
  const EigenSym e = jacobi_eigen_sym(a);
  EXPECT_NEAR(e.values[0], 3.0, 1e-12);
  EXPECT_NEAR(e.values[1], 1.0, 1e-12);
}

TEST(Jacobi, EigenEquationHolds) {
  Rng rng(1);
  for (std::size_t n : {3u, 7u, 15u}) {
    const Tensor a = random_spd(n, rng);
    const EigenSym e = jacobi_eigen_sym(a);
    for (std::size_t k = 0; k + 1 < n; ++k)
      EXPECT_GE(e.values[k], e.values[k + 1]);
    for (std::size_t k = 0; k < n; ++k) {
      Tensor v({n});
      for (std::size_t i = 0; i < n; ++i) v[i] = e.vectors(i, k);
      const Tensor av = mat_vec(a, v);
      for (std::size_t i = 0; i < n; ++i)
        EXPECT_NEAR(av[i], e.values[k] * v[i], 1e-9);
    }
    // orthonormal columns
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t l = 0; l < n; ++l) {
        double d = 0.0;
        for (std::size_t i = 0; i < n; ++i)
          d += e.vectors(i, k) * e.vectors(i, l);
        EXPECT_NEAR(d, k == l ? 1.0 : 0.0, 1e-10);
      }
  }
}

TEST(Cholesky, ReconstructsMatrix) {
  Rng rng(2);
  const Tensor a = random_spd(6, rng);
  const Tensor l = cholesky(a);
  const Tensor back = mat_mul(l, mat_transpose(l));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(back[i], a[i], 1e-10);
}

TEST(Cholesky, RejectsIndefinite) {
  const Tensor a({2, 2}, {1, 2, 2, 1});  // eigenvalues 3, -1
  EXPECT_THROW(cholesky(a), ModelError);
}

TEST(Cholesky, SolveAndInverse) {
  Rng rng(3);
  const Tensor a = random_spd(5, rng);
  const Tensor l = cholesky(a);
  Tensor b({5});
  for (std::size_t i = 0; i < 5; ++i) b[i] = rng.normal();
  const Tensor x = cholesky_solve(l, b);
  const Tensor ax = mat_vec(a, x);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(ax[i], b[i], 1e-9);

  const Tensor inv = cholesky_inverse(l);
  const Tensor prod = mat_mul(a, inv);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      EXPECT_NEAR(prod(i, j), i == j ? 1.0 : 0.0, 1e-9);
}

TEST(Cholesky, LogDetMatchesEigenvalues) {
  Rng rng(4);
  const Tensor a = random_spd(4, rng);
  const double logdet = cholesky_logdet(cholesky(a));
  double want = 0.0;
  for (double lam : jacobi_eigen_sym(a).values) want += std::log(lam);
  EXPECT_NEAR(logdet, want, 1e-9);
}

TEST(GaussianLogPdf, IdentityCovariance) {
  const std::size_t n = 3;
  const Tensor x({n}, {0.5, -1.0, 2.0});
  const double got = gaussian_logpdf_zero_mean(cholesky(identity_matrix(n)), x);
  const double quad = 0.25 + 1.0 + 4.0;
  const double want =
      -0.5 * (static_cast<double>(n) * std::log(2.0 * 3.14159265358979323846) +
              quad);
  EXPECT_NEAR(got, want, 1e-12);
}

TEST(Frobenius, RelativeError) {
  const Tensor a({2, 2}, {1, 0, 0, 1});
  const Tensor b({2, 2}, {1.1, 0, 0, 0.9});
  EXPECT_NEAR(relative_frobenius_error(b, a),
              std::sqrt(0.02) / std::sqrt(2.0), 1e-12);
}
