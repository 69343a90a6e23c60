#include <gtest/gtest.h>

#include <cmath>

#include "did3/grad_check.hpp"
#include "did3/rng.hpp"
#include "did3/tensor.hpp"

using namespace did3;

TEST(Tensor, ShapeAndData) {
  Tensor t({2, 3});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  t(1, 2) = 5.0;
  EXPECT_EQ(t[5], 5.0);
  EXPECT_TRUE(t.all_finite());
}

TEST(Tensor, RejectsZeroExtent) {
  EXPECT_THROW(Tensor({2, 0}), ShapeError);
  EXPECT_THROW(Tensor(Shape{}), ShapeError);
  EXPECT_THROW(Tensor({3}, {1.0}), ShapeError);
}

TEST(Tensor, ReshapePreservesData) {
  Tensor t({2, 2}, {1, 2, 3, 4});
  Tensor f = t.flattened();
  EXPECT_EQ(f.shape(), Shape({4}));
  EXPECT_EQ(f[3], 4.0);
  EXPECT_THROW(t.reshaped({3, 2}), ShapeError);
}

TEST(Rng, DeterministicAcrossInstances) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, DifferentSeedsDiffer) {
  Rng a(1), b(2);
  bool any_diff = false;
  for (int i = 0; i < 10; ++i) any_diff |= a.next_u64() != b.next_u64();
  EXPECT_TRUE(any_diff);
}

TEST(Rng, DerivedStreamsAreIndependentOfParentState) {
  Rng a(7);
  Rng c1 = a.derive(3);
  a.next_u64();
  a.next_u64();
  Rng c2 = a.derive(3);
  EXPECT_EQ(c1.next_u64(), c2.next_u64());
}

TEST(Rng, UniformInRange) {
  Rng r(9);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}

TEST(InitHe, MomentsMatchFanIn) {
  Rng rng(7);
  Tensor t = init_he({4, 4}, 16, rng);
  double mean = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) mean += t[i];
  mean /= static_cast<double>(t.size());
  double var = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i)
    var += (t[i] - mean) * (t[i] - mean);
  var /= static_cast<double>(t.size());
  const double want_std = std::sqrt(2.0 / 16.0);
  EXPECT_NEAR(mean, 0.0, 0.5);
  EXPECT_NEAR(std::sqrt(var), want_std, 0.5 * want_std);
}

TEST(InitHe, DegenerateShape) {
  Rng rng(1);
  Tensor t = init_he({1}, 1, rng);
  EXPECT_EQ(t.size(), 1u);
  EXPECT_TRUE(std::isfinite(t[0]));
}

TEST(InitHe, SameSeedSameTensor) {
  Rng a(123), b(123);
  Tensor ta = init_he({3, 3}, 9, a);
  Tensor tb = init_he({3, 3}, 9, b);
  for (std::size_t i = 0; i < ta.size(); ++i) EXPECT_EQ(ta[i], tb[i]);
}

TEST(InitHe, RejectsZeroExtentShape) {
  Rng rng(1);
  EXPECT_THROW(init_he({0, 2}, 4, rng), ShapeError);
}

TEST(FiniteDiff, QuadraticGradient) {
  const Tensor x({1}, {3.0});
  const Tensor g = finite_diff_grad(
      [](const Tensor& t) {
        double s = 0.0;
        for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * t[i];
        return s;
      },
      x, 1e-5);
  EXPECT_NEAR(g[0], 6.0, 1e-6);
}

TEST(FiniteDiff, ConstantFunctionIsZero) {
  const Tensor x({4}, {1, 2, 3, 4});
  const Tensor g =
      finite_diff_grad([](const Tensor&) { return 2.5; }, x, 1e-5);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(g[i], 0.0);
}

TEST(FiniteDiff, LinearFunctionalEqualsCoefficients) {
  Rng rng(5);
  Tensor coeff({8});
  for (std::size_t i = 0; i < coeff.size(); ++i) coeff[i] = rng.normal();
  Tensor x({8});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();

  const Tensor g = finite_diff_grad(
      [&coeff](const Tensor& t) { return dot(coeff, t); }, x, 1e-5);
  for (std::size_t i = 0; i < g.size(); ++i)
    EXPECT_NEAR(g[i], coeff[i], 1e-9);

  const Tensor ones_grad = finite_diff_grad(
      [](const Tensor& t) {
        double s = 0.0;
        for (std::size_t i = 0; i < t.size(); ++i) s += t[i];
        return s;
      },
      x, 1e-5);
  for (std::size_t i = 0; i < ones_grad.size(); ++i)
    EXPECT_NEAR(ones_grad[i], 1.0, 1e-9);
}

TEST(FiniteDiff, NonFiniteValueNamesComponent) {
  const Tensor x({3}, {1.0, 2.0, 3.0});
  try {
    finite_diff_grad(
        [](const Tensor& t) { return t[1] > 2.0 ? 1.0 / 0.0 : 1.0; }, x, 1e-5);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("component 1"), std::string::npos);
  }
}
