#include <gtest/gtest.h>

#include <cmath>

#include "did3/grad_check.hpp"
#include "did3/layers/conv2d.hpp"
#include "did3/layers/dense.hpp"
#include "did3/layers/dropout.hpp"
#include "did3/layers/inception.hpp"
#include "did3/layers/locally_connected.hpp"
#include "did3/layers/maxpool.hpp"
#include "did3/layers/relu.hpp"
#include "did3/rng.hpp"
#include "oracles.hpp"

using namespace did3;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST(Conv2d, HandComputedWindow) {
  const Tensor input({1, 2, 2}, {1, 2, 3, 4});
  const Tensor kernel({1, 1, 2, 2}, {1, 0, 0, 1});
  const Tensor bias({1}, {0});
  const ConvSpec spec{1, 1, 2, 2, 1, 0};
  const Tensor out = conv2d_forward(input, spec, kernel, bias);
  ASSERT_EQ(out.shape(), Shape({1, 1, 1}));
  EXPECT_DOUBLE_EQ(out[0], 5.0);
}

TEST(Conv2d, IdentityKernel) {
  Rng rng(3);
  const Tensor input = random_tensor({2, 4, 4}, rng);
  Tensor kernel({2, 2, 1, 1});
  kernel(0, 0) = 0.0;
  kernel[0 * 2 + 0] = 1.0;  // oc0 <- ic0
  kernel[1 * 2 + 1] = 1.0;  // oc1 <- ic1
  const Tensor bias({2});
  const Tensor out =
      conv2d_forward(input, ConvSpec{2, 2, 1, 1, 1, 0}, kernel, bias);
  ASSERT_TRUE(out.same_shape(input));
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], input[i]);
}

TEST(Conv2d, ZeroWeightsGiveBias) {
  Rng rng(4);
  const Tensor input = random_tensor({1, 5, 5}, rng);
  const ConvSpec spec{1, 3, 3, 3, 1, 1};
  const Tensor weights(spec.weight_shape());
  const Tensor bias({3}, {0.7, -0.2, 1.5});
  const Tensor out = conv2d_forward(input, spec, weights, bias);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t x = 0; x < 5; ++x)
        EXPECT_EQ(out(c, y, x), bias[c]);
}

TEST(Conv2d, MatchesNaiveOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const ConvSpec spec{3, 4, 3, 3, 2, 1};
    const Tensor input = random_tensor({3, 7, 6}, rng);
    const Tensor weights = random_tensor(spec.weight_shape(), rng);
    const Tensor bias = random_tensor(spec.bias_shape(), rng);
    const Tensor got = conv2d_forward(input, spec, weights, bias);
    const Tensor want = oracle::conv2d_naive(input, weights, bias, 2, 1);
    ASSERT_TRUE(got.same_shape(want));
    for (std::size_t i = 0; i < got.size(); ++i)
      EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Conv2d, ShapeErrorsNameShapes) {
  const Tensor input({2, 4, 4});
  const ConvSpec spec{3, 1, 3, 3, 1, 1};  // wrong in_channels
  const Tensor w(spec.weight_shape());
  const Tensor b(spec.bias_shape());
  try {
    conv2d_forward(input, spec, w, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2"), std::string::npos);
    EXPECT_NE(msg.find("3"), std::string::npos);
  }
}

TEST(Conv2dBackward, MatchesFiniteDifferences) {
  for (std::uint64_t seed = 10; seed < 14; ++seed) {
    Rng rng(seed);
    const ConvSpec spec{2, 3, 3, 3, 1, 1};
    const Tensor input = random_tensor({2, 5, 5}, rng);
    const Tensor weights = random_tensor(spec.weight_shape(), rng, -0.5, 0.5);
    const Tensor bias = random_tensor(spec.bias_shape(), rng, -0.5, 0.5);
    const Tensor cot = random_tensor({3, 5, 5}, rng);  // fixed cotangent

    const auto loss_from = [&](const Tensor& in, const Tensor& w,
                               const Tensor& b) {
      return dot(conv2d_forward(in, spec, w, b), cot);
    };
    const ConvGrads g = conv2d_backward(input, spec, weights, cot);

    const Tensor gi = finite_diff_grad(
        [&](const Tensor& t) { return loss_from(t, weights, bias); }, input);
    const Tensor gw = finite_diff_grad(
        [&](const Tensor& t) { return loss_from(input, t, bias); }, weights);
    const Tensor gb = finite_diff_grad(
        [&](const Tensor& t) { return loss_from(input, weights, t); }, bias);
    EXPECT_LT(max_relative_error(g.input, gi), 1e-4);
    EXPECT_LT(max_relative_error(g.weights, gw), 1e-4);
    EXPECT_LT(max_relative_error(g.bias, gb), 1e-4);
  }
}

TEST(Conv2dBackward, ZeroCotangentGivesZeroGrads) {
  Rng rng(1);
  const ConvSpec spec{1, 2, 3, 3, 1, 1};
  const Tensor input = random_tensor({1, 4, 4}, rng);
  const Tensor weights = random_tensor(spec.weight_shape(), rng);
  const Tensor zero_cot({2, 4, 4});
  const ConvGrads g = conv2d_backward(input, spec, weights, zero_cot);
  for (std::size_t i = 0; i < g.input.size(); ++i) EXPECT_EQ(g.input[i], 0.0);
  for (std::size_t i = 0; i < g.weights.size(); ++i)
    EXPECT_EQ(g.weights[i], 0.0);
  for (std::size_t i = 0; i < g.bias.size(); ++i) EXPECT_EQ(g.bias[i], 0.0);
}

TEST(Conv2dBackward, ScalarChainRule) {
  const ConvSpec spec{1, 1, 1, 1, 1, 0};
  const Tensor input({1, 1, 1}, {2.5});
  const Tensor weights({1, 1, 1, 1}, {-1.25});
  const Tensor cot({1, 1, 1}, {3.0});
  const ConvGrads g = conv2d_backward(input, spec, weights, cot);
  EXPECT_DOUBLE_EQ(g.weights[0], 2.5 * 3.0);
  EXPECT_DOUBLE_EQ(g.input[0], -1.25 * 3.0);
  EXPECT_DOUBLE_EQ(g.bias[0], 3.0);
}

TEST(MaxPool, SingleWindow) {
  const Tensor input({1, 2, 2}, {1, 2, 3, 4});
  const auto r = maxpool2d(input, 2, 2);
  ASSERT_EQ(r.output.shape(), Shape({1, 1, 1}));
  EXPECT_EQ(r.output[0], 4.0);
  EXPECT_EQ(r.argmax[0], 3u);
}

TEST(MaxPool, TiesBreakToLowestFlatIndex) {
  const Tensor input = Tensor::full({1, 4, 4}, 0.5);
  const auto r = maxpool2d(input, 2, 2);
  ASSERT_EQ(r.argmax.size(), 4u);
  EXPECT_EQ(r.argmax[0], 0u);
  EXPECT_EQ(r.argmax[1], 2u);
  EXPECT_EQ(r.argmax[2], 8u);
  EXPECT_EQ(r.argmax[3], 10u);
}

TEST(MaxPool, MatchesNaiveOracle) {
  Rng rng(77);
  const Tensor input = random_tensor({2, 6, 6}, rng);
  const auto got = maxpool2d(input, 2, 2);
  const Tensor want = oracle::maxpool_naive(input, 2, 2);
  ASSERT_TRUE(got.output.same_shape(want));
  for (std::size_t i = 0; i < want.size(); ++i)
    EXPECT_EQ(got.output[i], want[i]);
}

TEST(MaxPool, WindowTooLargeThrows) {
  const Tensor input({1, 3, 3});
  EXPECT_THROW(maxpool2d(input, 4, 1), ShapeError);
}

TEST(MaxPool, BackwardRoutesOneUnitPerWindow) {
  Rng rng(8);
  const Tensor input = random_tensor({1, 4, 4}, rng);
  const auto r = maxpool2d(input, 2, 2);
  const Tensor cot = Tensor::full(r.output.shape(), 1.0);
  const Tensor gin = maxpool2d_backward(input.shape(), r.argmax, cot);
  double total = 0.0;
  for (std::size_t i = 0; i < gin.size(); ++i) {
    total += gin[i];
    EXPECT_TRUE(gin[i] == 0.0 || gin[i] == 1.0);
  }
  EXPECT_EQ(total, 4.0);
}

TEST(LocallyConnected, TiedWeightsEqualConvolution) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const LocalSpec spec{2, 3, 3, 3, 1, 1, 6, 5};
    const ConvSpec conv = spec.as_conv();
    const Tensor input = random_tensor({2, 6, 5}, rng);
    const Tensor kernel = random_tensor(conv.weight_shape(), rng);
    const Tensor cbias = random_tensor(conv.bias_shape(), rng);
    const Tensor want = conv2d_forward(input, conv, kernel, cbias);
    const Tensor got = locally_connected_forward(
        input, spec, tie_conv_weights(spec, kernel), tie_conv_bias(spec, cbias));
    ASSERT_TRUE(got.same_shape(want));
    for (std::size_t i = 0; i < got.size(); ++i)
      EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(LocallyConnected, SingleLocationEqualsFullyConnected) {
  Rng rng(21);
  const LocalSpec spec{1, 4, 3, 3, 1, 0, 3, 3};  // one output location
  ASSERT_EQ(spec.out_h(), 1u);
  ASSERT_EQ(spec.out_w(), 1u);
  const Tensor input = random_tensor({1, 3, 3}, rng);
  const Tensor bank = random_tensor(spec.weight_shape(), rng);
  const Tensor bias = random_tensor(spec.bias_shape(), rng);
  const Tensor got = locally_connected_forward(input, spec, bank, bias);

  const Tensor fc_w = bank.reshaped({4, 9});
  const Tensor fc_b = bias.reshaped({4});
  const Tensor want = fully_connected(input.flattened(), fc_w, fc_b);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(got[i], want[i], 1e-14);
}

TEST(LocallyConnected, MatchesNaiveOracle) {
  Rng rng(31);
  const LocalSpec spec{2, 2, 3, 3, 1, 1, 5, 4};
  const Tensor input = random_tensor({2, 5, 4}, rng);
  const Tensor bank = random_tensor(spec.weight_shape(), rng);
  const Tensor bias = random_tensor(spec.bias_shape(), rng);
  const Tensor got = locally_connected_forward(input, spec, bank, bias);
  const Tensor want = oracle::local_naive(input, bank, bias, 3, 1, 1);
  ASSERT_TRUE(got.same_shape(want));
  for (std::size_t i = 0; i < got.size(); ++i)
    EXPECT_NEAR(got[i], want[i], 1e-12);
}

TEST(LocallyConnected, ParamCountMatchesFormula) {
  const LocalSpec spec{3, 5, 3, 3, 1, 1, 8, 8};
  EXPECT_EQ(spec.param_count(),
            8u * 8u * 5u * (3u * 3u * 3u + 1u));
  EXPECT_EQ(shape_numel(spec.weight_shape()) + shape_numel(spec.bias_shape()),
            spec.param_count());
}

TEST(LocallyConnectedBackward, MatchesFiniteDifferences) {
  for (std::uint64_t seed = 40; seed < 43; ++seed) {
    Rng rng(seed);
    const LocalSpec spec{2, 2, 3, 3, 1, 1, 4, 4};
    const Tensor input = random_tensor({2, 4, 4}, rng);
    const Tensor bank = random_tensor(spec.weight_shape(), rng, -0.5, 0.5);
    const Tensor bias = random_tensor(spec.bias_shape(), rng, -0.5, 0.5);
    const Tensor cot = random_tensor({2, 4, 4}, rng);

    const LocalGrads g = locally_connected_backward(input, spec, bank, cot);
    const Tensor gi = finite_diff_grad(
        [&](const Tensor& t) {
          return dot(locally_connected_forward(t, spec, bank, bias), cot);
        },
        input);
    const Tensor gw = finite_diff_grad(
        [&](const Tensor& t) {
          return dot(locally_connected_forward(input, spec, t, bias), cot);
        },
        bank);
    const Tensor gb = finite_diff_grad(
        [&](const Tensor& t) {
          return dot(locally_connected_forward(input, spec, bank, t), cot);
        },
        bias);
    EXPECT_LT(max_relative_error(g.input, gi), 1e-4);
    EXPECT_LT(max_relative_error(g.weights, gw), 1e-4);
    EXPECT_LT(max_relative_error(g.bias, gb), 1e-4);
  }
}

TEST(FullyConnected, IdentityWeights) {
  const Tensor input({3}, {1.5, -2.0, 0.25});
  Tensor w({3, 3});
  for (std::size_t i = 0; i < 3; ++i) w(i, i) = 1.0;
  const Tensor out = fully_connected(input, w, Tensor({3}));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(out[i], input[i]);
}

TEST(FullyConnected, HandDotProduct) {
  const Tensor out = fully_connected(Tensor({2}, {3, 4}),
                                     Tensor({1, 2}, {1, 2}), Tensor({1}, {5}));
  ASSERT_EQ(out.size(), 1u);
  EXPECT_DOUBLE_EQ(out[0], 16.0);
}

TEST(FullyConnected, ZeroInputGivesBias) {
  Rng rng(2);
  const Tensor w = random_tensor({4, 6}, rng);
  const Tensor b = random_tensor({4}, rng);
  const Tensor out = fully_connected(Tensor({6}), w, b);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(out[i], b[i]);
}

TEST(FullyConnected, DimensionMismatchThrows) {
  EXPECT_THROW(
      fully_connected(Tensor({3}), Tensor({2, 4}), Tensor({2})),
      ShapeError);
}

TEST(FullyConnectedBackward, MatchesFiniteDifferences) {
  Rng rng(50);
  const Tensor input = random_tensor({6}, rng);
  const Tensor w = random_tensor({4, 6}, rng);
  const Tensor cot = random_tensor({4}, rng);
  const DenseGrads g = fully_connected_backward(input, w, cot);
  const Tensor gi = finite_diff_grad(
      [&](const Tensor& t) {
        return dot(fully_connected(t, w, Tensor({4})), cot);
      },
      input);
  const Tensor gw = finite_diff_grad(
      [&](const Tensor& t) {
        return dot(fully_connected(input, t, Tensor({4})), cot);
      },
      w);
  EXPECT_LT(max_relative_error(g.input, gi), 1e-4);
  EXPECT_LT(max_relative_error(g.weights, gw), 1e-4);
}

TEST(Relu, ClampsNegatives) {
  const Tensor out = relu(Tensor({3}, {-1.0, 0.0, 2.0}));
  EXPECT_EQ(out[0], 0.0);
  EXPECT_EQ(out[1], 0.0);
  EXPECT_EQ(out[2], 2.0);
}

TEST(Relu, AllNegativeBlocksGradient) {
  const Tensor input({3}, {-1.0, -0.5, -2.0});
  const Tensor out = relu(input);
  const Tensor gin = relu_backward(input, Tensor::full({3}, 1.0));
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(out[i], 0.0);
    EXPECT_EQ(gin[i], 0.0);
  }
}

TEST(Relu, GradientAwayFromKink) {
  Rng rng(60);
  Tensor input({20});
  for (std::size_t i = 0; i < input.size(); ++i) {
    double v = rng.uniform(-1.0, 1.0);
    if (std::fabs(v) < 1e-3) v = v < 0 ? -0.1 : 0.1;
    input[i] = v;
  }
  const Tensor cot = random_tensor({20}, rng);
  const Tensor g = relu_backward(input, cot);
  const Tensor want = finite_diff_grad(
      [&](const Tensor& t) { return dot(relu(t), cot); }, input);
  EXPECT_LT(max_relative_error(g, want), 1e-4);
}

TEST(Dropout, RateZeroIsIdentity) {
  Rng rng(1);
  const Tensor input({5}, {1, 2, 3, 4, 5});
  for (Mode mode : {Mode::kTrain, Mode::kEval}) {
    const auto r = dropout(input, 0.0, rng, mode);
    for (std::size_t i = 0; i < input.size(); ++i)
      EXPECT_EQ(r.output[i], input[i]);
  }
}

TEST(Dropout, EvalModeIsIdentityBitExact) {
  Rng rng(2);
  Tensor input({64});
  for (std::size_t i = 0; i < input.size(); ++i) input[i] = rng.normal();
  const auto r = dropout(input, 0.7, rng, Mode::kEval);
  for (std::size_t i = 0; i < input.size(); ++i)
    EXPECT_EQ(r.output[i], input[i]);
}

TEST(Dropout, InvertedScalingPreservesExpectation) {
  Rng rng(3);
  const std::size_t n = 10000;
  const Tensor input = Tensor::full({n}, 1.0);
  const auto r = dropout(input, 0.5, rng, Mode::kTrain);
  std::size_t survivors = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (r.output[i] != 0.0) {
      ++survivors;
      EXPECT_DOUBLE_EQ(r.output[i], 2.0);  // 1 / (1 - 0.5)
    }
    sum += r.output[i];
  }
  EXPECT_NEAR(static_cast<double>(survivors) / n, 0.5, 0.03);
  EXPECT_NEAR(sum / n, 1.0, 0.07);
}

TEST(Inception, ChannelArithmeticAndSpatialExtent) {
  InceptionSpec spec;
  spec.in_channels = 3;
  spec.b1 = 2;
  spec.b3_reduce = 2;
  spec.b3 = 3;
  spec.b5_reduce = 1;
  spec.b5 = 1;
  spec.pool_proj = 2;
  EXPECT_EQ(spec.out_channels(), 8u);
  Rng rng(5);
  const InceptionParams params = InceptionParams::init(spec, rng);
  const Tensor input = random_tensor({3, 8, 8}, rng);
  const Tensor out = inception_forward(input, spec, params);
  EXPECT_EQ(out.shape(), Shape({8, 8, 8}));
}

TEST(Inception, ZeroParamsGiveZeroOutput) {
  InceptionSpec spec = InceptionSpec::balanced(2, 8);
  InceptionParams p;
  auto zero = [](const ConvSpec& c, Tensor& w, Tensor& b) {
    w = Tensor(c.weight_shape());
    b = Tensor(c.bias_shape());
  };
  zero(spec.conv_b1(), p.w_b1, p.b_b1);
  zero(spec.conv_b3_reduce(), p.w_b3r, p.b_b3r);
  zero(spec.conv_b3(), p.w_b3, p.b_b3);
  zero(spec.conv_b5_reduce(), p.w_b5r, p.b_b5r);
  zero(spec.conv_b5(), p.w_b5, p.b_b5);
  zero(spec.conv_pool_proj(), p.w_pp, p.b_pp);
  Rng rng(6);
  const Tensor input = random_tensor({2, 6, 6}, rng);
  const Tensor out = inception_forward(input, spec, p);
  EXPECT_EQ(out.shape(), Shape({8, 6, 6}));
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], 0.0);
}

TEST(Inception, BalancedSplitSumsToBudget) {
  for (std::size_t w : {4u, 8u, 12u, 24u, 32u, 37u}) {
    const InceptionSpec s = InceptionSpec::balanced(5, w);
    EXPECT_EQ(s.out_channels(), w);
  }
}

namespace {

// Pre-activation margin of an inception evaluation: smallest |z| over every
// internal ReLU input plus the top-two gap in every pooling window. Gradient
// checks only run on cases comfortably away from both kinds of kink.
double inception_kink_margin(const Tensor& input, const InceptionSpec& spec,
                             const InceptionParams& p) {
  const InceptionTrace t = inception_forward_traced(input, spec, p);
  double margin = 1e300;
  for (const Tensor* z : {&t.z_b1, &t.z_b3r, &t.z_b3, &t.z_b5r, &t.z_b5,
                          &t.z_pp})
    for (std::size_t i = 0; i < z->size(); ++i)
      margin = std::min(margin, std::fabs((*z)[i]));
  const std::size_t h = input.extent(1), w = input.extent(2);
  for (std::size_t c = 0; c < input.extent(0); ++c)
    for (long oy = 0; oy < static_cast<long>(h); ++oy)
      for (long ox = 0; ox < static_cast<long>(w); ++ox) {
        double best = -1e300, second = -1e300;
        for (long ky = -1; ky <= 1; ++ky)
          for (long kx = -1; kx <= 1; ++kx) {
            const long iy = oy + ky, ix = ox + kx;
            if (iy < 0 || iy >= static_cast<long>(h) || ix < 0 ||
                ix >= static_cast<long>(w))
              continue;
            const double v = input(c, static_cast<std::size_t>(iy),
                                   static_cast<std::size_t>(ix));
            if (v > best) {
              second = best;
              best = v;
            } else if (v > second) {
              second = v;
            }
          }
        if (second > -1e300) margin = std::min(margin, best - second);
      }
  return margin;
}

}  // namespace

TEST(Inception, GradientMatchesFiniteDifferences) {
  const InceptionSpec spec = InceptionSpec::balanced(3, 8);
  int checked = 0;
  for (std::uint64_t seed = 100; seed < 140 && checked < 3; ++seed) {
    Rng rng(seed);
    const Tensor input = random_tensor({3, 6, 6}, rng);
    InceptionParams p = InceptionParams::init(spec, rng);
    if (inception_kink_margin(input, spec, p) < 1e-3) continue;
    ++checked;

    const Tensor cot = random_tensor(
        {spec.out_channels(), 6, 6}, rng);
    const InceptionTrace trace = inception_forward_traced(input, spec, p);
    const InceptionGrads g = inception_backward(trace, spec, p, cot);

    const Tensor gi = finite_diff_grad(
        [&](const Tensor& t) {
          return dot(inception_forward(t, spec, p), cot);
        },
        input);
    EXPECT_LT(max_relative_error(g.input, gi), 1e-4);

    InceptionParams probe = p;
    const Tensor gw = finite_diff_grad(
        [&](const Tensor& t) {
          probe.w_b3 = t;
          return dot(inception_forward(input, spec, probe), cot);
        },
        p.w_b3);
    EXPECT_LT(max_relative_error(g.params.w_b3, gw), 1e-4);
    probe.w_b3 = p.w_b3;
    const Tensor gw5r = finite_diff_grad(
        [&](const Tensor& t) {
          probe.w_b5r = t;
          return dot(inception_forward(input, spec, probe), cot);
        },
        p.w_b5r);
    EXPECT_LT(max_relative_error(g.params.w_b5r, gw5r), 1e-4);
  }
  EXPECT_EQ(checked, 3);
}

TEST(Inception, BranchGeometryErrorNamesBranch) {
  InceptionSpec spec = InceptionSpec::balanced(3, 8);
  Rng rng(7);
  InceptionParams p = InceptionParams::init(spec, rng);
  p.w_b3 = Tensor({spec.b3, spec.b3_reduce, 5, 5});  // wrong kernel size
  const Tensor input = random_tensor({3, 6, 6}, rng);
  try {
    inception_forward(input, spec, p);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("3x3"), std::string::npos);
  }
}
