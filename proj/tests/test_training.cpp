#include <gtest/gtest.h>

#include <cmath>

#include "did3/net_builders.hpp"
#include "did3/training.hpp"

using namespace did3;

namespace {

ScaleConfig tiny_cfg(std::size_t identities) {
  ScaleConfig cfg;
  cfg.input_h = 16;
  cfg.input_w = 16;
  cfg.stage_widths = {2, 3, 4, 4};
  cfg.feature_dim = 8;
  cfg.num_identities = identities;
  cfg.dropout_rate = 0.0;
  return cfg;
}

// Each identity gets a distinct smooth pattern plus per-sample noise.
LabeledDataset tiny_dataset(std::size_t identities, std::size_t per_id,
                            std::uint64_t seed, double noise = 0.02) {
  LabeledDataset ds;
  Rng rng(seed);
  for (std::size_t id = 0; id < identities; ++id) {
    Tensor proto({1, 16, 16});
    const double phase = static_cast<double>(id) * 1.7;
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 0; x < 16; ++x)
        proto(0, y, x) =
            0.5 + 0.3 * std::sin(0.5 * static_cast<double>(x) + phase) *
                      std::cos(0.4 * static_cast<double>(y) - phase);
    for (std::size_t s = 0; s < per_id; ++s) {
      Tensor img = proto;
      for (std::size_t i = 0; i < img.size(); ++i)
        img[i] += noise * rng.normal();
      ds.images.push_back(std::move(img));
      ds.identities.push_back(id);
    }
  }
  return ds;
}

}  // namespace

TEST(SamplePairBatch, ForcedComposition) {
  LabeledDataset ds = tiny_dataset(2, 2, 1);
  TrainConfig cfg;
  cfg.batch_pairs = 4;
  cfg.genuine_fraction = 0.5;
  Rng rng(3);
  const auto batch = sample_pair_batch(ds, cfg, rng);
  ASSERT_EQ(batch.size(), 4u);
  std::size_t genuine = 0;
  for (const auto& p : batch) {
    EXPECT_NE(p.a, p.b);
    EXPECT_EQ(p.same, ds.identities[p.a] == ds.identities[p.b]);
    genuine += p.same ? 1 : 0;
  }
  EXPECT_EQ(genuine, 2u);
}

TEST(SamplePairBatch, SingleIdentityIsDegenerate) {
  LabeledDataset ds = tiny_dataset(1, 4, 2);
  TrainConfig cfg;
  Rng rng(4);
  EXPECT_THROW(sample_pair_batch(ds, cfg, rng), DataError);
}

TEST(SamplePairBatch, NoGenuinePairPossibleIsDegenerate) {
  LabeledDataset ds = tiny_dataset(3, 1, 5);  // one image per identity
  TrainConfig cfg;
  Rng rng(6);
  EXPECT_THROW(sample_pair_batch(ds, cfg, rng), DataError);
}

TEST(SamplePairBatch, EmpiricalGenuineFraction) {
  LabeledDataset ds = tiny_dataset(5, 4, 7);
  TrainConfig cfg;
  cfg.batch_pairs = 10000;
  cfg.genuine_fraction = 0.3;
  Rng rng(8);
  const auto batch = sample_pair_batch(ds, cfg, rng);
  double genuine = 0.0;
  for (const auto& p : batch) genuine += p.same ? 1.0 : 0.0;
  EXPECT_NEAR(genuine / 10000.0, 0.3, 0.02);
}

TEST(SgdStep, HandArithmetic) {
  Tensor p({1}, {2.0});
  Tensor g({1}, {3.0});
  Tensor v({1});
  sgd_step(p, g, v, 1.0, 0.0);
  EXPECT_DOUBLE_EQ(p[0], -1.0);
}

TEST(SgdStep, ZeroGradientKeepsParams) {
  Tensor p({3}, {1.0, -2.0, 0.5});
  Tensor g({3});
  Tensor v({3});
  sgd_step(p, g, v, 0.1, 0.9);
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(p[1], -2.0);
  EXPECT_EQ(p[2], 0.5);
}

TEST(SgdStep, MomentumMatchesHandUnroll) {
  Tensor p({1}, {0.0});
  Tensor g({1}, {1.0});
  Tensor v({1});
  const double lr = 0.1, mu = 0.9;
  sgd_step(p, g, v, lr, mu);
  sgd_step(p, g, v, lr, mu);
  // v1 = -0.1, p1 = -0.1; v2 = 0.9*(-0.1) - 0.1 = -0.19, p2 = -0.29
  EXPECT_NEAR(v[0], -0.19, 1e-15);
  EXPECT_NEAR(p[0], -0.29, 1e-15);
}

TEST(SgdStep, ShapeMismatchThrows) {
  Tensor p({2}), g({3}), v({2});
  EXPECT_THROW(sgd_step(p, g, v, 0.1, 0.9), ShapeError);
}

TEST(Train, ZeroLearningRateKeepsEverything) {
  const ScaleConfig cfg = tiny_cfg(3);
  NetworkGraph net = build_deepid2plus(cfg, Rng(10));
  const ParamStore before = net.params;
  LabeledDataset ds = tiny_dataset(3, 4, 11);
  TrainConfig tc;
  tc.learning_rate = 0.0;
  tc.epochs = 3;
  tc.batch_pairs = 4;
  tc.seed = 12;
  const TrainHistory history = train(net, ds, tc);
  ASSERT_EQ(history.size(), 3u);
  for (const auto& [name, t] : net.params) {
    const Tensor& orig = before.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(t[i], orig[i]);
  }
}

TEST(Train, LossDropsOnSeparableToySet) {
  const ScaleConfig cfg = tiny_cfg(2);
  NetworkGraph net = build_deepid2plus(cfg, Rng(13));
  LabeledDataset ds = tiny_dataset(2, 6, 14);
  TrainConfig tc;
  tc.learning_rate = 0.02;
  tc.epochs = 8;
  tc.batch_pairs = 8;
  tc.batches_per_epoch = 2;
  tc.seed = 15;
  const TrainHistory history = train(net, ds, tc);
  ASSERT_EQ(history.size(), 8u);
  for (double loss : history) EXPECT_TRUE(std::isfinite(loss));
  EXPECT_LT(history.back(), 0.5 * history.front());
}

TEST(Train, SameSeedGivesBitIdenticalHistory) {
  const ScaleConfig cfg = tiny_cfg(3);
  LabeledDataset ds = tiny_dataset(3, 4, 16);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_pairs = 4;
  tc.seed = 17;

  NetworkGraph a = build_deepid2plus(cfg, Rng(18));
  NetworkGraph b = build_deepid2plus(cfg, Rng(18));
  const TrainHistory ha = train(a, ds, tc);
  const TrainHistory hb = train(b, ds, tc);
  ASSERT_EQ(ha.size(), hb.size());
  for (std::size_t i = 0; i < ha.size(); ++i) EXPECT_EQ(ha[i], hb[i]);
  for (const auto& [name, t] : a.params) {
    const Tensor& other = b.params.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(t[i], other[i]);
  }
}

TEST(Train, DropoutPathIsAlsoDeterministic) {
  ScaleConfig cfg = tiny_cfg(3);
  cfg.dropout_rate = 0.4;
  LabeledDataset ds = tiny_dataset(3, 4, 19);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_pairs = 4;
  tc.seed = 20;
  NetworkGraph a = build_deepid3_net2(cfg, Rng(21));
  NetworkGraph b = build_deepid3_net2(cfg, Rng(21));
  const TrainHistory ha = train(a, ds, tc);
  const TrainHistory hb = train(b, ds, tc);
  for (std::size_t i = 0; i < ha.size(); ++i) EXPECT_EQ(ha[i], hb[i]);
}

TEST(Train, GradientAccumulationIsLinearOverHeads) {
  const ScaleConfig cfg = tiny_cfg(3);
  const NetworkGraph net = build_deepid3_net2(cfg, Rng(22));
  LabeledDataset ds = tiny_dataset(3, 2, 23);

  const Tensor& a = ds.images[0];
  const Tensor& b = ds.images[2];

  ParamStore full;
  accumulate_pair_gradients(net, a, b, 0, 1, Mode::kEval, nullptr, full);

  ParamStore sum;
  for (std::size_t h = 0; h < net.heads.size(); ++h) {
    NetworkGraph single = net;
    single.heads = {net.heads[h]};
    accumulate_pair_gradients(single, a, b, 0, 1, Mode::kEval, nullptr, sum);
  }
  ASSERT_EQ(full.size(), sum.size());
  for (const auto& [name, g] : full) {
    const Tensor& other = sum.at(name);
    for (std::size_t i = 0; i < g.size(); ++i)
      EXPECT_NEAR(g[i], other[i], 1e-12) << name;
  }
}

TEST(Train, HighLambdaPullsGenuinePairsTogether) {
  ScaleConfig cfg = tiny_cfg(2);
  cfg.head_lambda = 50.0;
  NetworkGraph net = build_deepid2plus(cfg, Rng(24));
  // every image of an identity identical: genuine distance must shrink
  LabeledDataset ds = tiny_dataset(2, 6, 25, 0.0);

  const SupervisionHead& head = net.heads.back();
  auto genuine_distance = [&]() {
    const std::size_t at = net.node_index(head.attach_point) + 1;
    const ForwardTrace t1 = net.forward(ds.images[0], Mode::kEval);
    const ForwardTrace t2 = net.forward(ds.images[1], Mode::kEval);
    const Tensor f1 =
        fully_connected(t1.act[at].flattened(), net.param(head.proj_w_name),
                        net.param(head.proj_b_name));
    const Tensor f2 =
        fully_connected(t2.act[at].flattened(), net.param(head.proj_w_name),
                        net.param(head.proj_b_name));
    return distance(f1, f2);
  };

  const double before = genuine_distance();
  EXPECT_EQ(before, 0.0);  // identical images -> identical features

  // distinct images of one identity: use two identities' protos as one id
  LabeledDataset mixed = tiny_dataset(2, 6, 26, 0.05);
  TrainConfig tc;
  tc.learning_rate = 0.005;
  tc.epochs = 6;
  tc.batch_pairs = 8;
  tc.batches_per_epoch = 2;
  tc.seed = 27;
  NetworkGraph net2 = build_deepid2plus(cfg, Rng(28));
  const SupervisionHead& head2 = net2.heads.back();
  auto mixed_distance = [&]() {
    const std::size_t at = net2.node_index(head2.attach_point) + 1;
    double total = 0.0;
    int count = 0;
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = i + 1; j < 6; ++j) {
        const ForwardTrace t1 = net2.forward(mixed.images[i], Mode::kEval);
        const ForwardTrace t2 = net2.forward(mixed.images[j], Mode::kEval);
        const Tensor f1 = fully_connected(t1.act[at].flattened(),
                                          net2.param(head2.proj_w_name),
                                          net2.param(head2.proj_b_name));
        const Tensor f2 = fully_connected(t2.act[at].flattened(),
                                          net2.param(head2.proj_w_name),
                                          net2.param(head2.proj_b_name));
        total += distance(f1, f2);
        ++count;
      }
    return total / count;
  };
  const double d_before = mixed_distance();
  train(net2, mixed, tc);
  const double d_after = mixed_distance();
  EXPECT_LT(d_after, d_before);
}

TEST(Train, WritesEpochTabLossLog) {
  const TrainHistory history{1.5, 0.75};
  const std::string path = "/tmp/did3_test_train.log";
  write_training_log(path, history);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "0\t1.5");
  std::getline(in, line);
  EXPECT_EQ(line, "1\t0.75");
}
