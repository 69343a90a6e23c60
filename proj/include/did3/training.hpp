#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "did3/network.hpp"
#include "did3/rng.hpp"
#include "did3/tensor.hpp"

namespace did3 {

struct LabeledDataset {
  std::vector<Tensor> images;
  std::vector<std::size_t> identities;
  int region_id = 0;

  std::size_t size() const { return images.size(); }

  void validate(std::size_t num_identities) const {
    if (images.size() != identities.size())
      throw DataError("dataset: " + std::to_string(images.size()) +
                      " images vs " + std::to_string(identities.size()) +
                      " labels");
    for (std::size_t id : identities)
      if (id >= num_identities)
        throw DataError("dataset: label " + std::to_string(id) +
                        " out of range [0," + std::to_string(num_identities) +
                        ")");
  }
};

struct TrainConfig {
  double learning_rate = 0.01;
  double lr_decay = 0.95;       // multiplicative, per epoch
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::size_t batch_pairs = 32;
  std::size_t epochs = 10;
  std::size_t batches_per_epoch = 0;  // 0: derived from dataset size
  double genuine_fraction = 0.5;
  bool auto_margin = true;  // set each head's margin from the data at init
  std::uint64_t seed = 1;

  void validate() const {
    if (!(learning_rate >= 0.0))
      throw ConfigError("train: learning_rate must be >= 0");
    if (!(lr_decay > 0.0)) throw ConfigError("train: lr_decay must be > 0");
    if (momentum < 0.0 || momentum >= 1.0)
      throw ConfigError("train: momentum must be in [0,1)");
    if (batch_pairs == 0) throw ConfigError("train: batch_pairs must be > 0");
    if (epochs == 0) throw ConfigError("train: epochs must be > 0");
    if (!(genuine_fraction > 0.0 && genuine_fraction < 1.0))
      throw ConfigError("train: genuine_fraction must be in (0,1)");
  }
};

struct PairSample {
  std::size_t a = 0;
  std::size_t b = 0;
  bool same = false;
};

// Draws a batch whose genuine-pair count is round(batch * fraction); genuine
// pairs pick an identity uniformly among those with >= 2 images, impostor
// pairs pick two distinct identities uniformly.
inline std::vector<PairSample> sample_pair_batch(const LabeledDataset& ds,
                                                 const TrainConfig& cfg,
                                                 Rng& rng) {
  std::size_t max_id = 0;
  for (std::size_t id : ds.identities) max_id = std::max(max_id, id);
  std::vector<std::vector<std::size_t>> by_id(max_id + 1);
  for (std::size_t i = 0; i < ds.identities.size(); ++i)
    by_id[ds.identities[i]].push_back(i);

  std::vector<std::size_t> present, multi;
  for (std::size_t id = 0; id < by_id.size(); ++id) {
    if (by_id[id].empty()) continue;
    present.push_back(id);
    if (by_id[id].size() >= 2) multi.push_back(id);
  }
  if (multi.empty())
    throw DataError("sample_pair_batch: no identity has two images; "
                    "cannot form a genuine pair");
  if (present.size() < 2)
    throw DataError("sample_pair_batch: fewer than two identities; "
                    "cannot form an impostor pair");

  const std::size_t n_genuine = static_cast<std::size_t>(
      std::llround(static_cast<double>(cfg.batch_pairs) * cfg.genuine_fraction));
  std::vector<PairSample> batch;
  batch.reserve(cfg.batch_pairs);
  for (std::size_t k = 0; k < cfg.batch_pairs; ++k) {
    PairSample p;
    if (k < n_genuine) {
      const auto& pool = by_id[multi[rng.uniform_index(multi.size())]];
      const std::size_t u = rng.uniform_index(pool.size());
      std::size_t v = rng.uniform_index(pool.size() - 1);
      if (v >= u) ++v;
      p = {pool[u], pool[v], true};
    } else {
      const std::size_t ia = rng.uniform_index(present.size());
      std::size_t ib = rng.uniform_index(present.size() - 1);
      if (ib >= ia) ++ib;
      const auto& pa = by_id[present[ia]];
      const auto& pb = by_id[present[ib]];
      p = {pa[rng.uniform_index(pa.size())], pb[rng.uniform_index(pb.size())],
           false};
    }
    batch.push_back(p);
  }
  return batch;
}

// v <- momentum*v - lr*(g + wd*p);  p <- p + v
inline void sgd_step(Tensor& params, const Tensor& grads, Tensor& velocity,
                     double lr, double momentum, double weight_decay = 0.0) {
  require_same_shape(params, grads, "sgd_step");
  require_same_shape(params, velocity, "sgd_step velocity");
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum * velocity[i] -
                  lr * (grads[i] + weight_decay * params[i]);
    params[i] += velocity[i];
  }
}

// Forward both images of a pair, evaluate every head, and backpropagate the
// summed loss into `grads`. Returns the pair's total loss.
inline double accumulate_pair_gradients(const NetworkGraph& net,
                                        const Tensor& img_a,
                                        const Tensor& img_b, std::size_t id_a,
                                        std::size_t id_b, Mode mode, Rng* rng,
                                        ParamStore& grads) {
  ForwardTrace ta = net.forward(img_a, mode, rng);
  ForwardTrace tb = net.forward(img_b, mode, rng);

  std::vector<Tensor> grad_a(ta.act.size());
  std::vector<Tensor> grad_b(tb.act.size());
  auto add_into = [](Tensor& dst, const Tensor& src) {
    if (dst.size() == 0)
      dst = src;
    else
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  };
  auto accumulate = [&grads](const std::string& name, const Tensor& g) {
    auto it = grads.find(name);
    if (it == grads.end())
      grads.emplace(name, g);
    else
      for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
  };

  double total = 0.0;
  for (const SupervisionHead& h : net.heads) {
    const std::size_t at = net.node_index(h.attach_point) + 1;
    HeadGrads hg = head_loss(h, net.param(h.proj_w_name),
                             net.param(h.proj_b_name),
                             net.param(h.softmax_w_name), ta.act[at],
                             tb.act[at], id_a, id_b);
    total += hg.loss;
    accumulate(h.proj_w_name, hg.proj_w);
    accumulate(h.proj_b_name, hg.proj_b);
    accumulate(h.softmax_w_name, hg.softmax_w);
    add_into(grad_a[at], hg.act1);
    add_into(grad_b[at], hg.act2);
  }
  net.backward(ta, grad_a, grads);
  net.backward(tb, grad_b, grads);
  return total;
}

// Median impostor distance of each head's projected features at the current
// parameters; used to pick verification margins before training starts.
inline void set_margins_from_data(NetworkGraph& net, const LabeledDataset& ds,
                                  const TrainConfig& cfg, Rng rng,
                                  std::size_t sample_pairs = 101) {
  TrainConfig probe = cfg;
  probe.batch_pairs = sample_pairs;
  probe.genuine_fraction = 0.5;  // only the impostor half is used
  const auto pairs = sample_pair_batch(ds, probe, rng);

  for (SupervisionHead& h : net.heads) {
    const std::size_t at = net.node_index(h.attach_point) + 1;
    std::vector<double> dists;
    for (const PairSample& p : pairs) {
      if (p.same) continue;
      ForwardTrace ta = net.forward(ds.images[p.a], Mode::kEval, nullptr,
                                    at - 1);
      ForwardTrace tb = net.forward(ds.images[p.b], Mode::kEval, nullptr,
                                    at - 1);
      const Tensor fa = fully_connected(ta.act.back().flattened(),
                                        net.param(h.proj_w_name),
                                        net.param(h.proj_b_name));
      const Tensor fb = fully_connected(tb.act.back().flattened(),
                                        net.param(h.proj_w_name),
                                        net.param(h.proj_b_name));
      dists.push_back(distance(fa, fb));
    }
    if (dists.empty()) throw DataError("set_margins_from_data: no impostors");
    std::nth_element(dists.begin(), dists.begin() + dists.size() / 2,
                     dists.end());
    const double med = dists[dists.size() / 2];
    h.margin = med > 0.0 ? med : 1.0;
  }
}

// Per-epoch mean total loss (sum over heads, averaged over the epoch's pairs).
using TrainHistory = std::vector<double>;

inline TrainHistory train(NetworkGraph& net, const LabeledDataset& ds,
                          const TrainConfig& cfg) {
  cfg.validate();
  ds.validate(net.num_identities);
  if (ds.size() < 2) throw DataError("train: dataset too small");

  Rng rng(cfg.seed);
  if (cfg.auto_margin)
    set_margins_from_data(net, ds, cfg, rng.derive(0x6d617267));  // "marg"

  const std::size_t batches =
      cfg.batches_per_epoch > 0
          ? cfg.batches_per_epoch
          : std::max<std::size_t>(1, ds.size() / (2 * cfg.batch_pairs));

  ParamStore velocity;
  for (const auto& [name, t] : net.params)
    velocity.emplace(name, Tensor(t.shape()));

  TrainHistory history;
  double lr = cfg.learning_rate;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    std::size_t epoch_pairs = 0;
    for (std::size_t b = 0; b < batches; ++b) {
      const auto batch = sample_pair_batch(ds, cfg, rng);
      ParamStore grads;
      double batch_loss = 0.0;
      for (const PairSample& p : batch) {
        batch_loss += accumulate_pair_gradients(
            net, ds.images[p.a], ds.images[p.b], ds.identities[p.a],
            ds.identities[p.b], Mode::kTrain, &rng, grads);
      }
      if (!std::isfinite(batch_loss))
        throw DivergenceError("train: non-finite loss at epoch " +
                              std::to_string(epoch) + ", lr " +
                              std::to_string(lr));
      const double inv = 1.0 / static_cast<double>(batch.size());
      for (auto& [name, g] : grads) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= inv;
        sgd_step(net.param(name), g, velocity.at(name), lr, cfg.momentum,
                 cfg.weight_decay);
      }
      epoch_loss += batch_loss;
      epoch_pairs += batch.size();
    }
    history.push_back(epoch_loss / static_cast<double>(epoch_pairs));
    lr *= cfg.lr_decay;
  }
  return history;
}

// One line per epoch: epoch<TAB>mean_loss
inline void write_training_log(const std::string& path,
                               const TrainHistory& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write training log: " + path);
  char buf[64];
  for (std::size_t e = 0; e < history.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu\t%.17g\n", e, history[e]);
    out << buf;
  }
}

}  // namespace did3
