#pragma once

#include <array>
#include <string>
#include <vector>

#include "did3/network.hpp"
#include "did3/rng.hpp"

namespace did3 {

// Toy-scale replacement for the architectures' per-stage filter counts. The
// topology of each builder is fixed; only widths, input geometry, feature
// dimension and identity count vary.
struct ScaleConfig {
  std::size_t input_channels = 1;
  std::size_t input_h = 32;
  std::size_t input_w = 32;
  std::array<std::size_t, 4> stage_widths{8, 16, 24, 32};
  std::size_t feature_dim = 64;
  std::size_t num_identities = 10;
  double dropout_rate = 0.3;
  double head_lambda = 0.05;   // verification weight
  double head_margin = 1.0;    // overwritten per run by the trainer

  void validate() const {
    if (input_channels == 0 || input_h == 0 || input_w == 0)
      throw ShapeError("ScaleConfig: input geometry must be positive");
    for (std::size_t w : stage_widths)
      if (w == 0) throw ShapeError("ScaleConfig: stage widths must be positive");
    if (feature_dim == 0)
      throw ShapeError("ScaleConfig: feature_dim must be positive");
    if (num_identities < 2)
      throw ShapeError("ScaleConfig: need at least 2 identities");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
      throw Error("ScaleConfig: dropout_rate must be in [0,1)");
  }
};

namespace detail {

// Incrementally appends nodes and their freshly initialized parameters.
class GraphBuilder {
 public:
  GraphBuilder(NetworkGraph& g, const ScaleConfig& cfg, Rng& rng)
      : g_(g), cfg_(cfg), rng_(rng) {
    shape_ = {cfg.input_channels, cfg.input_h, cfg.input_w};
    g_.input_channels = cfg.input_channels;
    g_.input_h = cfg.input_h;
    g_.input_w = cfg.input_w;
    g_.feature_dim = cfg.feature_dim;
    g_.num_identities = cfg.num_identities;
  }

  const Shape& shape() const { return shape_; }

  void conv(const std::string& name, std::size_t out_channels,
            std::size_t kernel = 3) {
    LayerNode n;
    n.name = name;
    n.kind = LayerKind::kConv;
    n.relu = true;
    n.conv = ConvSpec{shape_[0], out_channels, kernel, kernel, 1, kernel / 2};
    n.in_shape = shape_;
    shape_ = {out_channels, n.conv.out_h(shape_[1]), n.conv.out_w(shape_[2])};
    n.out_shape = shape_;
    g_.params.emplace(name + ".w",
                      init_he(n.conv.weight_shape(), n.conv.fan_in(), rng_));
    g_.params.emplace(name + ".b", Tensor(n.conv.bias_shape()));
    g_.nodes.push_back(std::move(n));
  }

  void local(const std::string& name, std::size_t out_channels,
             std::size_t kernel = 3) {
    LayerNode n;
    n.name = name;
    n.kind = LayerKind::kLocallyConnected;
    n.relu = true;
    n.local = LocalSpec{shape_[0], out_channels, kernel,     kernel,
                        1,         kernel / 2,   shape_[1], shape_[2]};
    n.in_shape = shape_;
    shape_ = {out_channels, n.local.out_h(), n.local.out_w()};
    n.out_shape = shape_;
    g_.params.emplace(name + ".w",
                      init_he(n.local.weight_shape(), n.local.fan_in(), rng_));
    g_.params.emplace(name + ".b", Tensor(n.local.bias_shape()));
    g_.nodes.push_back(std::move(n));
  }

  void pool(const std::string& name) {
    if (shape_[1] < 2 || shape_[2] < 2)
      throw ShapeError("builder stage " + name + ": spatial extent " +
                       shape_to_string(shape_) + " too small to pool");
    LayerNode n;
    n.name = name;
    n.kind = LayerKind::kMaxPool;
    n.pool_window = 2;
    n.pool_stride = 2;
    n.in_shape = shape_;
    shape_ = {shape_[0], (shape_[1] - 2) / 2 + 1, (shape_[2] - 2) / 2 + 1};
    n.out_shape = shape_;
    g_.nodes.push_back(std::move(n));
  }

  void inception(const std::string& name, std::size_t out_channels) {
    LayerNode n;
    n.name = name;
    n.kind = LayerKind::kInception;
    n.inception = InceptionSpec::balanced(shape_[0], out_channels);
    n.in_shape = shape_;
    shape_ = {n.inception.out_channels(), shape_[1], shape_[2]};
    n.out_shape = shape_;
    InceptionParams p = InceptionParams::init(n.inception, rng_);
    const Tensor* src[] = {&p.w_b1,  &p.b_b1, &p.w_b3r, &p.b_b3r,
                           &p.w_b3,  &p.b_b3, &p.w_b5r, &p.b_b5r,
                           &p.w_b5,  &p.b_b5, &p.w_pp,  &p.b_pp};
    const auto suffixes = inception_param_suffixes();
    for (std::size_t i = 0; i < suffixes.size(); ++i)
      g_.params.emplace(name + "." + suffixes[i], *src[i]);
    g_.nodes.push_back(std::move(n));
  }

  void fc(const std::string& name, std::size_t out_dim) {
    LayerNode n;
    n.name = name;
    n.kind = LayerKind::kFullyConnected;
    n.relu = true;
    n.fc_in = shape_numel(shape_);
    n.fc_out = out_dim;
    n.in_shape = shape_;
    shape_ = {out_dim};
    n.out_shape = shape_;
    g_.params.emplace(name + ".w", init_he({out_dim, n.fc_in}, n.fc_in, rng_));
    g_.params.emplace(name + ".b", Tensor({out_dim}));
    g_.nodes.push_back(std::move(n));
  }

  void dropout_node(const std::string& name) {
    LayerNode n;
    n.name = name;
    n.kind = LayerKind::kDropout;
    n.dropout_rate = cfg_.dropout_rate;
    n.in_shape = shape_;
    n.out_shape = shape_;
    g_.nodes.push_back(std::move(n));
  }

  void head(const std::string& attach_node) {
    const LayerNode& at = g_.nodes[g_.node_index(attach_node)];
    SupervisionHead h;
    h.attach_point = attach_node;
    h.input_dim = shape_numel(at.out_shape);
    h.feature_dim = cfg_.feature_dim;
    h.num_identities = cfg_.num_identities;
    h.margin = cfg_.head_margin;
    h.lambda = cfg_.head_lambda;
    const std::string base = "head" + std::to_string(g_.heads.size());
    h.proj_w_name = base + ".proj.w";
    h.proj_b_name = base + ".proj.b";
    h.softmax_w_name = base + ".softmax.w";
    g_.params.emplace(h.proj_w_name,
                      init_he({h.feature_dim, h.input_dim}, h.input_dim, rng_));
    g_.params.emplace(h.proj_b_name, Tensor({h.feature_dim}));
    g_.params.emplace(h.softmax_w_name,
                      init_he({h.num_identities, h.feature_dim}, h.feature_dim,
                              rng_));
    g_.heads.push_back(std::move(h));
  }

 private:
  NetworkGraph& g_;
  const ScaleConfig& cfg_;
  Rng& rng_;
  Shape shape_;
};

}  // namespace detail

// DeepID2+ baseline: three conv+pool stages (the third modeled as
// locally-connected), one locally-connected layer, one fully-connected
// feature layer. Five weight-bearing feature layers in total; heads after
// each pooling stage and on the final feature layer.
inline NetworkGraph build_deepid2plus(const ScaleConfig& cfg, Rng rng) {
  cfg.validate();
  NetworkGraph g;
  g.arch = "deepid2plus";
  detail::GraphBuilder b(g, cfg, rng);

  b.conv("conv1", cfg.stage_widths[0]);
  b.pool("pool1");
  b.conv("conv2", cfg.stage_widths[1]);
  b.pool("pool2");
  b.local("local3", cfg.stage_widths[2]);
  b.pool("pool3");
  b.local("local4", cfg.stage_widths[3]);
  b.fc("fc5", cfg.feature_dim);
  g.final_feature_layer = "fc5";
  b.dropout_node("drop");

  b.head("pool1");
  b.head("pool2");
  b.head("pool3");
  b.head("drop");
  return g;
}

// DeepID3 net1: four stages of two stacked 3x3 layers before each pool; the
// last stage's pair is locally connected and its second layer is the final
// feature layer (no fully-connected layer on top). Requires feature_dim to
// be divisible by the stage-4 spatial area.
inline NetworkGraph build_deepid3_net1(const ScaleConfig& cfg, Rng rng) {
  cfg.validate();
  NetworkGraph g;
  g.arch = "deepid3_net1";
  detail::GraphBuilder b(g, cfg, rng);

  for (int s = 1; s <= 3; ++s) {
    const std::size_t w = cfg.stage_widths[s - 1];
    b.conv("conv" + std::to_string(s) + "a", w);
    b.conv("conv" + std::to_string(s) + "b", w);
    b.pool("pool" + std::to_string(s));
  }
  const std::size_t area = b.shape()[1] * b.shape()[2];
  if (cfg.feature_dim % area != 0)
    throw ShapeError(
        "deepid3_net1 stage4: feature_dim " + std::to_string(cfg.feature_dim) +
        " must be divisible by the stage-4 spatial area " +
        std::to_string(area));
  b.local("local4a", cfg.stage_widths[3]);
  b.local("local4b", cfg.feature_dim / area);
  g.final_feature_layer = "local4b";
  b.dropout_node("drop");
  b.pool("pool4");

  b.head("pool1");
  b.head("pool2");
  b.head("pool3");
  b.head("pool4");
  b.head("drop");
  return g;
}

// DeepID3 net2: two conv+pool stages, then three inception layers before the
// third pool and two before the fourth, then a fully-connected feature layer
// with dropout. One head per pooling stage; the stage-4 head is the one on
// the feature layer that follows pool4.
inline NetworkGraph build_deepid3_net2(const ScaleConfig& cfg, Rng rng) {
  cfg.validate();
  NetworkGraph g;
  g.arch = "deepid3_net2";
  detail::GraphBuilder b(g, cfg, rng);

  for (int s = 1; s <= 2; ++s) {
    const std::size_t w = cfg.stage_widths[s - 1];
    b.conv("conv" + std::to_string(s) + "a", w);
    b.conv("conv" + std::to_string(s) + "b", w);
    b.pool("pool" + std::to_string(s));
  }
  b.inception("incep3a", cfg.stage_widths[2]);
  b.inception("incep3b", cfg.stage_widths[2]);
  b.inception("incep3c", cfg.stage_widths[2]);
  b.pool("pool3");
  b.inception("incep4a", cfg.stage_widths[3]);
  b.inception("incep4b", cfg.stage_widths[3]);
  b.pool("pool4");
  b.fc("fc_feat", cfg.feature_dim);
  g.final_feature_layer = "fc_feat";
  b.dropout_node("drop");

  b.head("pool1");
  b.head("pool2");
  b.head("pool3");
  b.head("drop");
  return g;
}

inline NetworkGraph build_architecture(const std::string& arch,
                                       const ScaleConfig& cfg, Rng rng) {
  if (arch == "deepid2plus") return build_deepid2plus(cfg, rng);
  if (arch == "deepid3_net1") return build_deepid3_net1(cfg, rng);
  if (arch == "deepid3_net2") return build_deepid3_net2(cfg, rng);
  throw ConfigError("unknown architecture '" + arch + "'");
}

// ---- structural audit helpers (used by tests and the acceptance suite) ----

inline std::vector<std::size_t> pool_node_indices(const NetworkGraph& g) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < g.nodes.size(); ++i)
    if (g.nodes[i].kind == LayerKind::kMaxPool) out.push_back(i);
  return out;
}

// True when every pooling node is directly preceded by exactly two stacked
// conv-like layers (convolutional or locally connected).
inline bool pools_preceded_by_stacked_pairs(const NetworkGraph& g) {
  auto conv_like = [](const LayerNode& n) {
    return n.kind == LayerKind::kConv || n.kind == LayerKind::kLocallyConnected;
  };
  for (std::size_t i : pool_node_indices(g)) {
    std::size_t j = i;
    std::size_t seen = 0;
    while (j-- > 0) {
      if (g.nodes[j].kind == LayerKind::kDropout) continue;  // transparent
      if (conv_like(g.nodes[j])) {
        ++seen;
        if (seen == 2) break;
      } else {
        return false;
      }
    }
    if (seen != 2) return false;
    // the layer before the pair must not extend it to a triple
    while (j-- > 0) {
      if (g.nodes[j].kind == LayerKind::kDropout) continue;
      if (conv_like(g.nodes[j])) return false;
      break;
    }
  }
  return !pool_node_indices(g).empty();
}

// Number of inception nodes strictly between pool (k-1) and pool k,
// 1-indexed; k=1 counts from the input.
inline std::size_t inception_count_before_pool(const NetworkGraph& g,
                                               std::size_t k) {
  const auto pools = pool_node_indices(g);
  if (k == 0 || k > pools.size())
    throw Error("inception_count_before_pool: no pool stage " +
                std::to_string(k));
  const std::size_t lo = k == 1 ? 0 : pools[k - 2] + 1;
  const std::size_t hi = pools[k - 1];
  std::size_t n = 0;
  for (std::size_t i = lo; i < hi; ++i)
    if (g.nodes[i].kind == LayerKind::kInception) ++n;
  return n;
}

inline LayerKind final_feature_kind(const NetworkGraph& g) {
  return g.nodes[g.node_index(g.final_feature_layer)].kind;
}

inline bool head_attached_at(const NetworkGraph& g, const std::string& node) {
  for (const auto& h : g.heads)
    if (h.attach_point == node) return true;
  return false;
}

}  // namespace did3
