#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "did3/layers/conv2d.hpp"
#include "did3/layers/dense.hpp"
#include "did3/layers/dropout.hpp"
#include "did3/layers/inception.hpp"
#include "did3/layers/locally_connected.hpp"
#include "did3/layers/maxpool.hpp"
#include "did3/layers/relu.hpp"
#include "did3/rng.hpp"
#include "did3/supervision.hpp"
#include "did3/tensor.hpp"

namespace did3 {

enum class LayerKind {
  kConv,
  kLocallyConnected,
  kFullyConnected,
  kMaxPool,
  kInception,
  kDropout,
};

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kLocallyConnected: return "local";
    case LayerKind::kFullyConnected: return "fc";
    case LayerKind::kMaxPool: return "maxpool";
    case LayerKind::kInception: return "inception";
    case LayerKind::kDropout: return "dropout";
  }
  return "?";
}

// One link of the chain. Weight-bearing kinds (conv, local, fc, inception)
// optionally fuse a ReLU on their output.
struct LayerNode {
  std::string name;
  LayerKind kind = LayerKind::kConv;
  bool relu = false;

  ConvSpec conv;
  LocalSpec local;
  std::size_t fc_in = 0, fc_out = 0;
  std::size_t pool_window = 2, pool_stride = 2;
  InceptionSpec inception;
  double dropout_rate = 0.0;

  Shape in_shape, out_shape;

  bool has_weights() const {
    return kind == LayerKind::kConv || kind == LayerKind::kLocallyConnected ||
           kind == LayerKind::kFullyConnected || kind == LayerKind::kInception;
  }
};

// Inception tensors in serialization order.
inline std::vector<std::string> inception_param_suffixes() {
  return {"b1.w",  "b1.b",  "b3r.w", "b3r.b", "b3.w", "b3.b",
          "b5r.w", "b5r.b", "b5.w",  "b5.b",  "pp.w", "pp.b"};
}

inline std::vector<std::string> node_param_names(const LayerNode& n) {
  switch (n.kind) {
    case LayerKind::kConv:
    case LayerKind::kLocallyConnected:
    case LayerKind::kFullyConnected:
      return {n.name + ".w", n.name + ".b"};
    case LayerKind::kInception: {
      std::vector<std::string> out;
      for (const auto& s : inception_param_suffixes())
        out.push_back(n.name + "." + s);
      return out;
    }
    default:
      return {};
  }
}

inline std::vector<std::string> head_param_names(const SupervisionHead& h) {
  return {h.proj_w_name, h.proj_b_name, h.softmax_w_name};
}

using ParamStore = std::map<std::string, Tensor>;

struct ForwardTrace {
  // act[0] is the input image; act[i+1] the post-activation output of node i.
  std::vector<Tensor> act;
  // pre-relu output of weight-bearing nodes (empty tensor otherwise)
  std::vector<Tensor> pre_act;
  std::vector<std::vector<std::size_t>> pool_argmax;
  std::vector<Tensor> dropout_mask;
  std::vector<std::optional<InceptionTrace>> inception;
};

// A single-chain network with supervision heads branching off named nodes.
struct NetworkGraph {
  std::string arch;  // builder tag, e.g. "deepid2plus"
  std::vector<LayerNode> nodes;
  ParamStore params;
  std::vector<SupervisionHead> heads;
  std::string final_feature_layer;
  std::size_t input_channels = 1, input_h = 0, input_w = 0;
  std::size_t feature_dim = 0;
  std::size_t num_identities = 0;

  std::size_t node_index(const std::string& name) const {
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i].name == name) return i;
    throw Error("network: no layer named '" + name + "'");
  }

  const Tensor& param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end())
      throw Error("network: missing parameter '" + name + "'");
    return it->second;
  }
  Tensor& param(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end())
      throw Error("network: missing parameter '" + name + "'");
    return it->second;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params) n += t.size();
    return n;
  }

  std::size_t weight_layer_count() const {
    std::size_t n = 0;
    for (const auto& node : nodes) n += node.has_weights() ? 1 : 0;
    return n;
  }

  InceptionParams gather_inception(const LayerNode& n) const {
    InceptionParams p;
    p.w_b1 = param(n.name + ".b1.w");
    p.b_b1 = param(n.name + ".b1.b");
    p.w_b3r = param(n.name + ".b3r.w");
    p.b_b3r = param(n.name + ".b3r.b");
    p.w_b3 = param(n.name + ".b3.w");
    p.b_b3 = param(n.name + ".b3.b");
    p.w_b5r = param(n.name + ".b5r.w");
    p.b_b5r = param(n.name + ".b5r.b");
    p.w_b5 = param(n.name + ".b5.w");
    p.b_b5 = param(n.name + ".b5.b");
    p.w_pp = param(n.name + ".pp.w");
    p.b_pp = param(n.name + ".pp.b");
    return p;
  }

  // Runs the chain up to and including `upto` (default: whole chain).
  ForwardTrace forward(const Tensor& image, Mode mode, Rng* rng = nullptr,
                       std::size_t upto = static_cast<std::size_t>(-1)) const {
    const Shape expect{input_channels, input_h, input_w};
    if (image.shape() != expect)
      throw ShapeError("network forward: image shape " + image.shape_string() +
                       " does not match input geometry " +
                       shape_to_string(expect));
    const std::size_t last =
        upto == static_cast<std::size_t>(-1) ? nodes.size() - 1 : upto;

    ForwardTrace t;
    t.act.reserve(last + 2);
    t.act.push_back(image);
    t.pre_act.resize(last + 1);
    t.pool_argmax.resize(last + 1);
    t.dropout_mask.resize(last + 1);
    t.inception.resize(last + 1);

    for (std::size_t i = 0; i <= last; ++i) {
      const LayerNode& n = nodes[i];
      const Tensor& x = t.act.back();
      switch (n.kind) {
        case LayerKind::kConv: {
          Tensor z = conv2d_forward(x, n.conv, param(n.name + ".w"),
                                    param(n.name + ".b"));
          t.pre_act[i] = z;
          t.act.push_back(n.relu ? relu(z) : std::move(z));
          break;
        }
        case LayerKind::kLocallyConnected: {
          Tensor z = locally_connected_forward(x, n.local, param(n.name + ".w"),
                                               param(n.name + ".b"));
          t.pre_act[i] = z;
          t.act.push_back(n.relu ? relu(z) : std::move(z));
          break;
        }
        case LayerKind::kFullyConnected: {
          Tensor z = fully_connected(x.flattened(), param(n.name + ".w"),
                                     param(n.name + ".b"));
          t.pre_act[i] = z;
          t.act.push_back(n.relu ? relu(z) : std::move(z));
          break;
        }
        case LayerKind::kMaxPool: {
          auto r = maxpool2d(x, n.pool_window, n.pool_stride);
          t.pool_argmax[i] = std::move(r.argmax);
          t.act.push_back(std::move(r.output));
          break;
        }
        case LayerKind::kInception: {
          auto tr = inception_forward_traced(x, n.inception,
                                             gather_inception(n));
          t.act.push_back(tr.out);
          t.inception[i] = std::move(tr);
          break;
        }
        case LayerKind::kDropout: {
          if (mode == Mode::kTrain && n.dropout_rate > 0.0) {
            if (!rng)
              throw Error("network forward: dropout in train mode needs an Rng");
            auto r = dropout(x, n.dropout_rate, *rng, Mode::kTrain);
            t.dropout_mask[i] = std::move(r.mask);
            t.act.push_back(std::move(r.output));
          } else {
            t.act.push_back(x);
          }
          break;
        }
      }
    }
    return t;
  }

  // Backward over the whole traced chain. grad_at[i] holds dLoss/d(act[i]);
  // entries may be empty tensors when no head touched that activation.
  // Returns parameter-name -> gradient for every chain parameter that
  // received a contribution.
  void backward(const ForwardTrace& t, std::vector<Tensor>& grad_at,
                ParamStore& grads) const {
    const std::size_t n_run = t.act.size() - 1;
    auto add_into = [](Tensor& dst, const Tensor& src) {
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    };
    auto accumulate = [&grads, &add_into](const std::string& name,
                                          const Tensor& g) {
      auto it = grads.find(name);
      if (it == grads.end())
        grads.emplace(name, g);
      else
        add_into(it->second, g);
    };

    for (std::size_t ii = n_run; ii-- > 0;) {
      const std::size_t i = ii;  // node index
      const LayerNode& n = nodes[i];
      Tensor& gout = grad_at[i + 1];
      if (gout.size() == 0) continue;  // nothing flowed into this activation

      Tensor gz = gout;
      if (n.relu && n.has_weights()) gz = relu_backward(t.pre_act[i], gout);

      Tensor ginput;
      switch (n.kind) {
        case LayerKind::kConv: {
          auto g = conv2d_backward(t.act[i], n.conv, param(n.name + ".w"), gz);
          accumulate(n.name + ".w", g.weights);
          accumulate(n.name + ".b", g.bias);
          ginput = std::move(g.input);
          break;
        }
        case LayerKind::kLocallyConnected: {
          auto g = locally_connected_backward(t.act[i], n.local,
                                              param(n.name + ".w"), gz);
          accumulate(n.name + ".w", g.weights);
          accumulate(n.name + ".b", g.bias);
          ginput = std::move(g.input);
          break;
        }
        case LayerKind::kFullyConnected: {
          auto g = fully_connected_backward(t.act[i].flattened(),
                                            param(n.name + ".w"), gz);
          accumulate(n.name + ".w", g.weights);
          accumulate(n.name + ".b", g.bias);
          ginput = g.input.reshaped(t.act[i].shape());
          break;
        }
        case LayerKind::kMaxPool: {
          ginput = maxpool2d_backward(t.act[i].shape(), t.pool_argmax[i], gz);
          break;
        }
        case LayerKind::kInception: {
          auto g = inception_backward(*t.inception[i], n.inception,
                                      gather_inception(n), gz);
          const auto suffixes = inception_param_suffixes();
          const Tensor* gs[] = {&g.params.w_b1,  &g.params.b_b1,
                                &g.params.w_b3r, &g.params.b_b3r,
                                &g.params.w_b3,  &g.params.b_b3,
                                &g.params.w_b5r, &g.params.b_b5r,
                                &g.params.w_b5,  &g.params.b_b5,
                                &g.params.w_pp,  &g.params.b_pp};
          for (std::size_t s = 0; s < suffixes.size(); ++s)
            accumulate(n.name + "." + suffixes[s], *gs[s]);
          ginput = std::move(g.input);
          break;
        }
        case LayerKind::kDropout: {
          if (t.dropout_mask[i].size() > 0)
            ginput = dropout_backward(t.dropout_mask[i], gz);
          else
            ginput = gz;
          break;
        }
      }
      Tensor& gin_slot = grad_at[i];
      if (gin_slot.size() == 0)
        gin_slot = std::move(ginput);
      else
        add_into(gin_slot, ginput);
    }
  }
};

// Eval-mode forward pass; returns the flattened activation at the
// designated final feature layer.
inline Tensor extract_feature(const NetworkGraph& net, const Tensor& image) {
  const std::size_t idx = net.node_index(net.final_feature_layer);
  ForwardTrace t = net.forward(image, Mode::kEval, nullptr, idx);
  return t.act.back().flattened();
}

}  // namespace did3
