#pragma once

#include <cmath>
#include <string>

#include "did3/layers/dense.hpp"
#include "did3/tensor.hpp"

namespace did3 {

struct SoftmaxResult {
  double loss = 0.0;
  Tensor grad_logits;
};

// Identification signal: -log softmax(logits)[label], max-subtracted for
// stability. Gradient is softmax(logits) - one_hot(label).
inline SoftmaxResult softmax_cross_entropy(const Tensor& logits,
                                           std::size_t label) {
  const std::size_t k = logits.size();
  if (k < 2) throw ShapeError("softmax_cross_entropy: need K >= 2 classes");
  if (label >= k)
    throw Error("softmax_cross_entropy: label " + std::to_string(label) +
                " out of range [0," + std::to_string(k) + ")");
  double m = logits[0];
  for (std::size_t i = 1; i < k; ++i) m = std::max(m, logits[i]);
  double sum = 0.0;
  SoftmaxResult r{0.0, Tensor({k})};
  for (std::size_t i = 0; i < k; ++i) {
    r.grad_logits[i] = std::exp(logits[i] - m);
    sum += r.grad_logits[i];
  }
  r.loss = -(logits[label] - m - std::log(sum));
  for (std::size_t i = 0; i < k; ++i) r.grad_logits[i] /= sum;
  r.grad_logits[label] -= 1.0;
  return r;
}

struct VerificationResult {
  double loss = 0.0;
  Tensor grad_f1;
  Tensor grad_f2;
};

// Verification signal on a feature pair: genuine pairs are pulled together
// with 0.5*||f1-f2||^2, impostor pairs pushed past the margin with
// 0.5*max(0, m - ||f1-f2||)^2. For an impostor pair at distance exactly 0
// the direction is undefined and the subgradient 0 is used.
inline VerificationResult verification_loss(const Tensor& f1, const Tensor& f2,
                                            bool same, double margin) {
  require_same_shape(f1, f2, "verification_loss");
  if (!(margin > 0.0))
    throw Error("verification_loss: margin must be positive");
  const std::size_t d = f1.size();
  VerificationResult r{0.0, Tensor(f1.shape()), Tensor(f2.shape())};
  if (same) {
    double sq = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double diff = f1[i] - f2[i];
      sq += diff * diff;
      r.grad_f1[i] = diff;
      r.grad_f2[i] = -diff;
    }
    r.loss = 0.5 * sq;
    return r;
  }
  const double dist = distance(f1, f2);
  if (dist >= margin || dist == 0.0) return r;  // grads stay zero
  const double gap = margin - dist;
  r.loss = 0.5 * gap * gap;
  const double coeff = -gap / dist;
  for (std::size_t i = 0; i < d; ++i) {
    const double diff = f1[i] - f2[i];
    r.grad_f1[i] = coeff * diff;
    r.grad_f2[i] = -coeff * diff;
  }
  return r;
}

// A branch supervision head: a linear projection of the attached activation
// to a d-dim feature, a softmax identification layer over K identities, and
// the pairwise verification loss on the projected features.
//
//   loss = CE(pair a) + CE(pair b) + lambda * verification
struct SupervisionHead {
  std::string attach_point;
  std::size_t input_dim = 0;   // flattened activation size at attach_point
  std::size_t feature_dim = 0;
  std::size_t num_identities = 0;
  double margin = 1.0;
  double lambda = 0.0;

  // parameter names inside the owning graph's store
  std::string proj_w_name, proj_b_name, softmax_w_name;
};

struct HeadGrads {
  double loss = 0.0;
  double id_loss = 0.0;
  double ver_loss = 0.0;
  Tensor proj_w, proj_b, softmax_w;
  Tensor act1, act2;
};

inline HeadGrads head_loss(const SupervisionHead& head, const Tensor& proj_w,
                           const Tensor& proj_b, const Tensor& softmax_w,
                           const Tensor& act1, const Tensor& act2,
                           std::size_t id1, std::size_t id2) {
  if (act1.size() != head.input_dim || act2.size() != head.input_dim)
    throw ShapeError("head_loss[" + head.attach_point + "]: activation size " +
                     std::to_string(act1.size()) + "/" +
                     std::to_string(act2.size()) + " does not match head input " +
                     std::to_string(head.input_dim));
  const Tensor a1 = act1.flattened();
  const Tensor a2 = act2.flattened();
  const Tensor f1 = fully_connected(a1, proj_w, proj_b);
  const Tensor f2 = fully_connected(a2, proj_w, proj_b);

  const Tensor zero_bias({head.num_identities});
  const Tensor logits1 = fully_connected(f1, softmax_w, zero_bias);
  const Tensor logits2 = fully_connected(f2, softmax_w, zero_bias);

  const SoftmaxResult ce1 = softmax_cross_entropy(logits1, id1);
  const SoftmaxResult ce2 = softmax_cross_entropy(logits2, id2);
  const VerificationResult ver =
      verification_loss(f1, f2, id1 == id2, head.margin);

  HeadGrads g;
  g.id_loss = ce1.loss + ce2.loss;
  g.ver_loss = ver.loss;
  g.loss = g.id_loss + head.lambda * ver.loss;

  const DenseGrads s1 = fully_connected_backward(f1, softmax_w, ce1.grad_logits);
  const DenseGrads s2 = fully_connected_backward(f2, softmax_w, ce2.grad_logits);
  g.softmax_w = s1.weights;
  for (std::size_t i = 0; i < g.softmax_w.size(); ++i)
    g.softmax_w[i] += s2.weights[i];

  Tensor gf1 = s1.input;
  Tensor gf2 = s2.input;
  for (std::size_t i = 0; i < gf1.size(); ++i) {
    gf1[i] += head.lambda * ver.grad_f1[i];
    gf2[i] += head.lambda * ver.grad_f2[i];
  }

  const DenseGrads p1 = fully_connected_backward(a1, proj_w, gf1);
  const DenseGrads p2 = fully_connected_backward(a2, proj_w, gf2);
  g.proj_w = p1.weights;
  g.proj_b = p1.bias;
  for (std::size_t i = 0; i < g.proj_w.size(); ++i)
    g.proj_w[i] += p2.weights[i];
  for (std::size_t i = 0; i < g.proj_b.size(); ++i) g.proj_b[i] += p2.bias[i];
  g.act1 = p1.input.reshaped(act1.shape());
  g.act2 = p2.input.reshaped(act2.shape());
  return g;
}

}  // namespace did3
