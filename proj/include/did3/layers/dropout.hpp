#pragma once

#include "did3/rng.hpp"
#include "did3/tensor.hpp"

namespace did3 {

enum class Mode { kTrain, kEval };

struct DropoutResult {
  Tensor output;
  // Per-unit multiplier (0 or 1/(1-rate)); identity mask in eval mode.
  Tensor mask;
};

// Inverted dropout: survivors are scaled by 1/(1-rate) at train time so
// evaluation is the plain identity map.
inline DropoutResult dropout(const Tensor& input, double rate, Rng& rng,
                             Mode mode) {
  if (rate < 0.0 || rate >= 1.0)
    throw Error("dropout: rate must be in [0,1), got " + std::to_string(rate));
  DropoutResult r{input, Tensor::full(input.shape(), 1.0)};
  if (mode == Mode::kEval || rate == 0.0) return r;
  const double scale = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < input.size(); ++i) {
    if (rng.uniform() < rate) {
      r.mask[i] = 0.0;
      r.output[i] = 0.0;
    } else {
      r.mask[i] = scale;
      r.output[i] = input[i] * scale;
    }
  }
  return r;
}

inline Tensor dropout_backward(const Tensor& mask, const Tensor& grad_out) {
  require_same_shape(mask, grad_out, "dropout_backward");
  Tensor grad_in(mask.shape());
  for (std::size_t i = 0; i < mask.size(); ++i)
    grad_in[i] = mask[i] * grad_out[i];
  return grad_in;
}

}  // namespace did3
