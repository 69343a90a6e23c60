#pragma once

#include "did3/tensor.hpp"

namespace did3 {

inline Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (out[i] < 0.0) out[i] = 0.0;
  return out;
}

// Subgradient at exactly 0 is 0.
inline Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
  require_same_shape(input, grad_out, "relu_backward");
  Tensor grad_in(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i)
    grad_in[i] = input[i] > 0.0 ? grad_out[i] : 0.0;
  return grad_in;
}

}  // namespace did3
