#pragma once

#include "did3/tensor.hpp"

namespace did3 {

// Affine map weights[out,in] * input + bias. Input of any rank is treated as
// flattened.
inline Tensor fully_connected(const Tensor& input, const Tensor& weights,
                              const Tensor& bias) {
  if (weights.rank() != 2)
    throw ShapeError("fully_connected: weights must be [out,in], got " +
                     weights.shape_string());
  const std::size_t out_dim = weights.extent(0), in_dim = weights.extent(1);
  if (input.size() != in_dim)
    throw ShapeError("fully_connected: input size " +
                     std::to_string(input.size()) + " does not match weights " +
                     weights.shape_string());
  if (bias.size() != out_dim)
    throw ShapeError("fully_connected: bias size " +
                     std::to_string(bias.size()) + " does not match weights " +
                     weights.shape_string());
  Tensor out({out_dim});
  for (std::size_t o = 0; o < out_dim; ++o) {
    double acc = bias[o];
    const double* wrow = weights.data() + o * in_dim;
    for (std::size_t i = 0; i < in_dim; ++i) acc += wrow[i] * input[i];
    out[o] = acc;
  }
  return out;
}

struct DenseGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

inline DenseGrads fully_connected_backward(const Tensor& input,
                                           const Tensor& weights,
                                           const Tensor& grad_out) {
  const std::size_t out_dim = weights.extent(0), in_dim = weights.extent(1);
  if (grad_out.size() != out_dim)
    throw ShapeError("fully_connected_backward: grad_out size " +
                     std::to_string(grad_out.size()) +
                     " does not match weights " + weights.shape_string());
  if (input.size() != in_dim)
    throw ShapeError("fully_connected_backward: input size " +
                     std::to_string(input.size()) + " does not match weights " +
                     weights.shape_string());
  DenseGrads g{Tensor(input.shape()), Tensor(weights.shape()),
               Tensor({out_dim})};
  for (std::size_t o = 0; o < out_dim; ++o) {
    const double go = grad_out[o];
    g.bias[o] = go;
    const double* wrow = weights.data() + o * in_dim;
    double* gwrow = g.weights.data() + o * in_dim;
    for (std::size_t i = 0; i < in_dim; ++i) {
      gwrow[i] = go * input[i];
      g.input[i] += go * wrow[i];
    }
  }
  return g;
}

}  // namespace did3
