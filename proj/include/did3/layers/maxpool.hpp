#pragma once

#include <limits>
#include <vector>

#include "did3/tensor.hpp"

namespace did3 {

struct MaxPoolResult {
  Tensor output;
  // Flat index into the input tensor of each window's maximum, in output
  // scan order. Ties break to the lowest flat index.
  std::vector<std::size_t> argmax;
};

// Per-channel max pooling. With pad > 0, windows are clipped to the valid
// region rather than comparing against padded values.
inline MaxPoolResult maxpool2d(const Tensor& input, std::size_t window,
                               std::size_t stride, std::size_t pad = 0) {
  if (input.rank() != 3)
    throw ShapeError("maxpool2d: input must be [C,H,W], got " +
                     input.shape_string());
  if (window == 0 || stride == 0)
    throw ShapeError("maxpool2d: window and stride must be positive");
  const std::size_t c = input.extent(0), h = input.extent(1),
                    w = input.extent(2);
  if (window > h + 2 * pad || window > w + 2 * pad)
    throw ShapeError("maxpool2d: window " + std::to_string(window) +
                     " exceeds input extent " + input.shape_string());
  const std::size_t oh = (h + 2 * pad - window) / stride + 1;
  const std::size_t ow = (w + 2 * pad - window) / stride + 1;

  MaxPoolResult r{Tensor({c, oh, ow}), {}};
  r.argmax.resize(c * oh * ow);

  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const long y0 = static_cast<long>(oy * stride) - static_cast<long>(pad);
        const long x0 = static_cast<long>(ox * stride) - static_cast<long>(pad);
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = 0;
        bool seen = false;
        for (std::size_t ky = 0; ky < window; ++ky) {
          const long iy = y0 + static_cast<long>(ky);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t kx = 0; kx < window; ++kx) {
            const long ix = x0 + static_cast<long>(kx);
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            const std::size_t flat =
                (ch * h + static_cast<std::size_t>(iy)) * w +
                static_cast<std::size_t>(ix);
            const double v = input[flat];
            if (!seen || v > best) {
              best = v;
              best_idx = flat;
              seen = true;
            }
          }
        }
        if (!seen)
          throw ShapeError("maxpool2d: empty window (pad too large)");
        r.output(ch, oy, ox) = best;
        r.argmax[(ch * oh + oy) * ow + ox] = best_idx;
      }
    }
  }
  return r;
}

// Routes exactly one gradient unit per window to the stored argmax.
inline Tensor maxpool2d_backward(const Shape& input_shape,
                                 const std::vector<std::size_t>& argmax,
                                 const Tensor& grad_out) {
  if (grad_out.size() != argmax.size())
    throw ShapeError("maxpool2d_backward: grad_out size " +
                     std::to_string(grad_out.size()) +
                     " does not match argmax count " +
                     std::to_string(argmax.size()));
  Tensor grad_in(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i)
    grad_in[argmax[i]] += grad_out[i];
  return grad_in;
}

}  // namespace did3
