#pragma once

#include <string>
#include <tuple>

#include "did3/tensor.hpp"

namespace did3 {

// Geometry of a shared-weight convolution. "Convolution" here means
// cross-correlation (no kernel flip), the usual deep-learning convention.
struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t out_h(std::size_t in_h) const {
    if (in_h + 2 * pad < kernel_h)
      throw ShapeError("conv: kernel_h " + std::to_string(kernel_h) +
                       " exceeds padded input height " +
                       std::to_string(in_h + 2 * pad));
    return (in_h + 2 * pad - kernel_h) / stride + 1;
  }
  std::size_t out_w(std::size_t in_w) const {
    if (in_w + 2 * pad < kernel_w)
      throw ShapeError("conv: kernel_w " + std::to_string(kernel_w) +
                       " exceeds padded input width " +
                       std::to_string(in_w + 2 * pad));
    return (in_w + 2 * pad - kernel_w) / stride + 1;
  }

  Shape weight_shape() const {
    return {out_channels, in_channels, kernel_h, kernel_w};
  }
  Shape bias_shape() const { return {out_channels}; }

  std::size_t fan_in() const { return in_channels * kernel_h * kernel_w; }
};

namespace detail {

inline void check_conv_args(const Tensor& input, const ConvSpec& spec,
                            const Tensor& weights, const Tensor& bias) {
  if (input.rank() != 3)
    throw ShapeError("conv2d: input must be [C,H,W], got " +
                     input.shape_string());
  if (input.extent(0) != spec.in_channels)
    throw ShapeError("conv2d: input channels " +
                     std::to_string(input.extent(0)) + " do not match spec " +
                     std::to_string(spec.in_channels));
  if (weights.shape() != spec.weight_shape())
    throw ShapeError("conv2d: weight shape " + weights.shape_string() +
                     " does not match spec " +
                     shape_to_string(spec.weight_shape()));
  if (bias.shape() != spec.bias_shape())
    throw ShapeError("conv2d: bias shape " + bias.shape_string() +
                     " does not match spec " +
                     shape_to_string(spec.bias_shape()));
}

}  // namespace detail

inline Tensor conv2d_forward(const Tensor& input, const ConvSpec& spec,
                             const Tensor& weights, const Tensor& bias) {
  detail::check_conv_args(input, spec, weights, bias);
  const std::size_t in_h = input.extent(1), in_w = input.extent(2);
  const std::size_t oh = spec.out_h(in_h), ow = spec.out_w(in_w);
  Tensor out({spec.out_channels, oh, ow});

  for (std::size_t oc = 0; oc < spec.out_channels; ++oc) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double acc = bias[oc];
        // window origin in unpadded input coordinates (may be negative)
        const long y0 = static_cast<long>(oy * spec.stride) -
                        static_cast<long>(spec.pad);
        const long x0 = static_cast<long>(ox * spec.stride) -
                        static_cast<long>(spec.pad);
        for (std::size_t ic = 0; ic < spec.in_channels; ++ic) {
          for (std::size_t ky = 0; ky < spec.kernel_h; ++ky) {
            const long iy = y0 + static_cast<long>(ky);
            if (iy < 0 || iy >= static_cast<long>(in_h)) continue;
            for (std::size_t kx = 0; kx < spec.kernel_w; ++kx) {
              const long ix = x0 + static_cast<long>(kx);
              if (ix < 0 || ix >= static_cast<long>(in_w)) continue;
              acc += weights[((oc * spec.in_channels + ic) * spec.kernel_h + ky) *
                                 spec.kernel_w +
                             kx] *
                     input(ic, static_cast<std::size_t>(iy),
                           static_cast<std::size_t>(ix));
            }
          }
        }
        out(oc, oy, ox) = acc;
      }
    }
  }
  return out;
}

struct ConvGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

inline ConvGrads conv2d_backward(const Tensor& input, const ConvSpec& spec,
                                 const Tensor& weights, const Tensor& grad_out) {
  if (input.rank() != 3)
    throw ShapeError("conv2d_backward: input must be [C,H,W], got " +
                     input.shape_string());
  if (weights.shape() != spec.weight_shape())
    throw ShapeError("conv2d_backward: weight shape " + weights.shape_string() +
                     " does not match spec " +
                     shape_to_string(spec.weight_shape()));
  const std::size_t in_h = input.extent(1), in_w = input.extent(2);
  const std::size_t oh = spec.out_h(in_h), ow = spec.out_w(in_w);
  const Shape expect_out{spec.out_channels, oh, ow};
  if (grad_out.shape() != expect_out)
    throw ShapeError("conv2d_backward: grad_out shape " +
                     grad_out.shape_string() + " does not match forward output " +
                     shape_to_string(expect_out));

  ConvGrads g{Tensor(input.shape()), Tensor(weights.shape()),
              Tensor(spec.bias_shape())};

  for (std::size_t oc = 0; oc < spec.out_channels; ++oc) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const double go = grad_out(oc, oy, ox);
        g.bias[oc] += go;
        const long y0 = static_cast<long>(oy * spec.stride) -
                        static_cast<long>(spec.pad);
        const long x0 = static_cast<long>(ox * spec.stride) -
                        static_cast<long>(spec.pad);
        for (std::size_t ic = 0; ic < spec.in_channels; ++ic) {
          for (std::size_t ky = 0; ky < spec.kernel_h; ++ky) {
            const long iy = y0 + static_cast<long>(ky);
            if (iy < 0 || iy >= static_cast<long>(in_h)) continue;
            for (std::size_t kx = 0; kx < spec.kernel_w; ++kx) {
              const long ix = x0 + static_cast<long>(kx);
              if (ix < 0 || ix >= static_cast<long>(in_w)) continue;
              const std::size_t widx =
                  ((oc * spec.in_channels + ic) * spec.kernel_h + ky) *
                      spec.kernel_w +
                  kx;
              g.weights[widx] += go * input(ic, static_cast<std::size_t>(iy),
                                            static_cast<std::size_t>(ix));
              g.input(ic, static_cast<std::size_t>(iy),
                      static_cast<std::size_t>(ix)) += go * weights[widx];
            }
          }
        }
      }
    }
  }
  return g;
}

}  // namespace did3
