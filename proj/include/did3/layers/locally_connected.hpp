#pragma once

#include "did3/layers/conv2d.hpp"
#include "did3/tensor.hpp"

namespace did3 {

// Convolution geometry with an independent weight bank (and bias) per output
// spatial location: same receptive fields as ConvSpec, unshared parameters.
struct LocalSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t in_h = 1;
  std::size_t in_w = 1;

  ConvSpec as_conv() const {
    return ConvSpec{in_channels, out_channels, kernel_h, kernel_w, stride, pad};
  }

  std::size_t out_h() const { return as_conv().out_h(in_h); }
  std::size_t out_w() const { return as_conv().out_w(in_w); }

  // weights: one [C',C,kh,kw] kernel per output location
  Shape weight_shape() const {
    return {out_h(), out_w(), out_channels, in_channels, kernel_h, kernel_w};
  }
  Shape bias_shape() const { return {out_h(), out_w(), out_channels}; }

  std::size_t param_count() const {
    return out_h() * out_w() * out_channels *
           (in_channels * kernel_h * kernel_w + 1);
  }

  std::size_t fan_in() const { return in_channels * kernel_h * kernel_w; }
};

namespace detail {

inline void check_local_args(const Tensor& input, const LocalSpec& spec,
                             const Tensor& weights, const Tensor& bias) {
  const Shape expect_in{spec.in_channels, spec.in_h, spec.in_w};
  if (input.shape() != expect_in)
    throw ShapeError("locally_connected: input shape " + input.shape_string() +
                     " does not match spec " + shape_to_string(expect_in));
  if (weights.shape() != spec.weight_shape())
    throw ShapeError("locally_connected: weight shape " +
                     weights.shape_string() + " does not match spec " +
                     shape_to_string(spec.weight_shape()));
  if (bias.shape() != spec.bias_shape())
    throw ShapeError("locally_connected: bias shape " + bias.shape_string() +
                     " does not match spec " +
                     shape_to_string(spec.bias_shape()));
}

}  // namespace detail

inline Tensor locally_connected_forward(const Tensor& input,
                                        const LocalSpec& spec,
                                        const Tensor& weights,
                                        const Tensor& bias) {
  detail::check_local_args(input, spec, weights, bias);
  const std::size_t oh = spec.out_h(), ow = spec.out_w();
  const std::size_t ksz = spec.in_channels * spec.kernel_h * spec.kernel_w;
  Tensor out({spec.out_channels, oh, ow});

  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const long y0 = static_cast<long>(oy * spec.stride) -
                      static_cast<long>(spec.pad);
      const long x0 = static_cast<long>(ox * spec.stride) -
                      static_cast<long>(spec.pad);
      for (std::size_t oc = 0; oc < spec.out_channels; ++oc) {
        const double* bank =
            weights.data() + (((oy * ow + ox) * spec.out_channels + oc) * ksz);
        double acc = bias[(oy * ow + ox) * spec.out_channels + oc];
        for (std::size_t ic = 0; ic < spec.in_channels; ++ic) {
          for (std::size_t ky = 0; ky < spec.kernel_h; ++ky) {
            const long iy = y0 + static_cast<long>(ky);
            if (iy < 0 || iy >= static_cast<long>(spec.in_h)) continue;
            for (std::size_t kx = 0; kx < spec.kernel_w; ++kx) {
              const long ix = x0 + static_cast<long>(kx);
              if (ix < 0 || ix >= static_cast<long>(spec.in_w)) continue;
              acc += bank[(ic * spec.kernel_h + ky) * spec.kernel_w + kx] *
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

struct LocalGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

inline LocalGrads locally_connected_backward(const Tensor& input,
                                             const LocalSpec& spec,
                                             const Tensor& weights,
                                             const Tensor& grad_out) {
  const std::size_t oh = spec.out_h(), ow = spec.out_w();
  const Shape expect_out{spec.out_channels, oh, ow};
  if (grad_out.shape() != expect_out)
    throw ShapeError("locally_connected_backward: grad_out shape " +
                     grad_out.shape_string() + " does not match output " +
                     shape_to_string(expect_out));
  const Shape expect_in{spec.in_channels, spec.in_h, spec.in_w};
  if (input.shape() != expect_in)
    throw ShapeError("locally_connected_backward: input shape " +
                     input.shape_string() + " does not match spec " +
                     shape_to_string(expect_in));
  const std::size_t ksz = spec.in_channels * spec.kernel_h * spec.kernel_w;

  LocalGrads g{Tensor(input.shape()), Tensor(spec.weight_shape()),
               Tensor(spec.bias_shape())};

  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const long y0 = static_cast<long>(oy * spec.stride) -
                      static_cast<long>(spec.pad);
      const long x0 = static_cast<long>(ox * spec.stride) -
                      static_cast<long>(spec.pad);
      for (std::size_t oc = 0; oc < spec.out_channels; ++oc) {
        const double go = grad_out(oc, oy, ox);
        const std::size_t bank_off =
            ((oy * ow + ox) * spec.out_channels + oc) * ksz;
        const double* bank = weights.data() + bank_off;
        double* gbank = g.weights.data() + bank_off;
        g.bias[(oy * ow + ox) * spec.out_channels + oc] += go;
        for (std::size_t ic = 0; ic < spec.in_channels; ++ic) {
          for (std::size_t ky = 0; ky < spec.kernel_h; ++ky) {
            const long iy = y0 + static_cast<long>(ky);
            if (iy < 0 || iy >= static_cast<long>(spec.in_h)) continue;
            for (std::size_t kx = 0; kx < spec.kernel_w; ++kx) {
              const long ix = x0 + static_cast<long>(kx);
              if (ix < 0 || ix >= static_cast<long>(spec.in_w)) continue;
              const std::size_t kidx =
                  (ic * spec.kernel_h + ky) * spec.kernel_w + kx;
              gbank[kidx] += go * input(ic, static_cast<std::size_t>(iy),
                                        static_cast<std::size_t>(ix));
              g.input(ic, static_cast<std::size_t>(iy),
                      static_cast<std::size_t>(ix)) += go * bank[kidx];
            }
          }
        }
      }
    }
  }
  return g;
}

// Builds the bank that makes a locally-connected layer compute exactly the
// same map as conv2d with the given kernel; used by the equivalence tests.
inline Tensor tie_conv_weights(const LocalSpec& spec, const Tensor& conv_w) {
  if (conv_w.shape() != spec.as_conv().weight_shape())
    throw ShapeError("tie_conv_weights: kernel shape " + conv_w.shape_string() +
                     " does not match spec");
  Tensor bank(spec.weight_shape());
  const std::size_t ksz =
      spec.out_channels * spec.in_channels * spec.kernel_h * spec.kernel_w;
  const std::size_t locations = spec.out_h() * spec.out_w();
  for (std::size_t loc = 0; loc < locations; ++loc)
    for (std::size_t i = 0; i < ksz; ++i) bank[loc * ksz + i] = conv_w[i];
  return bank;
}

inline Tensor tie_conv_bias(const LocalSpec& spec, const Tensor& conv_b) {
  if (conv_b.size() != spec.out_channels)
    throw ShapeError("tie_conv_bias: bias size mismatch");
  Tensor bank(spec.bias_shape());
  const std::size_t locations = spec.out_h() * spec.out_w();
  for (std::size_t loc = 0; loc < locations; ++loc)
    for (std::size_t oc = 0; oc < spec.out_channels; ++oc)
      bank[loc * spec.out_channels + oc] = conv_b[oc];
  return bank;
}

}  // namespace did3
