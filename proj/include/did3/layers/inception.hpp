#pragma once

#include <string>
#include <vector>

#include "did3/layers/conv2d.hpp"
#include "did3/layers/maxpool.hpp"
#include "did3/layers/relu.hpp"
#include "did3/rng.hpp"
#include "did3/tensor.hpp"

namespace did3 {

// Four parallel branches concatenated along channels, all same-padded with
// stride 1 so spatial extent is preserved:
//   1x1  |  1x1 -> 3x3  |  1x1 -> 5x5  |  3x3 maxpool -> 1x1
// Every convolution is ReLU-activated.
struct InceptionSpec {
  std::size_t in_channels = 1;
  std::size_t b1 = 1;         // 1x1 branch output channels
  std::size_t b3_reduce = 1;  // 1x1 before the 3x3
  std::size_t b3 = 1;
  std::size_t b5_reduce = 1;  // 1x1 before the 5x5
  std::size_t b5 = 1;
  std::size_t pool_proj = 1;  // 1x1 after the 3x3 maxpool

  std::size_t out_channels() const { return b1 + b3 + b5 + pool_proj; }

  // Splits a channel budget across the four branches; remainder goes to the
  // 3x3 branch.
  static InceptionSpec balanced(std::size_t in_channels,
                                std::size_t out_channels) {
    if (out_channels < 4)
      throw ShapeError("inception: out_channels must be >= 4, got " +
                       std::to_string(out_channels));
    InceptionSpec s;
    s.in_channels = in_channels;
    s.b1 = std::max<std::size_t>(1, out_channels / 4);
    s.b5 = std::max<std::size_t>(1, out_channels / 8);
    s.pool_proj = std::max<std::size_t>(1, out_channels / 8);
    s.b3 = out_channels - s.b1 - s.b5 - s.pool_proj;
    s.b3_reduce = std::max<std::size_t>(1, out_channels / 4);
    s.b5_reduce = std::max<std::size_t>(1, out_channels / 8);
    return s;
  }

  ConvSpec conv_b1() const { return {in_channels, b1, 1, 1, 1, 0}; }
  ConvSpec conv_b3_reduce() const { return {in_channels, b3_reduce, 1, 1, 1, 0}; }
  ConvSpec conv_b3() const { return {b3_reduce, b3, 3, 3, 1, 1}; }
  ConvSpec conv_b5_reduce() const { return {in_channels, b5_reduce, 1, 1, 1, 0}; }
  ConvSpec conv_b5() const { return {b5_reduce, b5, 5, 5, 1, 2}; }
  ConvSpec conv_pool_proj() const { return {in_channels, pool_proj, 1, 1, 1, 0}; }
};

// The six convolutions of one block, in a fixed serialization order.
struct InceptionParams {
  Tensor w_b1, b_b1;
  Tensor w_b3r, b_b3r;
  Tensor w_b3, b_b3;
  Tensor w_b5r, b_b5r;
  Tensor w_b5, b_b5;
  Tensor w_pp, b_pp;

  static InceptionParams init(const InceptionSpec& spec, Rng& rng) {
    InceptionParams p;
    auto make = [&rng](const ConvSpec& c, Tensor& w, Tensor& b) {
      w = init_he(c.weight_shape(), c.fan_in(), rng);
      b = Tensor(c.bias_shape());
    };
    make(spec.conv_b1(), p.w_b1, p.b_b1);
    make(spec.conv_b3_reduce(), p.w_b3r, p.b_b3r);
    make(spec.conv_b3(), p.w_b3, p.b_b3);
    make(spec.conv_b5_reduce(), p.w_b5r, p.b_b5r);
    make(spec.conv_b5(), p.w_b5, p.b_b5);
    make(spec.conv_pool_proj(), p.w_pp, p.b_pp);
    return p;
  }
};

// Everything the backward pass needs from one forward evaluation.
struct InceptionTrace {
  Tensor in;
  Tensor z_b1;                      // pre-relu branch outputs
  Tensor z_b3r, a_b3r, z_b3;        // a_* = post-relu
  Tensor z_b5r, a_b5r, z_b5;
  Tensor pooled, z_pp;
  std::vector<std::size_t> pool_argmax;
  Tensor out;
};

namespace detail {

inline Tensor branch_conv(const Tensor& x, const ConvSpec& spec,
                          const Tensor& w, const Tensor& b, const char* branch) {
  try {
    return conv2d_forward(x, spec, w, b);
  } catch (const ShapeError& e) {
    throw ShapeError("inception branch " + std::string(branch) + ": " +
                     e.what());
  }
}

}  // namespace detail

inline InceptionTrace inception_forward_traced(const Tensor& input,
                                               const InceptionSpec& spec,
                                               const InceptionParams& p) {
  if (input.rank() != 3 || input.extent(0) != spec.in_channels)
    throw ShapeError("inception: input shape " + input.shape_string() +
                     " does not match spec in_channels " +
                     std::to_string(spec.in_channels));
  InceptionTrace t;
  t.in = input;

  t.z_b1 = detail::branch_conv(input, spec.conv_b1(), p.w_b1, p.b_b1, "1x1");

  t.z_b3r = detail::branch_conv(input, spec.conv_b3_reduce(), p.w_b3r, p.b_b3r,
                                "3x3-reduce");
  t.a_b3r = relu(t.z_b3r);
  t.z_b3 = detail::branch_conv(t.a_b3r, spec.conv_b3(), p.w_b3, p.b_b3, "3x3");

  t.z_b5r = detail::branch_conv(input, spec.conv_b5_reduce(), p.w_b5r, p.b_b5r,
                                "5x5-reduce");
  t.a_b5r = relu(t.z_b5r);
  t.z_b5 = detail::branch_conv(t.a_b5r, spec.conv_b5(), p.w_b5, p.b_b5, "5x5");

  auto pooled = maxpool2d(input, 3, 1, 1);
  t.pooled = pooled.output;
  t.pool_argmax = std::move(pooled.argmax);
  t.z_pp = detail::branch_conv(t.pooled, spec.conv_pool_proj(), p.w_pp, p.b_pp,
                               "pool-proj");

  const std::size_t h = input.extent(1), w = input.extent(2);
  Tensor out({spec.out_channels(), h, w});
  std::size_t coff = 0;
  for (const Tensor* z : {&t.z_b1, &t.z_b3, &t.z_b5, &t.z_pp}) {
    const std::size_t bc = z->extent(0);
    for (std::size_t c = 0; c < bc; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          out(coff + c, y, x) = std::max(0.0, (*z)(c, y, x));
    coff += bc;
  }
  t.out = std::move(out);
  return t;
}

inline Tensor inception_forward(const Tensor& input, const InceptionSpec& spec,
                                const InceptionParams& p) {
  return inception_forward_traced(input, spec, p).out;
}

struct InceptionGrads {
  Tensor input;
  InceptionParams params;  // same layout as the forward parameters
};

inline InceptionGrads inception_backward(const InceptionTrace& t,
                                         const InceptionSpec& spec,
                                         const InceptionParams& p,
                                         const Tensor& grad_out) {
  if (grad_out.shape() != t.out.shape())
    throw ShapeError("inception_backward: grad_out shape " +
                     grad_out.shape_string() + " does not match output " +
                     t.out.shape_string());
  const std::size_t h = t.in.extent(1), w = t.in.extent(2);

  // split grad_out per branch and undo the concat-side relu
  auto slice_grad = [&](std::size_t coff, const Tensor& z) {
    Tensor g(z.shape());
    const std::size_t bc = z.extent(0);
    for (std::size_t c = 0; c < bc; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          g(c, y, x) = z(c, y, x) > 0.0 ? grad_out(coff + c, y, x) : 0.0;
    return g;
  };

  std::size_t coff = 0;
  const Tensor g_b1 = slice_grad(coff, t.z_b1);
  coff += spec.b1;
  const Tensor g_b3 = slice_grad(coff, t.z_b3);
  coff += spec.b3;
  const Tensor g_b5 = slice_grad(coff, t.z_b5);
  coff += spec.b5;
  const Tensor g_pp = slice_grad(coff, t.z_pp);

  InceptionGrads out{Tensor(t.in.shape()), InceptionParams{}};
  auto add_into = [](Tensor& dst, const Tensor& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  };

  // 1x1 branch
  {
    auto g = conv2d_backward(t.in, spec.conv_b1(), p.w_b1, g_b1);
    out.params.w_b1 = std::move(g.weights);
    out.params.b_b1 = std::move(g.bias);
    add_into(out.input, g.input);
  }
  // 3x3 branch
  {
    auto g2 = conv2d_backward(t.a_b3r, spec.conv_b3(), p.w_b3, g_b3);
    out.params.w_b3 = std::move(g2.weights);
    out.params.b_b3 = std::move(g2.bias);
    auto g1 = conv2d_backward(t.in, spec.conv_b3_reduce(), p.w_b3r,
                              relu_backward(t.z_b3r, g2.input));
    out.params.w_b3r = std::move(g1.weights);
    out.params.b_b3r = std::move(g1.bias);
    add_into(out.input, g1.input);
  }
  // 5x5 branch
  {
    auto g2 = conv2d_backward(t.a_b5r, spec.conv_b5(), p.w_b5, g_b5);
    out.params.w_b5 = std::move(g2.weights);
    out.params.b_b5 = std::move(g2.bias);
    auto g1 = conv2d_backward(t.in, spec.conv_b5_reduce(), p.w_b5r,
                              relu_backward(t.z_b5r, g2.input));
    out.params.w_b5r = std::move(g1.weights);
    out.params.b_b5r = std::move(g1.bias);
    add_into(out.input, g1.input);
  }
  // pool branch
  {
    auto g2 = conv2d_backward(t.pooled, spec.conv_pool_proj(), p.w_pp, g_pp);
    out.params.w_pp = std::move(g2.weights);
    out.params.b_pp = std::move(g2.bias);
    add_into(out.input,
             maxpool2d_backward(t.in.shape(), t.pool_argmax, g2.input));
  }
  return out;
}

}  // namespace did3
