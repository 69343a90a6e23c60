#pragma once

#include <string>

#include "did3/tensor.hpp"

namespace did3 {

// A crop rectangle on the face canvas plus an integer downscale factor.
// The network assigned to a region sees an input of (h/scale) x (w/scale).
struct Region {
  std::size_t x = 0, y = 0;
  std::size_t w = 0, h = 0;
  std::size_t scale = 1;

  std::size_t input_h() const { return h / scale; }
  std::size_t input_w() const { return w / scale; }

  void validate(std::size_t canvas_h, std::size_t canvas_w) const {
    if (w == 0 || h == 0 || scale == 0)
      throw ShapeError("region: extents and scale must be positive");
    if (x + w > canvas_w || y + h > canvas_h)
      throw ShapeError("region (" + std::to_string(x) + "," +
                       std::to_string(y) + "," + std::to_string(w) + "x" +
                       std::to_string(h) + ") exceeds canvas " +
                       std::to_string(canvas_w) + "x" +
                       std::to_string(canvas_h));
    if (w % scale != 0 || h % scale != 0)
      throw ShapeError("region " + std::to_string(w) + "x" +
                       std::to_string(h) + " not divisible by scale " +
                       std::to_string(scale));
  }
};

inline Tensor crop_image(const Tensor& img, const Region& r) {
  if (img.rank() != 3)
    throw ShapeError("crop_image: image must be [C,H,W], got " +
                     img.shape_string());
  r.validate(img.extent(1), img.extent(2));
  const std::size_t c = img.extent(0);
  Tensor out({c, r.h, r.w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t yy = 0; yy < r.h; ++yy)
      for (std::size_t xx = 0; xx < r.w; ++xx)
        out(ch, yy, xx) = img(ch, r.y + yy, r.x + xx);
  return out;
}

// Block-average downscale by an integer factor.
inline Tensor downscale_image(const Tensor& img, std::size_t factor) {
  if (factor == 1) return img;
  const std::size_t c = img.extent(0), h = img.extent(1), w = img.extent(2);
  if (h % factor != 0 || w % factor != 0)
    throw ShapeError("downscale_image: " + img.shape_string() +
                     " not divisible by " + std::to_string(factor));
  Tensor out({c, h / factor, w / factor});
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t oy = 0; oy < h / factor; ++oy)
      for (std::size_t ox = 0; ox < w / factor; ++ox) {
        double s = 0.0;
        for (std::size_t dy = 0; dy < factor; ++dy)
          for (std::size_t dx = 0; dx < factor; ++dx)
            s += img(ch, oy * factor + dy, ox * factor + dx);
        out(ch, oy, ox) = s * inv;
      }
  return out;
}

inline Tensor mirror_horizontal(const Tensor& img) {
  const std::size_t c = img.extent(0), h = img.extent(1), w = img.extent(2);
  Tensor out({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        out(ch, y, x) = img(ch, y, w - 1 - x);
  return out;
}

// Crop, downscale and optionally mirror: the preprocessing every region
// network sees, at training and extraction time alike.
inline Tensor region_view(const Tensor& face, const Region& r, bool flip) {
  Tensor v = downscale_image(crop_image(face, r), r.scale);
  return flip ? mirror_horizontal(v) : v;
}

}  // namespace did3
