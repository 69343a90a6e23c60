#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "did3/image_ops.hpp"
#include "did3/io/config_file.hpp"
#include "did3/io/weight_file.hpp"
#include "did3/rng.hpp"
#include "did3/tensor.hpp"
#include "did3/training.hpp"

namespace did3 {

// Stand-in for a real face corpus: one smooth random prototype per identity,
// perturbed per sample by translation, brightness shift and pixel noise.
// Train and test identities are disjoint by construction.
struct SyntheticDatasetSpec {
  std::size_t num_train_identities = 20;
  std::size_t num_test_identities = 10;
  std::size_t images_per_identity = 20;
  std::size_t canvas = 32;  // square, single channel
  std::size_t translation_px = 2;
  double brightness_delta = 0.08;
  double noise_std = 0.03;
  std::vector<Region> regions;  // empty: default manifest for the canvas
  std::uint64_t seed = 1;

  void validate() const {
    if (num_train_identities < 2 || num_test_identities < 2)
      throw DataError("dataset spec: need at least 2 identities per split");
    if (images_per_identity == 0)
      throw DataError("dataset spec: images_per_identity must be positive");
    if (canvas < 16) throw DataError("dataset spec: canvas must be >= 16");
    for (const Region& r : regions) r.validate(canvas, canvas);
  }
};

// Five crops differing in position and scale: the whole face, a coarse
// half-resolution view, and center/upper/lower half-size crops.
inline std::vector<Region> default_regions(std::size_t canvas) {
  const std::size_t c = canvas, h = canvas / 2, q = canvas / 4;
  const std::size_t top = c / 16;
  return {
      {0, 0, c, c, 1},
      {0, 0, c, c, 2},
      {q, q, h, h, 1},
      {q, top, h, h, 1},
      {q, c - top - h, h, h, 1},
  };
}

struct SyntheticDataset {
  SyntheticDatasetSpec spec;
  std::vector<Region> regions;
  LabeledDataset train;  // labels 0..num_train_identities-1
  LabeledDataset test;   // labels 0..num_test_identities-1
};

namespace detail {

// Values are quantized to float32 so the in-memory dataset matches what a
// round trip through the on-disk format yields.
inline double quantize(double v) { return static_cast<double>(static_cast<float>(v)); }

inline Tensor make_prototype(std::size_t canvas, Rng rng) {
  Tensor img({1, canvas, canvas});
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::vector<Wave> waves;
  for (int k = 0; k < 6; ++k) {
    Wave w;
    w.fx = static_cast<double>(rng.uniform_index(4));
    w.fy = static_cast<double>(rng.uniform_index(4));
    if (w.fx == 0.0 && w.fy == 0.0) w.fx = 1.0;
    w.phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    w.amp = rng.normal() / (1.0 + w.fx + w.fy);
    waves.push_back(w);
  }
  double lo = 1e300, hi = -1e300;
  for (std::size_t y = 0; y < canvas; ++y)
    for (std::size_t x = 0; x < canvas; ++x) {
      double v = 0.0;
      for (const Wave& w : waves)
        v += w.amp * std::cos(2.0 * 3.14159265358979323846 *
                                  (w.fx * static_cast<double>(x) +
                                   w.fy * static_cast<double>(y)) /
                                  static_cast<double>(canvas) +
                              w.phase);
      img(0, y, x) = v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  // normalize to [0.2, 0.8] so perturbations stay inside [0,1]
  const double span = hi - lo;
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double unit = span > 0.0 ? (img[i] - lo) / span : 0.5;
    img[i] = quantize(0.2 + 0.6 * unit);
  }
  return img;
}

inline Tensor perturb(const Tensor& proto, const SyntheticDatasetSpec& spec,
                      Rng rng) {
  const std::size_t c = spec.canvas;
  const long t = static_cast<long>(spec.translation_px);
  const long dx = static_cast<long>(rng.uniform_index(2 * t + 1)) - t;
  const long dy = static_cast<long>(rng.uniform_index(2 * t + 1)) - t;
  const double brightness =
      rng.uniform(-spec.brightness_delta, spec.brightness_delta);

  Tensor out({1, c, c});
  for (std::size_t y = 0; y < c; ++y) {
    for (std::size_t x = 0; x < c; ++x) {
      long sy = static_cast<long>(y) - dy;
      long sx = static_cast<long>(x) - dx;
      sy = std::min<long>(std::max<long>(sy, 0), static_cast<long>(c) - 1);
      sx = std::min<long>(std::max<long>(sx, 0), static_cast<long>(c) - 1);
      double v = proto(0, static_cast<std::size_t>(sy),
                       static_cast<std::size_t>(sx));
      v += brightness + spec.noise_std * rng.normal();
      out(0, y, x) = quantize(std::min(1.0, std::max(0.0, v)));
    }
  }
  return out;
}

inline std::uint64_t proto_tag(std::size_t global_id) {
  return (std::uint64_t{1} << 40) | global_id;
}
inline std::uint64_t sample_tag(std::size_t global_id, std::size_t sample) {
  return (std::uint64_t{2} << 40) | (static_cast<std::uint64_t>(global_id) << 20) |
         sample;
}

}  // namespace detail

inline SyntheticDataset generate_dataset(const SyntheticDatasetSpec& spec_in) {
  SyntheticDatasetSpec spec = spec_in;
  spec.validate();
  if (spec.regions.empty()) spec.regions = default_regions(spec.canvas);

  SyntheticDataset ds;
  ds.spec = spec;
  ds.regions = spec.regions;
  ds.train.region_id = -1;
  ds.test.region_id = -1;

  const Rng base(spec.seed);
  auto fill_split = [&](LabeledDataset& split, std::size_t first_global,
                        std::size_t count) {
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t gid = first_global + k;
      const Tensor proto =
          detail::make_prototype(spec.canvas, base.derive(detail::proto_tag(gid)));
      for (std::size_t s = 0; s < spec.images_per_identity; ++s) {
        split.images.push_back(detail::perturb(
            proto, spec, base.derive(detail::sample_tag(gid, s))));
        split.identities.push_back(k);
      }
    }
  };
  fill_split(ds.train, 0, spec.num_train_identities);
  fill_split(ds.test, spec.num_train_identities, spec.num_test_identities);
  return ds;
}

namespace detail {

inline Tensor pack_images(const LabeledDataset& split, std::size_t canvas) {
  Tensor out({split.size(), 1, canvas, canvas});
  std::size_t off = 0;
  for (const Tensor& img : split.images) {
    for (std::size_t i = 0; i < img.size(); ++i) out[off + i] = img[i];
    off += img.size();
  }
  return out;
}

inline Tensor pack_labels(const LabeledDataset& split) {
  Tensor out({split.size()});
  for (std::size_t i = 0; i < split.size(); ++i)
    out[i] = static_cast<double>(split.identities[i]);
  return out;
}

inline LabeledDataset unpack_split(const std::map<std::string, Tensor>& m,
                                   const std::string& file) {
  auto img_it = m.find("images");
  auto lab_it = m.find("labels");
  if (img_it == m.end() || lab_it == m.end())
    throw FormatError(file + ": missing 'images' or 'labels' tensor");
  const Tensor& packed = img_it->second;
  if (packed.rank() != 4)
    throw FormatError(file + ": images tensor must be [N,C,H,W]");
  LabeledDataset split;
  split.region_id = -1;
  const std::size_t n = packed.extent(0);
  const Shape img_shape{packed.extent(1), packed.extent(2), packed.extent(3)};
  const std::size_t stride = shape_numel(img_shape);
  if (lab_it->second.size() != n)
    throw FormatError(file + ": image/label count mismatch");
  for (std::size_t k = 0; k < n; ++k) {
    Tensor img(img_shape);
    for (std::size_t i = 0; i < stride; ++i) img[i] = packed[k * stride + i];
    split.images.push_back(std::move(img));
    split.identities.push_back(
        static_cast<std::size_t>(lab_it->second[k]));
  }
  return split;
}

}  // namespace detail

inline void save_dataset(const SyntheticDataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());

  save_weights(dir + "/train.did3",
               NamedTensors{{"images", detail::pack_images(ds.train, ds.spec.canvas)},
                            {"labels", detail::pack_labels(ds.train)}});
  save_weights(dir + "/test.did3",
               NamedTensors{{"images", detail::pack_images(ds.test, ds.spec.canvas)},
                            {"labels", detail::pack_labels(ds.test)}});

  std::ofstream regions(dir + "/regions.csv");
  if (!regions) throw IoError("cannot write " + dir + "/regions.csv");
  regions << "region,x,y,w,h,scale\n";
  for (std::size_t i = 0; i < ds.regions.size(); ++i) {
    const Region& r = ds.regions[i];
    regions << i << "," << r.x << "," << r.y << "," << r.w << "," << r.h << ","
            << r.scale << "\n";
  }

  std::ofstream manifest(dir + "/manifest.txt");
  if (!manifest) throw IoError("cannot write " + dir + "/manifest.txt");
  manifest << "[dataset]\n"
           << "canvas = " << ds.spec.canvas << "\n"
           << "images_per_identity = " << ds.spec.images_per_identity << "\n"
           << "train_identity_first = 0\n"
           << "train_identity_count = " << ds.spec.num_train_identities << "\n"
           << "test_identity_first = " << ds.spec.num_train_identities << "\n"
           << "test_identity_count = " << ds.spec.num_test_identities << "\n"
           << "translation_px = " << ds.spec.translation_px << "\n"
           << "brightness_delta = " << ds.spec.brightness_delta << "\n"
           << "noise_std = " << ds.spec.noise_std << "\n"
           << "seed = " << ds.spec.seed << "\n"
           << "regions = " << ds.regions.size() << "\n";
}

inline void gen_dataset(const SyntheticDatasetSpec& spec,
                        const std::string& dir) {
  save_dataset(generate_dataset(spec), dir);
}

inline SyntheticDataset load_dataset(const std::string& dir) {
  SyntheticDataset ds;
  ConfigFile manifest = ConfigFile::parse_file(dir + "/manifest.txt");
  ds.spec.canvas =
      static_cast<std::size_t>(manifest.get_int("dataset.canvas", 0));
  ds.spec.images_per_identity = static_cast<std::size_t>(
      manifest.get_int("dataset.images_per_identity", 0));
  ds.spec.num_train_identities = static_cast<std::size_t>(
      manifest.get_int("dataset.train_identity_count", 0));
  ds.spec.num_test_identities = static_cast<std::size_t>(
      manifest.get_int("dataset.test_identity_count", 0));
  ds.spec.translation_px = static_cast<std::size_t>(
      manifest.get_int("dataset.translation_px", 0));
  ds.spec.brightness_delta = manifest.get_double("dataset.brightness_delta", 0);
  ds.spec.noise_std = manifest.get_double("dataset.noise_std", 0);
  ds.spec.seed =
      static_cast<std::uint64_t>(manifest.get_int("dataset.seed", 0));
  manifest.get_int("dataset.train_identity_first", 0);
  manifest.get_int("dataset.test_identity_first", 0);
  manifest.get_int("dataset.regions", 0);

  std::ifstream regions(dir + "/regions.csv");
  if (!regions) throw IoError("cannot open " + dir + "/regions.csv");
  std::string line;
  std::getline(regions, line);  // header
  while (std::getline(regions, line)) {
    if (line.empty()) continue;
    Region r;
    unsigned long idx, x, y, w, h, scale;
    if (std::sscanf(line.c_str(), "%lu,%lu,%lu,%lu,%lu,%lu", &idx, &x, &y, &w,
                    &h, &scale) != 6)
      throw FormatError(dir + "/regions.csv: malformed row '" + line + "'");
    r.x = x; r.y = y; r.w = w; r.h = h; r.scale = scale;
    ds.regions.push_back(r);
  }
  ds.spec.regions = ds.regions;

  ds.train = detail::unpack_split(load_weights_map(dir + "/train.did3"),
                                  dir + "/train.did3");
  ds.test = detail::unpack_split(load_weights_map(dir + "/test.did3"),
                                 dir + "/test.did3");
  return ds;
}

}  // namespace did3
