#pragma once

#include <string>
#include <vector>

#include "did3/image_ops.hpp"
#include "did3/network.hpp"
#include "did3/tensor.hpp"

namespace did3 {

// One forward propagation of the ensemble: a region crop, a trained network
// and whether the crop is mirrored first.
struct EnsembleEntry {
  Region region;
  const NetworkGraph* net = nullptr;
  bool flip = false;
};

struct EnsembleSpec {
  std::vector<EnsembleEntry> entries;

  std::size_t feature_dim() const {
    std::size_t d = 0;
    for (const auto& e : entries) d += e.net->feature_dim;
    return d;
  }
};

// Concatenated per-region features, in entry order.
inline Tensor ensemble_extract(const EnsembleSpec& spec, const Tensor& face) {
  if (spec.entries.empty()) throw Error("ensemble_extract: empty spec");
  std::vector<Tensor> parts;
  parts.reserve(spec.entries.size());
  for (std::size_t i = 0; i < spec.entries.size(); ++i) {
    const EnsembleEntry& e = spec.entries[i];
    try {
      parts.push_back(extract_feature(*e.net, region_view(face, e.region, e.flip)));
    } catch (const ShapeError& err) {
      throw ShapeError("ensemble entry " + std::to_string(i) + ": " +
                       err.what());
    }
  }
  return concat_flat(parts);
}

}  // namespace did3
