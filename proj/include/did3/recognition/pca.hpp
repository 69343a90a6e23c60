#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "did3/linalg.hpp"
#include "did3/tensor.hpp"

namespace did3 {

struct PcaModel {
  Tensor mean;         // [D]
  Tensor components;   // [p, D], rows orthonormal
  std::vector<double> eigenvalues;  // non-increasing, length p

  std::size_t input_dim() const { return mean.size(); }
  std::size_t output_dim() const { return components.extent(0); }
};

// components * (x - mean)
inline Tensor pca_transform(const PcaModel& m, const Tensor& x) {
  if (x.size() != m.input_dim())
    throw ShapeError("pca_transform: input size " + std::to_string(x.size()) +
                     " does not match model dim " +
                     std::to_string(m.input_dim()));
  Tensor centered = x.flattened();
  for (std::size_t i = 0; i < centered.size(); ++i) centered[i] -= m.mean[i];
  return mat_vec(m.components, centered);
}

namespace detail {

// Grows `rows` to `target` orthonormal rows using Gram-Schmidt against the
// canonical basis; only needed when the data is rank deficient.
inline void orthonormal_complete(std::vector<Tensor>& rows, std::size_t dim,
                                 std::size_t target) {
  for (std::size_t cand = 0; cand < dim && rows.size() < target; ++cand) {
    Tensor v({dim});
    v[cand] = 1.0;
    for (const Tensor& r : rows) {
      const double proj = dot(r, v);
      for (std::size_t i = 0; i < dim; ++i) v[i] -= proj * r[i];
    }
    const double norm = std::sqrt(dot(v, v));
    if (norm < 1e-6) continue;
    for (std::size_t i = 0; i < dim; ++i) v[i] /= norm;
    rows.push_back(std::move(v));
  }
  if (rows.size() < target)
    throw Error("pca_fit: could not complete an orthonormal basis");
}

}  // namespace detail

// Population-covariance eigendecomposition (divisor n). When the sample
// count is below the feature dimension the Gram-matrix route is used; the
// contract is the same either way.
inline PcaModel pca_fit(const std::vector<Tensor>& features, std::size_t p) {
  const std::size_t n = features.size();
  if (n < 2) throw Error("pca_fit: need at least 2 samples");
  const std::size_t dim = features[0].size();
  for (const Tensor& f : features)
    if (f.size() != dim)
      throw ShapeError("pca_fit: inconsistent feature sizes");
  if (p == 0 || p > std::min(dim, n - 1))
    throw ShapeError("pca_fit: target dim " + std::to_string(p) +
                     " outside [1, min(D=" + std::to_string(dim) +
                     ", n-1=" + std::to_string(n - 1) + ")]");

  PcaModel model;
  model.mean = Tensor({dim});
  for (const Tensor& f : features)
    for (std::size_t i = 0; i < dim; ++i) model.mean[i] += f[i];
  for (std::size_t i = 0; i < dim; ++i)
    model.mean[i] /= static_cast<double>(n);

  std::vector<Tensor> rows;
  rows.reserve(p);
  std::vector<double> eigs;

  if (dim <= n) {
    Tensor cov({dim, dim});
    Tensor c({dim});
    for (const Tensor& f : features) {
      for (std::size_t i = 0; i < dim; ++i) c[i] = f[i] - model.mean[i];
      for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = i; j < dim; ++j) cov(i, j) += c[i] * c[j];
    }
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = i; j < dim; ++j) {
        cov(i, j) /= static_cast<double>(n);
        cov(j, i) = cov(i, j);
      }
    EigenSym es = jacobi_eigen_sym(cov);
    for (std::size_t k = 0; k < p; ++k) {
      eigs.push_back(std::max(0.0, es.values[k]));
      Tensor row({dim});
      for (std::size_t i = 0; i < dim; ++i) row[i] = es.vectors(i, k);
      rows.push_back(std::move(row));
    }
  } else {
    // Gram route: eigenvectors of (Xc Xc^T)/n lift to covariance
    // eigenvectors Xc^T u / sqrt(n * lambda).
    Tensor xc({n, dim});
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t i = 0; i < dim; ++i)
        xc(r, i) = features[r][i] - model.mean[i];
    Tensor gram({n, n});
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t s = r; s < n; ++s) {
        double acc = 0.0;
        for (std::size_t i = 0; i < dim; ++i) acc += xc(r, i) * xc(s, i);
        gram(r, s) = acc / static_cast<double>(n);
        gram(s, r) = gram(r, s);
      }
    EigenSym es = jacobi_eigen_sym(gram);
    const double floor = std::max(1e-12, es.values.empty() ? 0.0
                                         : es.values[0] * 1e-12);
    for (std::size_t k = 0; k < p && es.values[k] > floor; ++k) {
      const double lam = es.values[k];
      Tensor row({dim});
      for (std::size_t i = 0; i < dim; ++i) {
        double acc = 0.0;
        for (std::size_t r = 0; r < n; ++r) acc += xc(r, i) * es.vectors(r, k);
        row[i] = acc / std::sqrt(static_cast<double>(n) * lam);
      }
      eigs.push_back(lam);
      rows.push_back(std::move(row));
    }
    detail::orthonormal_complete(rows, dim, p);
    eigs.resize(p, 0.0);
  }

  model.eigenvalues = std::move(eigs);
  model.components = Tensor({p, dim});
  for (std::size_t k = 0; k < p; ++k)
    for (std::size_t i = 0; i < dim; ++i) model.components(k, i) = rows[k][i];
  return model;
}

}  // namespace did3
