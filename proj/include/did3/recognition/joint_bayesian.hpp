#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "did3/linalg.hpp"
#include "did3/tensor.hpp"

namespace did3 {

// Generative face comparator: x = mu + eps with mu ~ N(0, S_mu) shared by all
// images of one identity and eps ~ N(0, S_eps) per image. Verification scores
// are the log-likelihood ratio of the shared-mu vs independent-mu hypotheses.
struct JointBayesianModel {
  Tensor s_mu;   // identity covariance, symmetric PSD
  Tensor s_eps;  // residual covariance, symmetric PD

  std::size_t dim() const { return s_mu.extent(0); }

  void validate() const {
    if (s_mu.rank() != 2 || s_mu.extent(0) != s_mu.extent(1) ||
        !s_mu.same_shape(s_eps))
      throw ModelError("joint bayesian: covariance shapes " +
                       s_mu.shape_string() + " / " + s_eps.shape_string());
    const std::size_t p = dim();
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = i + 1; j < p; ++j) {
        if (std::fabs(s_mu(i, j) - s_mu(j, i)) > 1e-10 ||
            std::fabs(s_eps(i, j) - s_eps(j, i)) > 1e-10)
          throw ModelError("joint bayesian: covariances not symmetric");
      }
    cholesky(s_eps);  // throws if not PD
    for (double lam : jacobi_eigen_sym(s_mu).values)
      if (lam < -1e-9)
        throw ModelError("joint bayesian: S_mu not positive semidefinite");
  }
};

// Precomputed closed form of the log-likelihood-ratio score. With
// P = S_mu + S_eps, Q = S_mu and Schur = P - Q P^-1 Q:
//
//   r(x1,x2) = 0.5 x1'(P^-1 - M1)x1 + 0.5 x2'(P^-1 - M1)x2 - x1'M2 x2 + c
//
// where M1 = Schur^-1, M2 = -P^-1 Q M1 and c = 0.5(log|P| - log|Schur|).
// This equals the direct difference of the two joint Gaussian log-densities.
class JbScorer {
 public:
  explicit JbScorer(const JointBayesianModel& model) {
    const std::size_t p = model.dim();
    Tensor pmat = model.s_mu;
    for (std::size_t i = 0; i < pmat.size(); ++i) pmat[i] += model.s_eps[i];
    Tensor pinv;
    Tensor pchol;
    try {
      pchol = cholesky(pmat);
    } catch (const ModelError&) {
      throw ModelError("jb_score: S_mu + S_eps is not positive definite");
    }
    pinv = cholesky_inverse(pchol);

    Tensor schur = pmat;
    const Tensor qpq = mat_mul(model.s_mu, mat_mul(pinv, model.s_mu));
    for (std::size_t i = 0; i < schur.size(); ++i) schur[i] -= qpq[i];
    mat_symmetrize(schur);
    Tensor schol;
    try {
      schol = cholesky(schur);
    } catch (const ModelError&) {
      throw ModelError("jb_score: joint covariance is not positive definite");
    }
    Tensor m1 = cholesky_inverse(schol);

    Tensor m2 = mat_mul(pinv, mat_mul(model.s_mu, m1));
    for (std::size_t i = 0; i < m2.size(); ++i) m2[i] = -m2[i];
    mat_symmetrize(m2);

    a_ = Tensor({p, p});
    for (std::size_t i = 0; i < a_.size(); ++i)
      a_[i] = 0.5 * (pinv[i] - m1[i]);
    mat_symmetrize(a_);
    g_ = std::move(m2);
    c_ = 0.5 * (cholesky_logdet(pchol) - cholesky_logdet(schol));
    dim_ = p;
  }

  std::size_t dim() const { return dim_; }

  double operator()(const Tensor& x1, const Tensor& x2) const {
    if (x1.size() != dim_ || x2.size() != dim_)
      throw ShapeError("jb_score: feature size " + std::to_string(x1.size()) +
                       "/" + std::to_string(x2.size()) +
                       " does not match model dim " + std::to_string(dim_));
    return quad(x1) + quad(x2) - bilinear(x1, x2) + c_;
  }

 private:
  double quad(const Tensor& x) const {
    double s = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < dim_; ++j) row += a_(i, j) * x[j];
      s += x[i] * row;
    }
    return s;
  }

  // Evaluated over unordered index pairs so that swapping x1 and x2 gives a
  // bit-identical result.
  double bilinear(const Tensor& x1, const Tensor& x2) const {
    double s = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) {
      s += g_(i, i) * x1[i] * x2[i];
      for (std::size_t j = i + 1; j < dim_; ++j)
        s += g_(i, j) * (x1[i] * x2[j] + x2[i] * x1[j]);
    }
    return s;
  }

  Tensor a_, g_;
  double c_ = 0.0;
  std::size_t dim_ = 0;
};

inline double jb_score(const JointBayesianModel& model, const Tensor& x1,
                       const Tensor& x2) {
  return JbScorer(model)(x1, x2);
}

namespace detail {

struct IdentityGroup {
  std::vector<std::size_t> members;
  Tensor sum;      // sum of member features
  Tensor scatter;  // within-group scatter around the group mean
};

inline void add_ridge(Tensor& m, double relative) {
  const std::size_t p = m.extent(0);
  double tr = 0.0;
  for (std::size_t i = 0; i < p; ++i) tr += m(i, i);
  const double eps = relative * std::max(tr / static_cast<double>(p), 1e-12);
  for (std::size_t i = 0; i < p; ++i) m(i, i) += eps;
}

}  // namespace detail

// EM fit of the two-covariance model. The E-step computes, per identity,
// the posterior mean and covariance of mu given that identity's images; the
// M-step re-estimates S_mu and S_eps from those posterior moments (second
// moments included, so the training likelihood cannot decrease). After each
// M-step a 1e-6 trace-scaled ridge keeps S_eps positive definite on
// degenerate data.
//
// Features are mean-centered internally. If `loglik_history` is given it
// receives iters+1 entries: the training log-likelihood at initialization
// and after each EM update.
inline JointBayesianModel jb_fit(const std::vector<Tensor>& features,
                                 const std::vector<std::size_t>& identities,
                                 std::size_t iters,
                                 std::vector<double>* loglik_history = nullptr) {
  if (features.size() != identities.size() || features.empty())
    throw DataError("jb_fit: features/identities size mismatch or empty");
  const std::size_t p = features[0].size();
  const std::size_t n_total = features.size();
  if (iters == 0) throw Error("jb_fit: iters must be positive");

  // center globally
  Tensor mean({p});
  for (const Tensor& f : features) {
    if (f.size() != p) throw ShapeError("jb_fit: inconsistent feature sizes");
    for (std::size_t i = 0; i < p; ++i) mean[i] += f[i];
  }
  for (std::size_t i = 0; i < p; ++i) mean[i] /= static_cast<double>(n_total);
  std::vector<Tensor> x(n_total, Tensor({p}));
  for (std::size_t r = 0; r < n_total; ++r)
    for (std::size_t i = 0; i < p; ++i) x[r][i] = features[r][i] - mean[i];

  std::map<std::size_t, detail::IdentityGroup> groups;
  for (std::size_t r = 0; r < n_total; ++r)
    groups[identities[r]].members.push_back(r);
  if (groups.size() < 2) throw DataError("jb_fit: need at least 2 identities");
  bool any_multi = false;
  for (auto& [id, g] : groups) {
    g.sum = Tensor({p});
    for (std::size_t r : g.members)
      for (std::size_t i = 0; i < p; ++i) g.sum[i] += x[r][i];
    if (g.members.size() >= 2) any_multi = true;
  }
  if (!any_multi)
    throw DataError("jb_fit: no identity has two samples; residual "
                    "covariance is unidentifiable");

  const std::size_t n_id = groups.size();

  // fixed within-group scatter, used by the likelihood evaluation
  Tensor scatter_total({p, p});
  for (auto& [id, g] : groups) {
    const double m = static_cast<double>(g.members.size());
    for (std::size_t r : g.members)
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = i; j < p; ++j)
          scatter_total(i, j) += (x[r][i] - g.sum[i] / m) *
                                 (x[r][j] - g.sum[j] / m);
  }
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = i; j < p; ++j) scatter_total(j, i) = scatter_total(i, j);

  // init: between-class / within-class moment estimates
  JointBayesianModel model{Tensor({p, p}), Tensor({p, p})};
  for (auto& [id, g] : groups) {
    const double m = static_cast<double>(g.members.size());
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < p; ++j)
        model.s_mu(i, j) += (g.sum[i] / m) * (g.sum[j] / m);
  }
  for (std::size_t i = 0; i < model.s_mu.size(); ++i) {
    model.s_mu[i] /= static_cast<double>(n_id);
    model.s_eps[i] = scatter_total[i] / static_cast<double>(n_total);
  }
  detail::add_ridge(model.s_eps, 1e-6);

  static constexpr double kLog2Pi = 1.8378770664093454836;

  auto log_likelihood = [&]() {
    // per identity, an orthogonal change of variables splits the joint
    // density into the scaled mean (covariance S_eps + m S_mu) and m-1
    // residual contrasts (covariance S_eps)
    const Tensor eps_chol = cholesky(model.s_eps);
    const Tensor eps_inv = cholesky_inverse(eps_chol);
    const double eps_logdet = cholesky_logdet(eps_chol);
    double within = 0.0;
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < p; ++j)
        within += eps_inv(i, j) * scatter_total(i, j);
    double ll = -0.5 * (static_cast<double>(n_total - n_id) *
                            (static_cast<double>(p) * kLog2Pi + eps_logdet) +
                        within);
    std::map<std::size_t, Tensor> kchol_by_m;
    for (const auto& [id, g] : groups) {
      const std::size_t m = g.members.size();
      auto it = kchol_by_m.find(m);
      if (it == kchol_by_m.end()) {
        Tensor k = model.s_eps;
        for (std::size_t i = 0; i < k.size(); ++i)
          k[i] += static_cast<double>(m) * model.s_mu[i];
        it = kchol_by_m.emplace(m, cholesky(k)).first;
      }
      Tensor scaled_mean({p});
      const double root_m = std::sqrt(static_cast<double>(m));
      for (std::size_t i = 0; i < p; ++i)
        scaled_mean[i] = g.sum[i] / root_m;  // sqrt(m) * group mean
      ll += gaussian_logpdf_zero_mean(it->second, scaled_mean);
    }
    return ll;
  };

  if (loglik_history) {
    loglik_history->clear();
    loglik_history->push_back(log_likelihood());
  }

  for (std::size_t iter = 0; iter < iters; ++iter) {
    // E-step ingredients per distinct group size m:
    //   T_m = S_mu (m S_mu + S_eps)^-1           (posterior mean map)
    //   Cov_m = S_mu - m T_m S_mu                (posterior covariance)
    std::map<std::size_t, std::pair<Tensor, Tensor>> by_m;  // m -> (T, Cov)
    auto get_tm = [&](std::size_t m) -> const std::pair<Tensor, Tensor>& {
      auto it = by_m.find(m);
      if (it != by_m.end()) return it->second;
      Tensor k = model.s_eps;
      for (std::size_t i = 0; i < k.size(); ++i)
        k[i] += static_cast<double>(m) * model.s_mu[i];
      const Tensor kinv = spd_inverse(k);
      Tensor t = mat_mul(model.s_mu, kinv);
      Tensor cov = mat_mul(t, model.s_mu);
      for (std::size_t i = 0; i < cov.size(); ++i)
        cov[i] = model.s_mu[i] - static_cast<double>(m) * cov[i];
      mat_symmetrize(cov);
      return by_m.emplace(m, std::make_pair(std::move(t), std::move(cov)))
          .first->second;
    };

    Tensor new_mu({p, p});
    Tensor new_eps({p, p});
    for (const auto& [id, g] : groups) {
      const std::size_t m = g.members.size();
      const auto& [t, cov] = get_tm(m);
      const Tensor mu_hat = mat_vec(t, g.sum);
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < p; ++j)
          new_mu(i, j) += cov(i, j) + mu_hat[i] * mu_hat[j];
      for (std::size_t r : g.members) {
        for (std::size_t i = 0; i < p; ++i) {
          const double ei = x[r][i] - mu_hat[i];
          for (std::size_t j = 0; j < p; ++j)
            new_eps(i, j) += ei * (x[r][j] - mu_hat[j]);
        }
      }
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < p; ++j)
          new_eps(i, j) += static_cast<double>(m) * cov(i, j);
    }
    for (std::size_t i = 0; i < new_mu.size(); ++i) {
      model.s_mu[i] = new_mu[i] / static_cast<double>(n_id);
      model.s_eps[i] = new_eps[i] / static_cast<double>(n_total);
    }
    mat_symmetrize(model.s_mu);
    mat_symmetrize(model.s_eps);
    detail::add_ridge(model.s_eps, 1e-6);

    if (loglik_history) loglik_history->push_back(log_likelihood());
  }
  return model;
}

}  // namespace did3
