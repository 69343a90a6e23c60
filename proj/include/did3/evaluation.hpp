#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "did3/tensor.hpp"

namespace did3 {

using PairScorer = std::function<double(const Tensor&, const Tensor&)>;

struct VerificationPair {
  Tensor a, b;
  bool same = false;
  std::size_t fold = 0;
};

struct VerificationSet {
  std::vector<VerificationPair> pairs;
  std::size_t num_folds = 10;
};

struct VerificationOutcome {
  double mean = 0.0;
  double stddev = 0.0;  // population std over folds
  std::vector<double> per_fold;
};

namespace detail {

struct ScoredPair {
  double score;
  bool same;
  std::size_t fold;
};

// Accuracy-maximizing threshold over the given pairs with the rule
// "accept as genuine iff score >= t"; ties resolve to the lowest threshold.
// The +inf reject-all sentinel is considered last.
inline double best_threshold(std::vector<ScoredPair> pairs) {
  std::sort(pairs.begin(), pairs.end(),
            [](const ScoredPair& x, const ScoredPair& y) {
              return x.score < y.score;
            });
  std::size_t total_gen = 0;
  for (const auto& p : pairs) total_gen += p.same ? 1 : 0;

  double best_t = 0.0;
  std::size_t best_correct = 0;
  bool found = false;

  std::size_t gen_below = 0, imp_below = 0;
  std::size_t i = 0;
  while (i < pairs.size()) {
    const double t = pairs[i].score;
    // counts of pairs strictly below t are final here
    const std::size_t correct = (total_gen - gen_below) + imp_below;
    if (!found || correct > best_correct) {
      best_correct = correct;
      best_t = t;
      found = true;
    }
    while (i < pairs.size() && pairs[i].score == t) {
      gen_below += pairs[i].same ? 1 : 0;
      imp_below += pairs[i].same ? 0 : 1;
      ++i;
    }
  }
  if (imp_below > best_correct) {  // reject everything
    best_correct = imp_below;
    best_t = std::numeric_limits<double>::infinity();
  }
  return best_t;
}

inline std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

// LFW-style cross validation: for each held-out fold, the threshold that
// maximizes accuracy on the remaining folds is applied to the held-out fold.
inline VerificationOutcome verification_accuracy(const VerificationSet& vs,
                                                 const PairScorer& scorer) {
  if (vs.num_folds < 2)
    throw ProtocolError("verification: need at least 2 folds");
  std::vector<detail::ScoredPair> scored;
  scored.reserve(vs.pairs.size());
  for (const auto& p : vs.pairs) {
    if (p.fold >= vs.num_folds)
      throw ProtocolError("verification: pair fold " + std::to_string(p.fold) +
                          " out of range");
    scored.push_back({scorer(p.a, p.b), p.same, p.fold});
  }
  for (std::size_t f = 0; f < vs.num_folds; ++f) {
    bool has_gen = false, has_imp = false;
    for (const auto& s : scored)
      if (s.fold == f) (s.same ? has_gen : has_imp) = true;
    if (!has_gen || !has_imp)
      throw ProtocolError("verification: fold " + std::to_string(f) +
                          " lacks genuine or impostor pairs");
  }

  VerificationOutcome out;
  for (std::size_t f = 0; f < vs.num_folds; ++f) {
    std::vector<detail::ScoredPair> train;
    std::size_t held_total = 0, held_correct = 0;
    for (const auto& s : scored)
      if (s.fold != f) train.push_back(s);
    const double t = detail::best_threshold(std::move(train));
    for (const auto& s : scored) {
      if (s.fold != f) continue;
      ++held_total;
      const bool predicted_same = s.score >= t;
      if (predicted_same == s.same) ++held_correct;
    }
    out.per_fold.push_back(static_cast<double>(held_correct) /
                           static_cast<double>(held_total));
  }
  for (double a : out.per_fold) out.mean += a;
  out.mean /= static_cast<double>(out.per_fold.size());
  double var = 0.0;
  for (double a : out.per_fold) var += (a - out.mean) * (a - out.mean);
  out.stddev = std::sqrt(var / static_cast<double>(out.per_fold.size()));
  return out;
}

struct RocPoint {
  double far = 0.0;
  double tar = 0.0;
};

// Threshold sweep over all distinct scores (accept iff score >= t) plus the
// reject-all limit, so the curve always contains its (0, .) and (1,1)
// endpoints. Emitted in non-decreasing FAR order.
inline std::vector<RocPoint> roc_curve(const std::vector<double>& genuine,
                                       const std::vector<double>& impostor) {
  if (genuine.empty() || impostor.empty())
    throw ProtocolError("roc_curve: need both genuine and impostor scores");
  std::set<double> thresholds(genuine.begin(), genuine.end());
  thresholds.insert(impostor.begin(), impostor.end());

  std::vector<RocPoint> points;
  points.push_back({0.0, 0.0});  // reject-all limit
  for (auto it = thresholds.rbegin(); it != thresholds.rend(); ++it) {
    const double t = *it;
    std::size_t ga = 0, ia = 0;
    for (double s : genuine) ga += s >= t ? 1 : 0;
    for (double s : impostor) ia += s >= t ? 1 : 0;
    RocPoint p{static_cast<double>(ia) / static_cast<double>(impostor.size()),
               static_cast<double>(ga) / static_cast<double>(genuine.size())};
    if (points.empty() || p.far != points.back().far ||
        p.tar != points.back().tar)
      points.push_back(p);
  }
  return points;
}

constexpr int kImpostorId = -1;

struct IdentificationSet {
  std::vector<std::pair<int, Tensor>> gallery;  // unique subject ids
  std::vector<std::pair<int, Tensor>> probes;   // id or kImpostorId
};

namespace detail {

struct BestMatch {
  int subject = kImpostorId;
  double score = 0.0;
};

inline BestMatch best_gallery_match(const IdentificationSet& ids,
                                    const PairScorer& scorer,
                                    const Tensor& probe) {
  BestMatch best;
  bool first = true;
  for (const auto& [gid, gfeat] : ids.gallery) {
    const double s = scorer(probe, gfeat);
    // ties break to the lowest subject id; gallery is scanned in order
    if (first || s > best.score ||
        (s == best.score && gid < best.subject)) {
      best = {gid, s};
      first = false;
    }
  }
  return best;
}

inline void check_gallery(const IdentificationSet& ids) {
  if (ids.gallery.empty())
    throw ProtocolError("identification: empty gallery");
  std::set<int> seen;
  for (const auto& [gid, f] : ids.gallery) {
    if (gid == kImpostorId || !seen.insert(gid).second)
      throw ProtocolError("identification: gallery ids must be unique, got "
                          "duplicate or impostor id " +
                          std::to_string(gid));
  }
}

}  // namespace detail

// Fraction of probes whose top-scoring gallery subject is the true one.
inline double rank1_closed_set(const IdentificationSet& ids,
                               const PairScorer& scorer) {
  detail::check_gallery(ids);
  if (ids.probes.empty())
    throw ProtocolError("rank1_closed_set: no probes");
  std::set<int> gallery_ids;
  for (const auto& [gid, f] : ids.gallery) gallery_ids.insert(gid);
  std::size_t correct = 0;
  for (const auto& [pid, pfeat] : ids.probes) {
    if (pid == kImpostorId || !gallery_ids.count(pid))
      throw ProtocolError("rank1_closed_set: probe id " + std::to_string(pid) +
                          " not enrolled in gallery");
    if (detail::best_gallery_match(ids, scorer, pfeat).subject == pid)
      ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ids.probes.size());
}

// Open-set detection-and-identification rate: the acceptance threshold is
// the smallest value keeping the impostor alarm fraction (strictly above it)
// at or below `far`; a genuine probe counts when its best match is correct
// and its best score clears the threshold.
inline double dir_at_far(const IdentificationSet& ids, const PairScorer& scorer,
                         double far) {
  detail::check_gallery(ids);
  if (!(far > 0.0 && far < 1.0))
    throw ProtocolError("dir_at_far: far must be in (0,1)");
  std::set<int> gallery_ids;
  for (const auto& [gid, f] : ids.gallery) gallery_ids.insert(gid);

  std::vector<double> impostor_best;
  struct Genuine {
    int id;
    detail::BestMatch best;
  };
  std::vector<Genuine> genuine;
  for (const auto& [pid, pfeat] : ids.probes) {
    const auto best = detail::best_gallery_match(ids, scorer, pfeat);
    if (pid == kImpostorId) {
      impostor_best.push_back(best.score);
    } else {
      if (!gallery_ids.count(pid))
        throw ProtocolError("dir_at_far: genuine probe id " +
                            std::to_string(pid) + " not enrolled");
      genuine.push_back({pid, best});
    }
  }
  if (impostor_best.empty())
    throw ProtocolError("dir_at_far: no impostor probes");
  if (genuine.empty())
    throw ProtocolError("dir_at_far: no genuine probes");

  std::sort(impostor_best.begin(), impostor_best.end());
  const double m = static_cast<double>(impostor_best.size());
  double threshold = impostor_best.back();
  for (std::size_t k = 0; k < impostor_best.size(); ++k) {
    const auto above = impostor_best.end() -
                       std::upper_bound(impostor_best.begin(),
                                        impostor_best.end(), impostor_best[k]);
    if (static_cast<double>(above) / m <= far) {
      threshold = impostor_best[k];
      break;
    }
  }

  std::size_t hits = 0;
  for (const auto& g : genuine)
    if (g.best.subject == g.id && g.best.score > threshold) ++hits;
  return static_cast<double>(hits) / static_cast<double>(genuine.size());
}

// Per-region accuracy pairs for two model families plus the mean error-rate
// reduction of family A relative to family B (positive when A is better).
struct RegionComparison {
  struct Row {
    std::string region;
    double acc_a = 0.0;
    double acc_b = 0.0;
  };
  std::vector<Row> rows;
  double mean_error_rate_reduction = 0.0;
};

inline RegionComparison region_comparison_report(
    const std::vector<std::string>& regions, const std::vector<double>& acc_a,
    const std::vector<double>& acc_b) {
  if (regions.size() != acc_a.size() || regions.size() != acc_b.size() ||
      regions.empty())
    throw ProtocolError("region_comparison_report: mismatched region sets");
  RegionComparison rc;
  double delta = 0.0;
  for (std::size_t i = 0; i < regions.size(); ++i) {
    rc.rows.push_back({regions[i], acc_a[i], acc_b[i]});
    delta += (1.0 - acc_b[i]) - (1.0 - acc_a[i]);
  }
  rc.mean_error_rate_reduction = delta / static_cast<double>(regions.size());
  return rc;
}

// Aggregated per-protocol metrics, as written to the report CSVs.
struct EvaluationReport {
  std::string protocol;
  double mean_accuracy = 0.0;
  std::vector<double> per_fold;
  double accuracy_std = 0.0;
  std::vector<RocPoint> roc;
  double rank1 = 0.0;
  double dir = 0.0;
  double far_setting = 0.0;
};

// ---- CSV emission; all floats use %.17g so reruns are byte-identical ----

inline void write_verification_csv(const std::string& path,
                                   const VerificationOutcome& v) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "fold,accuracy\n";
  for (std::size_t f = 0; f < v.per_fold.size(); ++f)
    out << f << "," << detail::fmt_g17(v.per_fold[f]) << "\n";
  out << "mean," << detail::fmt_g17(v.mean) << "\n";
  out << "std_population," << detail::fmt_g17(v.stddev) << "\n";
}

inline void write_roc_csv(const std::string& path,
                          const std::vector<RocPoint>& roc) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "far,tar\n";
  for (const auto& p : roc)
    out << detail::fmt_g17(p.far) << "," << detail::fmt_g17(p.tar) << "\n";
}

inline void write_identification_csv(const std::string& path, double rank1,
                                     double dir, double far) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "metric,value\n";
  out << "rank1," << detail::fmt_g17(rank1) << "\n";
  out << "dir," << detail::fmt_g17(dir) << "\n";
  out << "far," << detail::fmt_g17(far) << "\n";
}

inline void write_region_comparison_csv(const std::string& path,
                                        const RegionComparison& rc) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "region,acc_a,acc_b\n";
  for (const auto& r : rc.rows)
    out << r.region << "," << detail::fmt_g17(r.acc_a) << ","
        << detail::fmt_g17(r.acc_b) << "\n";
  out << "mean_error_rate_reduction,"
      << detail::fmt_g17(rc.mean_error_rate_reduction) << "\n";
}

}  // namespace did3
