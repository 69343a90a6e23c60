#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "did3/evaluation.hpp"
#include "did3/io/config_file.hpp"
#include "did3/io/weight_file.hpp"
#include "did3/net_builders.hpp"
#include "did3/recognition/ensemble.hpp"
#include "did3/recognition/joint_bayesian.hpp"
#include "did3/recognition/pca.hpp"
#include "did3/synthetic.hpp"
#include "did3/training.hpp"

namespace did3 {

struct PipelineConfig {
  std::uint64_t seed = 1;
  bool compare_families = false;

  SyntheticDatasetSpec dataset;

  std::array<std::size_t, 4> stage_widths{8, 16, 24, 32};
  std::size_t feature_dim = 64;
  double dropout = 0.3;
  double lambda = 0.05;

  TrainConfig train;

  std::size_t pca_dim = 64;
  std::size_t jb_iterations = 20;

  std::size_t verification_pairs = 600;
  std::size_t folds = 10;
  double dir_far = 0.10;
};

inline PipelineConfig parse_pipeline_config(ConfigFile& cf) {
  PipelineConfig cfg;
  cfg.seed = static_cast<std::uint64_t>(
      cf.get_int("pipeline.seed", static_cast<std::int64_t>(cfg.seed)));
  cfg.compare_families =
      cf.get_bool("pipeline.compare_families", cfg.compare_families);

  auto& ds = cfg.dataset;
  ds.num_train_identities = static_cast<std::size_t>(cf.get_int(
      "dataset.train_identities", static_cast<std::int64_t>(ds.num_train_identities)));
  ds.num_test_identities = static_cast<std::size_t>(cf.get_int(
      "dataset.test_identities", static_cast<std::int64_t>(ds.num_test_identities)));
  ds.images_per_identity = static_cast<std::size_t>(cf.get_int(
      "dataset.images_per_identity", static_cast<std::int64_t>(ds.images_per_identity)));
  ds.canvas = static_cast<std::size_t>(
      cf.get_int("dataset.canvas", static_cast<std::int64_t>(ds.canvas)));
  ds.translation_px = static_cast<std::size_t>(cf.get_int(
      "dataset.translation_px", static_cast<std::int64_t>(ds.translation_px)));
  ds.brightness_delta =
      cf.get_double("dataset.brightness_delta", ds.brightness_delta);
  ds.noise_std = cf.get_double("dataset.noise_std", ds.noise_std);

  const std::size_t region_count =
      static_cast<std::size_t>(cf.get_int("regions.count", 0));
  for (std::size_t i = 0; i < region_count; ++i) {
    const std::string key = "regions.r" + std::to_string(i);
    const std::string value = cf.get_string(key, "");
    if (value.empty())
      throw ConfigError("config: [regions] count = " +
                        std::to_string(region_count) + " but '" + key +
                        "' is missing");
    Region r;
    unsigned long x, y, w, h, scale;
    if (std::sscanf(value.c_str(), "%lu,%lu,%lu,%lu,%lu", &x, &y, &w, &h,
                    &scale) != 5)
      throw ConfigError("config key '" + key +
                        "': expected 'x,y,w,h,scale', got '" + value + "'");
    r.x = x; r.y = y; r.w = w; r.h = h; r.scale = scale;
    ds.regions.push_back(r);
  }

  const auto widths = cf.get_int_list(
      "model.stage_widths",
      {static_cast<std::int64_t>(cfg.stage_widths[0]),
       static_cast<std::int64_t>(cfg.stage_widths[1]),
       static_cast<std::int64_t>(cfg.stage_widths[2]),
       static_cast<std::int64_t>(cfg.stage_widths[3])});
  if (widths.size() != 4)
    throw ConfigError("config key 'model.stage_widths': expected 4 values");
  for (std::size_t i = 0; i < 4; ++i) {
    if (widths[i] < 1)
      throw ConfigError("config key 'model.stage_widths': widths must be >= 1");
    cfg.stage_widths[i] = static_cast<std::size_t>(widths[i]);
  }
  cfg.feature_dim = static_cast<std::size_t>(cf.get_int(
      "model.feature_dim", static_cast<std::int64_t>(cfg.feature_dim)));
  cfg.dropout = cf.get_double("model.dropout", cfg.dropout);
  cfg.lambda = cf.get_double("model.lambda", cfg.lambda);

  auto& tr = cfg.train;
  tr.learning_rate = cf.get_double("train.learning_rate", tr.learning_rate);
  tr.lr_decay = cf.get_double("train.lr_decay", tr.lr_decay);
  tr.momentum = cf.get_double("train.momentum", tr.momentum);
  tr.weight_decay = cf.get_double("train.weight_decay", tr.weight_decay);
  tr.batch_pairs = static_cast<std::size_t>(cf.get_int(
      "train.batch_pairs", static_cast<std::int64_t>(tr.batch_pairs)));
  tr.epochs = static_cast<std::size_t>(
      cf.get_int("train.epochs", static_cast<std::int64_t>(tr.epochs)));
  tr.batches_per_epoch = static_cast<std::size_t>(cf.get_int(
      "train.batches_per_epoch", static_cast<std::int64_t>(tr.batches_per_epoch)));
  tr.genuine_fraction =
      cf.get_double("train.genuine_fraction", tr.genuine_fraction);

  cfg.pca_dim = static_cast<std::size_t>(
      cf.get_int("recognition.pca_dim", static_cast<std::int64_t>(cfg.pca_dim)));
  cfg.jb_iterations = static_cast<std::size_t>(cf.get_int(
      "recognition.jb_iterations", static_cast<std::int64_t>(cfg.jb_iterations)));

  cfg.verification_pairs = static_cast<std::size_t>(cf.get_int(
      "evaluation.verification_pairs",
      static_cast<std::int64_t>(cfg.verification_pairs)));
  cfg.folds = static_cast<std::size_t>(
      cf.get_int("evaluation.folds", static_cast<std::int64_t>(cfg.folds)));
  cfg.dir_far = cf.get_double("evaluation.dir_far", cfg.dir_far);

  cf.reject_unknown_keys();
  cfg.dataset.seed = cfg.seed;
  cfg.train.seed = cfg.seed;
  return cfg;
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
  ConfigFile cf = ConfigFile::parse_file(path);
  return parse_pipeline_config(cf);
}

// ---- ensemble entry bookkeeping -------------------------------------------

// Region r gets a DeepID3 net1 on the original crop and a net2 on the
// mirrored crop, so half the forward propagations come from each
// architecture.
struct EntryPlan {
  std::size_t region_index = 0;
  std::string arch;  // builder tag
  bool flip = false;

  std::string label() const {
    const std::string short_arch = arch == "deepid3_net1"   ? "net1"
                                   : arch == "deepid3_net2" ? "net2"
                                                            : "id2p";
    return "r" + std::to_string(region_index) + "_" + short_arch;
  }
};

inline std::vector<EntryPlan> ensemble_plan(std::size_t num_regions) {
  std::vector<EntryPlan> plan;
  for (std::size_t r = 0; r < num_regions; ++r) {
    plan.push_back({r, "deepid3_net1", false});
    plan.push_back({r, "deepid3_net2", true});
  }
  return plan;
}

namespace detail {

inline ScaleConfig entry_scale_config(const PipelineConfig& cfg,
                                      const Region& region) {
  ScaleConfig sc;
  sc.input_channels = 1;
  sc.input_h = region.input_h();
  sc.input_w = region.input_w();
  sc.stage_widths = cfg.stage_widths;
  sc.feature_dim = cfg.feature_dim;
  sc.num_identities = cfg.dataset.num_train_identities;
  sc.dropout_rate = cfg.dropout;
  sc.head_lambda = cfg.lambda;
  return sc;
}

inline std::uint64_t tagged_seed(std::uint64_t seed, std::uint64_t kind,
                                 std::uint64_t index) {
  return Rng(seed).derive((kind << 40) | index).seed();
}

inline LabeledDataset region_dataset(const LabeledDataset& full,
                                     const Region& region, bool flip,
                                     int region_id) {
  LabeledDataset out;
  out.region_id = region_id;
  out.identities = full.identities;
  out.images.reserve(full.size());
  for (const Tensor& img : full.images)
    out.images.push_back(region_view(img, region, flip));
  return out;
}

inline NetworkGraph load_entry_net(const PipelineConfig& cfg,
                                   const SyntheticDataset& ds,
                                   const EntryPlan& plan, std::size_t entry_idx,
                                   const std::string& dir) {
  NetworkGraph net = build_architecture(
      plan.arch, entry_scale_config(cfg, ds.regions[plan.region_index]),
      Rng(tagged_seed(cfg.seed, 3, entry_idx)));
  const std::string path = dir + "/net_" + plan.label() + ".did3";
  auto stored = load_weights_map(path);
  for (auto& [name, t] : net.params) {
    auto it = stored.find(name);
    if (it == stored.end())
      throw FormatError(path + ": missing parameter '" + name + "'");
    if (it->second.shape() != t.shape())
      throw FormatError(path + ": parameter '" + name + "' has shape " +
                        it->second.shape_string() + ", expected " +
                        t.shape_string());
    t = it->second;
  }
  return net;
}

struct FeatureSet {
  std::vector<Tensor> features;
  std::vector<std::size_t> labels;
};

inline void save_features(const std::string& path, const FeatureSet& fs) {
  const std::size_t n = fs.features.size(), d = fs.features[0].size();
  Tensor packed({n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) packed(i, j) = fs.features[i][j];
  Tensor labels({n});
  for (std::size_t i = 0; i < n; ++i)
    labels[i] = static_cast<double>(fs.labels[i]);
  save_weights(path, NamedTensors{{"features", packed}, {"labels", labels}});
}

inline FeatureSet load_features(const std::string& path) {
  auto m = load_weights_map(path);
  auto fit = m.find("features");
  auto lit = m.find("labels");
  if (fit == m.end() || lit == m.end())
    throw FormatError(path + ": missing 'features' or 'labels'");
  const Tensor& packed = fit->second;
  if (packed.rank() != 2) throw FormatError(path + ": features must be [N,D]");
  FeatureSet fs;
  const std::size_t n = packed.extent(0), d = packed.extent(1);
  if (lit->second.size() != n)
    throw FormatError(path + ": feature/label count mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    Tensor f({d});
    for (std::size_t j = 0; j < d; ++j) f[j] = packed(i, j);
    fs.features.push_back(std::move(f));
    fs.labels.push_back(static_cast<std::size_t>(lit->second[i]));
  }
  return fs;
}

// Evenly-folded verification pairs: each fold gets half genuine and half
// impostor pairs, sampled from the given split.
inline VerificationSet build_verification_pairs(
    const std::vector<Tensor>& features, const std::vector<std::size_t>& labels,
    std::size_t total_pairs, std::size_t folds, Rng rng) {
  if (folds < 2) throw ProtocolError("verification: need at least 2 folds");
  if (total_pairs % folds != 0 || (total_pairs / folds) % 2 != 0)
    throw ProtocolError(
        "verification: pair count must split into folds with equal genuine "
        "and impostor halves");
  std::size_t max_id = 0;
  for (std::size_t id : labels) max_id = std::max(max_id, id);
  std::vector<std::vector<std::size_t>> by_id(max_id + 1);
  for (std::size_t i = 0; i < labels.size(); ++i) by_id[labels[i]].push_back(i);
  std::vector<std::size_t> multi, present;
  for (std::size_t id = 0; id < by_id.size(); ++id) {
    if (by_id[id].empty()) continue;
    present.push_back(id);
    if (by_id[id].size() >= 2) multi.push_back(id);
  }
  if (multi.empty() || present.size() < 2)
    throw DataError("verification pairs: split cannot form both pair kinds");

  VerificationSet vs;
  vs.num_folds = folds;
  const std::size_t per_fold = total_pairs / folds;
  for (std::size_t f = 0; f < folds; ++f) {
    for (std::size_t k = 0; k < per_fold; ++k) {
      VerificationPair p;
      p.fold = f;
      p.same = k < per_fold / 2;
      if (p.same) {
        const auto& pool = by_id[multi[rng.uniform_index(multi.size())]];
        const std::size_t u = rng.uniform_index(pool.size());
        std::size_t v = rng.uniform_index(pool.size() - 1);
        if (v >= u) ++v;
        p.a = features[pool[u]];
        p.b = features[pool[v]];
      } else {
        const std::size_t ia = rng.uniform_index(present.size());
        std::size_t ib = rng.uniform_index(present.size() - 1);
        if (ib >= ia) ++ib;
        const auto& pa = by_id[present[ia]];
        const auto& pb = by_id[present[ib]];
        p.a = features[pa[rng.uniform_index(pa.size())]];
        p.b = features[pb[rng.uniform_index(pb.size())]];
      }
      vs.pairs.push_back(std::move(p));
    }
  }
  return vs;
}

template <typename Fn>
inline auto run_stage(const char* name, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error("stage " + std::string(name) + ": " + e.what());
  }
}

}  // namespace detail

// ---- pipeline stages (each reads its inputs from the output directory) ----

inline void stage_gen_data(const PipelineConfig& cfg, const std::string& dir) {
  detail::run_stage("gen-data", [&] {
    SyntheticDatasetSpec spec = cfg.dataset;
    spec.seed = cfg.seed;
    gen_dataset(spec, dir);
  });
}

inline void stage_train(const PipelineConfig& cfg, const std::string& dir) {
  detail::run_stage("train", [&] {
    const SyntheticDataset ds = load_dataset(dir);
    const auto plan = ensemble_plan(ds.regions.size());
    for (std::size_t e = 0; e < plan.size(); ++e) {
      const EntryPlan& p = plan[e];
      const Region& region = ds.regions[p.region_index];
      NetworkGraph net =
          build_architecture(p.arch, detail::entry_scale_config(cfg, region),
                             Rng(detail::tagged_seed(cfg.seed, 3, e)));
      const LabeledDataset data = detail::region_dataset(
          ds.train, region, p.flip, static_cast<int>(p.region_index));
      TrainConfig tc = cfg.train;
      tc.seed = detail::tagged_seed(cfg.seed, 4, e);
      const TrainHistory history = train(net, data, tc);
      save_weights(dir + "/net_" + p.label() + ".did3", net.params);
      write_training_log(dir + "/train_" + p.label() + ".log", history);
    }
  });
}

inline void stage_extract(const PipelineConfig& cfg, const std::string& dir) {
  detail::run_stage("extract", [&] {
    const SyntheticDataset ds = load_dataset(dir);
    const auto plan = ensemble_plan(ds.regions.size());
    std::vector<NetworkGraph> nets;
    nets.reserve(plan.size());
    for (std::size_t e = 0; e < plan.size(); ++e)
      nets.push_back(detail::load_entry_net(cfg, ds, plan[e], e, dir));

    EnsembleSpec spec;
    for (std::size_t e = 0; e < plan.size(); ++e)
      spec.entries.push_back(
          {ds.regions[plan[e].region_index], &nets[e], plan[e].flip});

    auto extract_split = [&](const LabeledDataset& split) {
      detail::FeatureSet fs;
      fs.labels = split.identities;
      fs.features.reserve(split.size());
      for (const Tensor& img : split.images)
        fs.features.push_back(ensemble_extract(spec, img));
      return fs;
    };
    detail::save_features(dir + "/features_train.did3", extract_split(ds.train));
    detail::save_features(dir + "/features_test.did3", extract_split(ds.test));
  });
}

inline void stage_fit_recognition(const PipelineConfig& cfg,
                                  const std::string& dir) {
  detail::run_stage("fit-recognition", [&] {
    const auto fs = detail::load_features(dir + "/features_train.did3");
    const PcaModel pca = pca_fit(fs.features, cfg.pca_dim);
    std::vector<Tensor> reduced;
    reduced.reserve(fs.features.size());
    for (const Tensor& f : fs.features) reduced.push_back(pca_transform(pca, f));
    const JointBayesianModel jb = jb_fit(reduced, fs.labels, cfg.jb_iterations);

    Tensor eigs({pca.eigenvalues.size()});
    for (std::size_t i = 0; i < eigs.size(); ++i) eigs[i] = pca.eigenvalues[i];
    save_weights(dir + "/recognition.did3",
                 NamedTensors{{"pca.mean", pca.mean},
                              {"pca.components", pca.components},
                              {"pca.eigenvalues", eigs},
                              {"jb.s_mu", jb.s_mu},
                              {"jb.s_eps", jb.s_eps}});
  });
}

struct EvalSummary {
  VerificationOutcome verification;
  double rank1 = 0.0;
  double dir = 0.0;
  double far = 0.0;
};

inline EvalSummary stage_eval(const PipelineConfig& cfg,
                              const std::string& dir) {
  return detail::run_stage("eval", [&] {
    const auto fs = detail::load_features(dir + "/features_test.did3");
    const auto model = load_weights_map(dir + "/recognition.did3");
    auto need = [&](const char* name) -> const Tensor& {
      auto it = model.find(name);
      if (it == model.end())
        throw FormatError(dir + "/recognition.did3: missing '" +
                          std::string(name) + "'");
      return it->second;
    };
    PcaModel pca;
    pca.mean = need("pca.mean");
    pca.components = need("pca.components");
    const Tensor& eigs = need("pca.eigenvalues");
    pca.eigenvalues.assign(eigs.data(), eigs.data() + eigs.size());
    JointBayesianModel jbm{need("jb.s_mu"), need("jb.s_eps")};
    const JbScorer jb(jbm);

    std::vector<Tensor> reduced;
    reduced.reserve(fs.features.size());
    for (const Tensor& f : fs.features) reduced.push_back(pca_transform(pca, f));

    const PairScorer scorer = [&jb](const Tensor& a, const Tensor& b) {
      return jb(a, b);
    };

    EvalSummary summary;
    const VerificationSet vs = detail::build_verification_pairs(
        reduced, fs.labels, cfg.verification_pairs, cfg.folds,
        Rng(detail::tagged_seed(cfg.seed, 5, 0)));
    summary.verification = verification_accuracy(vs, scorer);
    write_verification_csv(dir + "/verification.csv", summary.verification);

    std::vector<double> genuine_scores, impostor_scores;
    for (const auto& p : vs.pairs)
      (p.same ? genuine_scores : impostor_scores).push_back(scorer(p.a, p.b));
    write_roc_csv(dir + "/roc.csv", roc_curve(genuine_scores, impostor_scores));

    // closed set: one gallery image per held-out identity, rest are probes
    std::size_t max_id = 0;
    for (std::size_t id : fs.labels) max_id = std::max(max_id, id);
    std::vector<std::size_t> first_of(max_id + 1,
                                      std::numeric_limits<std::size_t>::max());
    for (std::size_t i = 0; i < fs.labels.size(); ++i)
      first_of[fs.labels[i]] = std::min(first_of[fs.labels[i]], i);

    IdentificationSet closed;
    for (std::size_t id = 0; id <= max_id; ++id)
      if (first_of[id] != std::numeric_limits<std::size_t>::max())
        closed.gallery.push_back({static_cast<int>(id), reduced[first_of[id]]});
    for (std::size_t i = 0; i < reduced.size(); ++i)
      if (first_of[fs.labels[i]] != i)
        closed.probes.push_back({static_cast<int>(fs.labels[i]), reduced[i]});
    summary.rank1 = rank1_closed_set(closed, scorer);

    // open set: enroll the first half of the identities; the others' images
    // become impostor probes
    const std::size_t n_ids = closed.gallery.size();
    const std::size_t n_enrolled = std::max<std::size_t>(1, n_ids / 2);
    IdentificationSet open;
    for (std::size_t k = 0; k < n_enrolled; ++k)
      open.gallery.push_back(closed.gallery[k]);
    for (std::size_t i = 0; i < reduced.size(); ++i) {
      const std::size_t id = fs.labels[i];
      if (id < n_enrolled) {
        if (first_of[id] != i)
          open.probes.push_back({static_cast<int>(id), reduced[i]});
      } else {
        open.probes.push_back({kImpostorId, reduced[i]});
      }
    }
    summary.far = cfg.dir_far;
    summary.dir = dir_at_far(open, scorer, cfg.dir_far);
    write_identification_csv(dir + "/identification.csv", summary.rank1,
                             summary.dir, summary.far);
    return summary;
  });
}

// Fig.-4-style harness: per-region verification accuracy of the deeper
// architecture (family A, the trained net1 ensemble members) against a
// DeepID2+ baseline trained here on the same regions (family B), scored by
// plain feature distance.
inline RegionComparison stage_compare(const PipelineConfig& cfg,
                                      const std::string& dir) {
  return detail::run_stage("compare", [&] {
    const SyntheticDataset ds = load_dataset(dir);
    const auto plan = ensemble_plan(ds.regions.size());

    std::vector<std::string> names;
    std::vector<double> acc_a, acc_b;
    for (std::size_t r = 0; r < ds.regions.size(); ++r) {
      const Region& region = ds.regions[r];
      const std::size_t entry = 2 * r;  // the net1 entry for this region

      NetworkGraph deep = detail::load_entry_net(cfg, ds, plan[entry], entry, dir);
      NetworkGraph baseline = build_architecture(
          "deepid2plus", detail::entry_scale_config(cfg, region),
          Rng(detail::tagged_seed(cfg.seed, 6, r)));
      {
        const LabeledDataset data = detail::region_dataset(
            ds.train, region, false, static_cast<int>(r));
        TrainConfig tc = cfg.train;
        tc.seed = detail::tagged_seed(cfg.seed, 7, r);
        const TrainHistory history = train(baseline, data, tc);
        save_weights(dir + "/net_r" + std::to_string(r) + "_id2p.did3",
                     baseline.params);
        write_training_log(dir + "/train_r" + std::to_string(r) + "_id2p.log",
                           history);
      }

      auto region_accuracy = [&](const NetworkGraph& net) {
        std::vector<Tensor> feats;
        feats.reserve(ds.test.size());
        for (const Tensor& img : ds.test.images)
          feats.push_back(extract_feature(net, region_view(img, region, false)));
        const VerificationSet vs = detail::build_verification_pairs(
            feats, ds.test.identities, cfg.verification_pairs, cfg.folds,
            Rng(detail::tagged_seed(cfg.seed, 8, 0)));
        return verification_accuracy(
                   vs, [](const Tensor& a, const Tensor& b) {
                     return -distance(a, b);
                   })
            .mean;
      };
      names.push_back("r" + std::to_string(r));
      acc_a.push_back(region_accuracy(deep));
      acc_b.push_back(region_accuracy(baseline));
    }
    const RegionComparison rc = region_comparison_report(names, acc_a, acc_b);
    write_region_comparison_csv(dir + "/region_comparison.csv", rc);
    return rc;
  });
}

inline EvalSummary run_pipeline(const PipelineConfig& cfg,
                                const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
  stage_gen_data(cfg, dir);
  stage_train(cfg, dir);
  stage_extract(cfg, dir);
  stage_fit_recognition(cfg, dir);
  EvalSummary summary = stage_eval(cfg, dir);
  if (cfg.compare_families) stage_compare(cfg, dir);
  return summary;
}

}  // namespace did3
