// Command-line entry point: synthetic data generation, per-region training,
// ensemble feature extraction, PCA + Joint Bayesian fitting, and the three
// evaluation protocols, individually or as one pipeline run.

#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "did3/pipeline.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::int64_t seed = -1;  // <0: keep the config's seed
};

void add_common(CLI::App* sub, CommonArgs& args) {
  sub->add_option("--config", args.config_path, "pipeline config file")
      ->check(CLI::ExistingFile);
  sub->add_option("--out-dir", args.out_dir, "output directory");
  sub->add_option("--seed", args.seed, "override the config seed");
}

did3::PipelineConfig make_config(const CommonArgs& args) {
  did3::PipelineConfig cfg = args.config_path.empty()
                                 ? did3::PipelineConfig{}
                                 : did3::load_pipeline_config(args.config_path);
  if (args.seed >= 0) {
    cfg.seed = static_cast<std::uint64_t>(args.seed);
    cfg.dataset.seed = cfg.seed;
    cfg.train.seed = cfg.seed;
  }
  return cfg;
}

void print_summary(const did3::EvalSummary& s) {
  std::printf("verification_mean %.6f\n", s.verification.mean);
  std::printf("verification_std %.6f\n", s.verification.stddev);
  std::printf("rank1 %.6f\n", s.rank1);
  std::printf("dir %.6f (far %.4f)\n", s.dir, s.far);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DeepID3-style face verification and identification toolkit"};
  app.require_subcommand(1);

  CommonArgs args;
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  auto* train = app.add_subcommand("train", "train the per-region networks");
  auto* extract =
      app.add_subcommand("extract", "extract ensemble features for both splits");
  auto* fit = app.add_subcommand("fit-recognition",
                                 "fit PCA and the Joint Bayesian model");
  auto* eval = app.add_subcommand("eval", "run the evaluation protocols");
  auto* pipeline =
      app.add_subcommand("pipeline", "run every stage end to end");
  for (auto* sub : {gen, train, extract, fit, eval, pipeline})
    add_common(sub, args);

  CLI11_PARSE(app, argc, argv);

  try {
    const did3::PipelineConfig cfg = make_config(args);
    if (gen->parsed()) {
      did3::stage_gen_data(cfg, args.out_dir);
    } else if (train->parsed()) {
      did3::stage_train(cfg, args.out_dir);
    } else if (extract->parsed()) {
      did3::stage_extract(cfg, args.out_dir);
    } else if (fit->parsed()) {
      did3::stage_fit_recognition(cfg, args.out_dir);
    } else if (eval->parsed()) {
      print_summary(did3::stage_eval(cfg, args.out_dir));
      if (cfg.compare_families) did3::stage_compare(cfg, args.out_dir);
    } else if (pipeline->parsed()) {
      print_summary(did3::run_pipeline(cfg, args.out_dir));
    }
  } catch (const did3::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
