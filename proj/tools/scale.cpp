// Command-line driver: scale train | unlearn | eval | theory

#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "scale/error.hpp"
#include "scale/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Federated unlearning simulator"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  bool force = false;
  auto* train = app.add_subcommand("train", "train a federation and write a run directory");
  train->add_option("--config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  train->add_option("--out", out_dir, "run directory")->required();
  train->add_flag("--force", force, "overwrite a finished run");

  std::string run_dir, method = "scale", request;
  std::uint64_t seed = 0;
  auto* unlearn = app.add_subcommand("unlearn", "apply one unlearning method to a trained run");
  unlearn->add_option("--run", run_dir, "run directory")->required()->check(CLI::ExistingDirectory);
  unlearn->add_option("--method", method, "scale | retrain | uniform | grad_ascent");
  unlearn->add_option("--request", request, "client:<n> | class:<n>:<c1,c2> | sample:<n>:<frac>");
  auto* seed_opt = unlearn->add_option("--seed", seed, "unlearning seed (default: master seed)");
  unlearn->add_flag("--force", force, "overwrite this method's artifacts");

  std::string methods = "scale,retrain,uniform,grad_ascent";
  auto* eval = app.add_subcommand("eval", "score unlearned models and write comparison.csv");
  eval->add_option("--run", run_dir, "run directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--methods", methods, "comma-separated method list");
  eval->add_flag("--force", force, "allow comparing artifacts from different configs");

  scale::TheoryOptions theory_opt;
  std::string theory_out = "theory_report.json";
  auto* theory = app.add_subcommand("theory", "run the analytical oracles");
  theory->add_option("--samples", theory_opt.alignment_samples, "sampled correlations for the alignment bound");
  theory->add_option("--instances", theory_opt.instances, "random instances per structural check");
  theory->add_option("--seed", theory_opt.seed, "oracle seed");
  theory->add_option("--out", theory_out, "report path");
  theory->add_flag("--aoi-paper-literal", theory_opt.aoi_paper_literal,
                   "divide mean ages additionally by the layer count");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      const auto s = scale::cmd_train(config_path, out_dir, force);
      std::printf("trained: eval accuracy %.4f in %.2f s (config %s)\n", s.final_accuracy, s.wall_secs,
                  s.config_hash.c_str());
    } else if (*unlearn) {
      scale::UnlearnOptions opt;
      opt.method = scale::parse_method(method);
      if (!request.empty()) opt.request = request;
      if (seed_opt->count() > 0) opt.seed = seed;
      opt.force = force;
      const auto s = scale::cmd_unlearn(run_dir, opt);
      std::printf("%s: zeroed %zu, comm %.0f scalars, %.2f s\n", std::string(scale::to_string(s.method)).c_str(),
                  s.zeroed, s.comm_ct, s.wall_secs);
    } else if (*eval) {
      const auto ms = scale::parse_methods(methods);
      for (const auto& r : scale::cmd_eval(run_dir, ms, force)) {
        std::printf("%-12s ra %.4f  fa %.4f  fr %+.4f  aoi %.2f  comm %.0f\n", r.method.c_str(), r.ra, r.fa, r.fr,
                    r.mean_aoi_steps, r.comm_ct);
      }
    } else if (*theory) {
      const auto rep = scale::cmd_theory(theory_opt, theory_out);
      for (const auto& c : rep.at("claims"))
        std::printf("%-24s %s\n", c.at("claim_id").get<std::string>().c_str(),
                    c.at("status").get<std::string>().c_str());
      return rep.at("ok").get<bool>() ? 0 : 1;
    }
  } catch (const scale::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
