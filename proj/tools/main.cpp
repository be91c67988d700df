// sepsis-rl: end-to-end pipeline for graph-based offline reinforcement
// learning on ICU patient trajectories. Each subcommand runs one pipeline
// stage against a run directory; `reproduce` chains them all.

#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <omp.h>

#include "sepsisrl/errors.hpp"
#include "sepsisrl/pipeline.hpp"

namespace {

using sepsisrl::cli::RunConfig;

void configure_threads() {
  // SEPSIS_RL_THREADS pins the OpenMP pool; 0 or unset leaves the default.
  if (const char* env = std::getenv("SEPSIS_RL_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) omp_set_num_threads(n);
  }
}

}  // namespace

int main(int argc, char** argv) {
  configure_threads();

  CLI::App app{"offline reinforcement learning on ICU trajectories: synthetic cohorts,\n"
               "trajectory graphs, representation learning, constrained Q-learning, and\n"
               "importance-sampling evaluation"};
  app.require_subcommand(1);

  std::string config_path;
  sepsisrl::cli::CliOverrides overrides;
  std::vector<std::uint64_t> seed_list;
  std::string out_dir;
  std::string encoder_kind;

  app.add_option("--config", config_path, "TOML run configuration file")
      ->option_text("PATH");
  app.add_option("--out", out_dir, "run directory for artifacts (overrides [paths].out_dir)")
      ->option_text("DIR");
  app.add_option("--seed", seed_list,
                 "policy training seeds, comma separated (overrides [run].seeds)")
      ->delimiter(',')
      ->option_text("INT,...");
  app.add_option("--encoder", encoder_kind, "encoder kind (overrides [encoder].kind)")
      ->check(CLI::IsMember({"ae", "sage", "gatv2"}));
  app.add_flag("--desk-scale", overrides.desk_scale,
               "clamp iteration/epoch counts to sizes a laptop finishes in minutes");
  app.add_flag("--untrained-encoder", overrides.untrained_encoder,
               "encode with a randomly initialized encoder (ablation baseline)");
  app.add_flag("--no-action-injection", overrides.no_action_injection,
               "drop the current-action input from the decoder");

  const std::map<std::string, std::pair<const char*, void (*)(const RunConfig&)>> stages = {
      {"generate", {"sample a synthetic cohort and write it as CSV", sepsisrl::cli::stage_generate}},
      {"ingest", {"load and validate a cohort CSV, reporting summary statistics", sepsisrl::cli::stage_ingest}},
      {"graph-check", {"build every trajectory graph and prefix snapshot and verify invariants", sepsisrl::cli::stage_graph_check}},
      {"train-encoder", {"train the state encoder (optionally sweeping width/depth)", sepsisrl::cli::stage_train_encoder}},
      {"encode", {"encode all splits into latent trajectories", sepsisrl::cli::stage_encode}},
      {"train-bc", {"train the behavior-cloning policy on logged actions", sepsisrl::cli::stage_train_bc}},
      {"train-policy", {"train the constrained Q-learning policy, one run per seed", sepsisrl::cli::stage_train_policy}},
      {"evaluate", {"re-score saved policies with weighted importance sampling", sepsisrl::cli::stage_evaluate}},
      {"plot", {"regenerate the evaluation plot from its CSV", sepsisrl::cli::stage_plot}},
      {"reproduce", {"run every stage end to end", sepsisrl::cli::stage_reproduce}},
  };
  for (const auto& [name, stage] : stages) {
    auto* sub = app.add_subcommand(name, stage.first);
    sub->fallthrough();
  }

  CLI11_PARSE(app, argc, argv);

  if (!out_dir.empty()) overrides.out_dir = out_dir;
  if (!seed_list.empty()) overrides.seeds = seed_list;
  if (!encoder_kind.empty()) overrides.encoder_kind = encoder_kind;

  const std::string chosen = app.get_subcommands().front()->get_name();
  try {
    RunConfig cfg = sepsisrl::cli::load_run_config(config_path, overrides);
    stages.at(chosen).second(cfg);
    return sepsisrl::kExitOk;
  } catch (const sepsisrl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return sepsisrl::kExitConfig;
  } catch (const sepsisrl::DimensionError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return sepsisrl::kExitData;
  } catch (const sepsisrl::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return sepsisrl::kExitData;
  } catch (const sepsisrl::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return sepsisrl::kExitNumeric;
  } catch (const sepsisrl::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return sepsisrl::kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
