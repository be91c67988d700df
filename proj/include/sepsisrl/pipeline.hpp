#pragma once
/// Run configuration and the pipeline stages behind the command-line
/// interface. Every stage reads its inputs from the run directory, writes
/// its artifacts back there, and records a manifest (resolved config
/// snapshot, content hashes of everything read and written, timings) so a
/// run can be audited and any stage re-run in isolation. Stages are
/// deterministic: identical config, seed, and inputs produce bitwise
/// identical checkpoints, JSONL, and CSV artifacts.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sepsisrl/cohort.hpp"
#include "sepsisrl/evaluation.hpp"
#include "sepsisrl/policy.hpp"
#include "sepsisrl/synthetic.hpp"
#include "sepsisrl/toml.hpp"
#include "sepsisrl/training.hpp"

namespace sepsisrl::cli {

struct RunConfig {
  // [paths]
  std::string out_dir = "runs/desk";
  /// Optional explicit cohort CSV; empty means <out_dir>/cohort.csv.
  std::string cohort_csv;

  // [cohort]
  cohort::SyntheticConfig synthetic;
  std::uint64_t cohort_seed = 7;
  double train_frac = 0.7;
  double val_frac = 0.15;
  std::uint64_t split_seed = 13;

  // [encoder] — feature grouping follows the encoder kind: the flat encoder
  // uses the flat grouping, graph encoders the graph grouping.
  train::ReprTrainConfig repr;
  bool untrained_encoder = false;
  /// Non-empty grids switch train-encoder into sweep mode over the cross
  /// product (f_out x n_conv).
  std::vector<std::size_t> sweep_f_out;
  std::vector<std::size_t> sweep_n_conv;

  // [bc] — obs_dim is derived from the schema at stage time.
  policy::BcConfig bc;

  // [policy] — latent width is derived from the encoder at stage time; seed
  // comes from the [run] seeds list, one training run per seed.
  policy::DbcqConfig dbcq;

  // [wis]
  eval::WisEvaluatorConfig wis;

  // [run]
  std::vector<std::uint64_t> seeds;
  bool desk_scale = false;
};

/// Command-line flags layered on top of the config file, one key each.
struct CliOverrides {
  std::optional<std::string> out_dir;
  std::optional<std::vector<std::uint64_t>> seeds;
  std::optional<std::string> encoder_kind;  // "ae" | "sage" | "gatv2"
  bool desk_scale = false;
  bool untrained_encoder = false;
  bool no_action_injection = false;
};

/// Built-in defaults (graph encoder, desk-suitable sizes, seeds 1234/2020/2025).
RunConfig default_run_config();

/// Binds a parsed TOML table, rejecting unknown keys. `encoder_kind_override`
/// takes effect before encoder defaults are resolved, so switching the kind
/// also switches to that kind's default epochs and learning rate unless the
/// file pins them.
RunConfig run_config_from_toml(const toml::Table& table,
                               const std::optional<std::string>& encoder_kind_override = {});

/// Reads the config file (optional) and applies flag overrides.
RunConfig load_run_config(const std::string& config_path, const CliOverrides& overrides);

/// Overrides iteration/epoch counts with the desk defaults: 2000
/// trajectories, 50 encoder epochs, 25 cloning epochs, 50k Q-learning
/// iterations evaluated every 500.
void apply_desk_scale(RunConfig& cfg);

void validate_run_config(const RunConfig& cfg);

/// Canonical JSON snapshot of a resolved config, and its SHA-256.
std::string config_json(const RunConfig& cfg);
std::string config_hash(const RunConfig& cfg);

/// Latent-trajectory persistence (JSON header + little-endian doubles).
void save_latents(const std::string& path, const train::LatentDataset& data);
train::LatentDataset load_latents(const std::string& path);

/// Rebuilds a curve from its CSV export; exact since values are written with
/// round-trip precision. The plot stage is a pure function of this.
eval::EvalCurve read_curve_csv(const std::string& path);

// Pipeline stages (one per subcommand).
void stage_generate(const RunConfig& cfg);
void stage_ingest(const RunConfig& cfg);
void stage_graph_check(const RunConfig& cfg);
void stage_train_encoder(const RunConfig& cfg);
void stage_encode(const RunConfig& cfg);
void stage_train_bc(const RunConfig& cfg);
void stage_train_policy(const RunConfig& cfg);
void stage_evaluate(const RunConfig& cfg);
void stage_plot(const RunConfig& cfg);
/// Chains every stage at the configured scale.
void stage_reproduce(const RunConfig& cfg);

}  // namespace sepsisrl::cli
