#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sepsisrl/cohort.hpp"
#include "sepsisrl/encoders.hpp"
#include "sepsisrl/rng.hpp"
#include "sepsisrl/tensor.hpp"
#include "sepsisrl/trajgraph.hpp"

namespace sepsisrl::train {

/// Which representation model the pipeline trains.
enum class EncoderKind { kFlat, kSage, kGatv2 };

std::string to_string(EncoderKind kind);
/// Accepts "ae", "sage", "gatv2" (case-sensitive); throws ConfigError.
EncoderKind parse_encoder_kind(const std::string& text);

struct ReprTrainConfig {
  EncoderKind kind = EncoderKind::kSage;
  std::size_t epochs = 200;
  double learning_rate = 1e-3;
  std::size_t batch_size = 128;
  std::size_t val_period = 10;  // epochs between validation passes
  bool action_injection = true;
  std::size_t latent = enc::kLatentSize;
  // Graph-encoder width and depth; ignored by the flat encoder.
  std::size_t f_out = 64;
  std::size_t n_conv = 2;
  std::uint64_t seed = 0;

  /// Flat: 600 epochs at 5e-4. Graph: 200 epochs at 1e-3, with depth 2 for
  /// the mean aggregator and 1 for the attention aggregator.
  static ReprTrainConfig defaults_for(EncoderKind kind);
};

/// One encoder (of the configured kind) plus the shared next-observation
/// decoder. Move-only: parameter sets pin their storage.
struct ReprModel {
  EncoderKind kind = EncoderKind::kFlat;
  std::optional<enc::AeEncoder> flat;
  std::optional<enc::GnnEncoder> gnn;
  std::optional<enc::Decoder> decoder;

  static ReprModel create(const ReprTrainConfig& cfg,
                          const cohort::FeatureSchema& schema, Rng& rng);

  std::vector<Param*> all_params();
  std::vector<const Param*> all_params() const;
  std::size_t latent_size() const;
};

/// Values of a parameter list, in list order.
using ParamSnapshot = std::vector<Tensor>;

ParamSnapshot snapshot_params(const std::vector<Param*>& params);
void restore_params(const std::vector<Param*>& params, const ParamSnapshot& snap);

/// Supervised next-step-prediction view of a cohort. Row r is (trajectory i,
/// step t) for t in [1, T_i - 1]; rows are grouped by trajectory in cohort
/// order with ascending t. The final step of each trajectory has no
/// next-observation target and carries no row.
struct ReprDataset {
  std::size_t traj_count = 0;
  Tensor targets;          // rows x variant_dim: the next variant observation
  Tensor decoder_actions;  // rows x 25: one-hot of the current action (zeros
                           // when action injection is disabled)
  std::vector<std::pair<std::size_t, std::size_t>> traj_rows;  // [begin, end)
  Tensor flat_inputs;      // rows x (variant_dim + 25); flat kind only
  std::vector<std::vector<graph::Graph>> snapshots;  // graph kinds: g_1..g_{T-1}

  std::size_t row_count() const { return traj_rows.empty() ? 0 : traj_rows.back().second; }
};

/// The cohort must already carry the grouping matching the kind (flat kinds
/// require flat grouping, graph kinds graph grouping) and any feature
/// standardization the caller wants encoded.
ReprDataset build_repr_dataset(const cohort::Cohort& cohort, EncoderKind kind,
                               bool action_injection);

struct LossCurve {
  std::vector<double> train;             // per epoch, 1-based epochs
  std::vector<std::size_t> val_epochs;   // 0, p, 2p, ..., epochs
  std::vector<double> val;               // average trajectory loss on the val split
  std::vector<double> val_smoothed;      // running mean over the last 10 points
  std::size_t best_index = 0;            // index into val_* minimizing val_smoothed
};

struct ReprTrainResult {
  ReprModel model;       // final-epoch parameters
  ParamSnapshot best;    // parameters at the best smoothed-validation point
  LossCurve curve;
};

/// Joint encoder/decoder training on next-observation prediction. Loss units
/// everywhere: trajectory loss = sum of per-step half-squared-error losses;
/// reported value = batch loss / trajectories in the batch, averaged over
/// batches (validation: total loss / validation trajectories). Deterministic
/// given (config, data, seed). Throws NumericError on divergence.
ReprTrainResult train_autoencoder(const cohort::SplitResult& split,
                                  const ReprTrainConfig& cfg);

/// Average trajectory loss of a model over a dataset (forward only).
double evaluate_repr_loss(const ReprModel& model, const ReprDataset& ds,
                          std::size_t batch_size);

/// One trajectory encoded step-by-step: latent l_t for every t in [1, T],
/// the action taken at t, and the terminal flag/reward at t = T.
struct LatentStep {
  std::vector<double> latent;
  int action = 0;
  double reward = 0.0;
  bool done = false;
};

struct LatentTrajectory {
  std::string id;
  std::vector<LatentStep> steps;
};

struct LatentDataset {
  std::size_t latent_dim = 0;
  std::vector<LatentTrajectory> trajectories;
};

/// Graph kinds encode the prefix snapshot g_t per step; the flat kind encodes
/// (variant obs, previous action). Deterministic.
LatentDataset encode_dataset(const cohort::Cohort& cohort, const ReprModel& model);

/// (s, a, r, s_next, done) tuple over latent states. Terminal transitions
/// carry a zero next state.
struct LatentTransition {
  std::vector<double> s;
  int a = 0;
  double r = 0.0;
  std::vector<double> s_next;
  bool done = false;
};

/// A length-T trajectory yields T transitions: T-1 in-trajectory plus one
/// terminal. Rewards are nonzero only on terminal transitions.
std::vector<LatentTransition> flatten_transitions(const LatentDataset& ds);

struct SweepEntry {
  std::size_t f_out = 0;
  std::size_t n_conv = 0;
  LossCurve curve;
};

struct SweepResult {
  std::vector<SweepEntry> runs;  // grid order
  std::size_t best_index = 0;
  ReprTrainConfig best_config;
};

/// Trains one run per (f_out, n_conv) grid entry; best = lowest final
/// smoothed validation loss, ties broken by smaller f_out then smaller
/// n_conv. Throws ConfigError on an empty grid.
SweepResult run_sweep(const cohort::SplitResult& split, const ReprTrainConfig& base,
                      const std::vector<std::pair<std::size_t, std::size_t>>& grid);

/// One record per line: {"phase":"train"|"val"|"val_smoothed","epoch":E,"loss":L},
/// in chronological order. Throws IoError.
void write_loss_jsonl(const std::filesystem::path& path, const LossCurve& curve);

/// Columns: f_out,n_conv,final_train_loss,final_val_loss,final_val_smoothed,selected.
void write_sweep_csv(const std::filesystem::path& path, const SweepResult& result);

}  // namespace sepsisrl::train
