#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "sepsisrl/adam.hpp"
#include "sepsisrl/cohort.hpp"
#include "sepsisrl/params.hpp"
#include "sepsisrl/rng.hpp"
#include "sepsisrl/tape.hpp"
#include "sepsisrl/tensor.hpp"
#include "sepsisrl/training.hpp"

namespace sepsisrl::policy {

inline constexpr std::size_t kActionCount = 25;

// ---------------------------------------------------------------------------
// Behavior cloning on raw observations
// ---------------------------------------------------------------------------

struct BcConfig {
  std::size_t obs_dim = 38;
  std::size_t hidden = 128;
  std::size_t epochs = 5000;  // reference scale; desk runs use far fewer
  double learning_rate = 1e-4;
  double weight_decay = 0.1;
  std::size_t batch_size = 128;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  std::uint64_t seed = 0;
};

/// One row per timestep: full observation (invariant then variant features)
/// and the action taken there.
struct BcDataset {
  Tensor obs;                       // n x obs_dim
  std::vector<std::size_t> labels;  // n actions in [0, 25)

  std::size_t size() const { return labels.size(); }
};

BcDataset build_bc_dataset(const cohort::Cohort& cohort);

/// Classifier (obs_dim,hidden),(hidden,hidden),(hidden,25) with linear ->
/// batch-norm -> ReLU hidden blocks and a zero-initialized linear head, so
/// the untrained model is exactly uniform (cross-entropy ln 25).
struct BcModel {
  BcConfig cfg;
  ParamSet params;
  BatchNormState bn1{1}, bn2{1};

  static BcModel create(const BcConfig& cfg, Rng& rng);
  BcModel(const BcModel&) = delete;
  BcModel& operator=(const BcModel&) = delete;
  BcModel(BcModel&&) = default;
  BcModel& operator=(BcModel&&) = default;

  /// Training-mode logits (batch statistics; updates running statistics).
  Tape::NodeId logits_train(Tape& t, Tape::NodeId inputs);
  /// Inference-mode logits from frozen running statistics.
  Tensor logits_eval(const Tensor& inputs) const;

 private:
  BcModel() = default;
  Param *w1_ = nullptr, *b1_ = nullptr, *g1_ = nullptr, *be1_ = nullptr;
  Param *w2_ = nullptr, *b2_ = nullptr, *g2_ = nullptr, *be2_ = nullptr;
  Param *w3_ = nullptr, *b3_ = nullptr;
};

struct BcTrainResult {
  BcModel model;
  double initial_loss = 0.0;       // full-dataset eval-mode loss before training
  std::vector<double> loss;        // per-epoch mean batch cross-entropy
  bool degenerate_labels = false;  // all labels identical (warned, still trained)
};

/// Cross-entropy imitation of the logged actions with Adam (L2 weight decay).
/// Deterministic given (data, config). Throws NumericError on divergence.
BcTrainResult train_behavior_cloning(const BcDataset& data, const BcConfig& cfg);

/// Eval-mode top-1 accuracy.
double bc_accuracy(const BcModel& model, const BcDataset& data);

/// Eval-mode action distribution with every probability floored at 1e-6 and
/// renormalized, keeping importance ratios finite.
std::vector<double> bc_probs(const BcModel& model, const std::vector<double>& obs);

/// The same distribution without the floor (argmax reference for tests).
std::vector<double> bc_probs_unfloored(const BcModel& model,
                                       const std::vector<double>& obs);

// ---------------------------------------------------------------------------
// Discrete batch-constrained Q-learning on latent transitions
// ---------------------------------------------------------------------------

/// Three-layer perceptron (in,hidden),(hidden,hidden),(hidden,out) with ReLU
/// hidden activations, used for both the Q-networks and the latent behavior
/// head.
struct MlpHead {
  ParamSet params;

  static MlpHead create(std::size_t in_dim, std::size_t hidden, std::size_t out_dim,
                        Rng& rng);
  MlpHead(const MlpHead&) = delete;
  MlpHead& operator=(const MlpHead&) = delete;
  MlpHead(MlpHead&&) = default;
  MlpHead& operator=(MlpHead&&) = default;

  Tape::NodeId forward(Tape& t, Tape::NodeId inputs) const;
  Tensor forward_values(const Tensor& inputs) const;

 private:
  MlpHead() = default;
  Param *w1_ = nullptr, *b1_ = nullptr;
  Param *w2_ = nullptr, *b2_ = nullptr;
  Param *w3_ = nullptr, *b3_ = nullptr;
};

/// target <- (1 - c) * target + c * online, parameter by parameter.
void polyak_update(MlpHead& target, const MlpHead& online, double c);

struct DbcqConfig {
  double tau = 0.3;                // eligibility threshold on p(a)/max p
  double gamma = 0.99;
  double polyak = 0.01;
  std::size_t target_update_freq = 1;  // steps between Polyak updates
  double learning_rate = 1e-3;
  std::size_t iterations = 50000;  // desk default; reference scale is 1e6
  std::size_t eval_period = 500;
  std::size_t batch_size = 128;
  std::size_t latent = 64;
  std::size_t hidden = 64;
  std::uint64_t seed = 0;
};

struct DbcqModel {
  MlpHead q_online;
  MlpHead q_target;   // Polyak trail of q_online
  MlpHead behavior;   // latent behavior head (cross-entropy on latents)

  static DbcqModel create(const DbcqConfig& cfg, Rng& rng);
};

/// Plain softmax of the behavior head's logits at one latent state.
std::vector<double> latent_behavior_probs(const DbcqModel& model,
                                          const std::vector<double>& s);

/// Batch-constrained greedy action: argmax of q over the eligible set
/// E = {a : behavior_probs[a] / max behavior_probs >= tau}, ties resolved to
/// the lowest index. E always contains the behavior argmax.
int dbcq_select_action(const std::vector<double>& q_values,
                       const std::vector<double>& behavior_probs, double tau);

/// Bellman targets y_i = r_i + (1 - done_i) * gamma * Q_target(s'_i)[a'_i]
/// with a' chosen by dbcq_select_action under the online Q and behavior head.
std::vector<double> dbcq_targets(const std::vector<const train::LatentTransition*>& batch,
                                 const DbcqModel& model, const DbcqConfig& cfg);

struct DbcqStepResult {
  double td_loss = 0.0;  // mean Huber (delta = 1) on the chosen-action values
  double ce_loss = 0.0;  // behavior-head cross-entropy on the same batch
};

/// One optimization step: Huber TD update of the online Q, cross-entropy
/// update of the behavior head, then a Polyak target update (at the
/// configured frequency, counted by opt_q.steps_taken()).
DbcqStepResult dbcq_train_step(const std::vector<const train::LatentTransition*>& batch,
                               DbcqModel& model, const DbcqConfig& cfg, Adam& opt_q,
                               Adam& opt_b);

struct DbcqEvalPoint {
  std::size_t iteration = 0;
  double score = 0.0;         // evaluator output
  double mean_td_loss = 0.0;  // mean TD loss since the previous point
};

struct DbcqResult {
  DbcqModel model;
  std::vector<DbcqEvalPoint> curve;
};

using DbcqEvaluator = std::function<double(const DbcqModel&)>;

/// Full training loop over uniformly resampled batches; invokes the
/// evaluator every eval_period iterations. Deterministic given (data,
/// config). Throws NumericError on divergence.
DbcqResult dbcq_train(const std::vector<train::LatentTransition>& transitions,
                      const DbcqConfig& cfg, const DbcqEvaluator& evaluator);

}  // namespace sepsisrl::policy
