#pragma once
/// Off-policy evaluation: self-normalized weighted importance sampling over
/// logged trajectories, evaluation-curve post-processing (EMA smoothing and
/// aggregation across seeds), loss normalization, and curve export (CSV and
/// SVG). Bridges the learned Q-network and the cloned behavior policy into
/// per-trajectory probability records.

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "sepsisrl/cohort.hpp"
#include "sepsisrl/policy.hpp"
#include "sepsisrl/training.hpp"

namespace sepsisrl::eval {

/// Seeds used for the standard three-run experiment protocol.
inline constexpr std::array<std::uint64_t, 3> kDefaultSeeds{1234, 2020, 2025};

/// One logged trajectory reduced to what the importance-sampling estimator
/// needs: for every step, the probability each policy assigns to the action
/// actually taken, plus the terminal reward.
struct EvalTrajectory {
  std::vector<double> pi_e;  ///< evaluated-policy probability of the taken action
  std::vector<double> pi_b;  ///< behavior-policy probability of the taken action
  std::vector<int> actions;  ///< the logged actions themselves
  double reward = 0.0;       ///< terminal reward (+1 survival, -1 death)

  std::size_t length() const { return pi_e.size(); }
};

struct WisConfig {
  /// Discount applied to the terminal reward as gamma^(T-1).
  double gamma = 0.99;
  /// When false the return is the raw terminal reward regardless of length.
  bool discounted = true;
  /// Per-step clip bounds on the ratio pi_e/pi_b. They keep a single
  /// trajectory from absorbing all of the normalization mass.
  double ratio_floor = 1e-4;
  double ratio_ceiling = 1e4;
};

struct WisResult {
  double value = 0.0;
  /// Number of per-step ratios that hit a clip bound (0 means the clip
  /// bounds never mattered).
  std::size_t clipped_steps = 0;
};

/// Self-normalized weighted importance sampling. Each trajectory's weight is
/// the product of per-step probability ratios pi_e/pi_b (clipped to the
/// configured bounds); its return is gamma^(T-1) times the terminal reward.
/// Returns sum(w*G)/sum(w) together with the clip count.
WisResult wis_detailed(const std::vector<EvalTrajectory>& trajectories,
                       const WisConfig& config = {});

/// Convenience overload returning just the estimate.
double wis(const std::vector<EvalTrajectory>& trajectories,
           const WisConfig& config = {});

/// Turns greedy constrained action selection into a stochastic policy so
/// importance ratios stay finite: the selected action receives 1-epsilon and
/// every other action epsilon/24. Selection uses the same eligibility rule as
/// policy training (behavior-probability ratio at least tau).
std::vector<double> soften_policy(const std::vector<double>& q_values,
                                  const std::vector<double>& behavior_probs,
                                  double tau, double epsilon = 0.01);

/// Exponential moving average with s_0 = x_0 and
/// s_t = alpha*x_t + (1-alpha)*s_{t-1}.
std::vector<double> ema(const std::vector<double>& series, double alpha = 0.1);

struct SeedAggregate {
  std::vector<double> mean;
  std::vector<double> std_dev;  ///< population standard deviation
};

/// Pointwise mean and population standard deviation across equal-length
/// curves (one per seed).
SeedAggregate aggregate_seeds(const std::vector<std::vector<double>>& curves);

/// Converts a summed next-step prediction loss into a per-feature scale by
/// dividing by (mean trajectory length 13.3) * obs_dim, so runs with
/// different observation widths are comparable.
double normalize_loss(double avg_trajectory_loss, std::size_t obs_dim);

/// A multi-seed evaluation curve: raw per-seed scores, their EMA-smoothed
/// versions, and the pointwise mean/std of the smoothed curves.
struct EvalCurve {
  std::vector<std::size_t> iterations;
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<double>> raw;       ///< [seed][point]
  std::vector<std::vector<double>> smoothed;  ///< EMA of each row of `raw`
  std::vector<double> mean;                   ///< across seeds, of smoothed
  std::vector<double> std_dev;                ///< population std, of smoothed
};

/// Smooths each seed's score series with ema(alpha) and aggregates.
EvalCurve make_eval_curve(std::vector<std::size_t> iterations,
                          std::vector<std::uint64_t> seeds,
                          std::vector<std::vector<double>> per_seed_scores,
                          double alpha = 0.1);

struct WisEvaluatorConfig {
  double tau = 0.3;       ///< eligibility threshold for action selection
  double epsilon = 0.01;  ///< evaluated-policy softening
  WisConfig wis;
};

/// Builds one probability record per trajectory for the learned policy:
/// pi_e comes from softened constrained selection over Q-values on the
/// latent states, pi_b from the cloned behavior policy on the raw
/// observations. The latent and raw views must be aligned trajectory for
/// trajectory and step for step.
std::vector<EvalTrajectory> policy_eval_trajectories(
    const policy::DbcqModel& model, const policy::BcModel& behavior,
    const train::LatentDataset& latents, const cohort::Cohort& raw,
    const WisEvaluatorConfig& config = {});

/// The same records with the evaluated policy replaced by uniform-random
/// action choice (probability 1/25 everywhere). Baseline for curve deltas.
std::vector<EvalTrajectory> uniform_eval_trajectories(
    const policy::BcModel& behavior, const cohort::Cohort& raw);

/// wis(policy_eval_trajectories(...)) in one call.
double wis_evaluator(const policy::DbcqModel& model,
                     const policy::BcModel& behavior,
                     const train::LatentDataset& latents,
                     const cohort::Cohort& raw,
                     const WisEvaluatorConfig& config = {});

/// CSV export: header `iteration,mean,std,seed_<k>...`, one row per point,
/// seed columns holding the smoothed series.
void write_curve_csv(const std::string& path, const EvalCurve& curve);

/// Self-contained SVG line plot: per-seed smoothed curves, their mean, and a
/// shaded band of one population standard deviation. A pure function of the
/// curve data, so regenerating from the same values is byte-identical.
void write_curve_svg(const std::string& path, const EvalCurve& curve,
                     const std::string& title);

}  // namespace sepsisrl::eval
