#pragma once

#include <cstdint>

#include "sepsisrl/cohort.hpp"

namespace sepsisrl::cohort {

/// Parameters of the synthetic cohort generator. All randomness is derived
/// from (config, seed) deterministically. The generated dynamics are designed
/// so that (a) next-observation prediction is learnable, (b) knowing the
/// in-between action improves that prediction, and (c) a policy matching each
/// state's best dose bins achieves better outcomes than a uniform-random one.
struct SyntheticConfig {
  std::size_t n_traj = 2000;
  double mortality_rate = 0.06;
  double mean_length = 13.3;       // in [2, 20]
  std::uint64_t dynamics_seed = 7; // selects loadings/effect matrices

  // Dynamics shape knobs (defaults tuned for the desk-scale pipeline).
  double optimal_drift = 0.22;      // health gain per step under the best action
  double mismatch_penalty = 0.11;   // health loss per unit of bin distance from best
  double health_noise = 0.25;       // std of the health innovation
  double action_effect_scale = 0.6; // direct imprint of the previous action on features
  double feature_noise = 0.35;      // std of per-feature idiosyncratic innovations
  double near_optimal_prob = 0.7;   // behavior policy: weight of the guided component
  double survival_slope = 2.0;      // logistic slope of survival in final health
};

/// Returns the dose bins (vaso, fluid) the dynamics reward most at health h.
/// Exposed so tests and policy evaluations can compare against the planted
/// optimum.
int planted_best_action(double health);

Cohort generate_synthetic(const SyntheticConfig& config, std::uint64_t seed);

}  // namespace sepsisrl::cohort
