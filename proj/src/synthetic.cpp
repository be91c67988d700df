#include "sepsisrl/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

#include "sepsisrl/rng.hpp"

namespace sepsisrl::cohort {

namespace {

constexpr double kArCoefficient = 0.8;      // persistence of per-feature noise
constexpr double kHealthLoading = 0.7;      // how strongly health shows in features
constexpr double kBinJitterProb = 0.15;     // per-side probability of a ±1 bin slip

// Analytic quartiles of the Exp(1) dose distribution both drugs draw from.
const std::array<double, 3> kExpQuartiles = {-std::log(0.75), -std::log(0.5),
                                             -std::log(0.25)};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Treatment intensity called for at health h: 0 (healthy) .. 1 (critical).
double intensity(double health) {
  return std::clamp(0.5 - 0.35 * health, 0.0, 1.0);
}

int best_bin(double health) {
  return std::min(4, static_cast<int>(intensity(health) * 5.0));
}

// Inverse CDF of Exp(1), used to sample a dose inside a chosen quartile bin.
double exp_quantile(double p) { return -std::log1p(-p); }

double sample_dose_in_bin(int bin, Rng& rng) {
  if (bin == 0) return 0.0;
  // Stay strictly inside the bin's quantile range so the analytic edges
  // recover the intended bin exactly.
  const double lo = (bin - 1) * 0.25 + 0.01;
  const double hi = bin * 0.25 - 0.01;
  return exp_quantile(rng.uniform(lo, hi));
}

int jittered_bin(int target, Rng& rng) {
  const double u = rng.uniform();
  int b = target;
  if (u < kBinJitterProb) {
    b -= 1;
  } else if (u < 2.0 * kBinJitterProb) {
    b += 1;
  }
  return std::clamp(b, 0, 4);
}

}  // namespace

int planted_best_action(double health) {
  const int b = best_bin(health);
  return 5 * b + b;
}

Cohort generate_synthetic(const SyntheticConfig& config, std::uint64_t seed) {
  if (config.n_traj < 1) throw ConfigError("generator: n_traj must be >= 1");
  if (config.mortality_rate <= 0.0 || config.mortality_rate >= 1.0) {
    throw ConfigError("generator: mortality_rate must lie in (0, 1)");
  }
  if (config.mean_length < 2.0 || config.mean_length > 20.0) {
    throw ConfigError("generator: mean_length must lie in [2, 20]");
  }

  Cohort cohort;
  cohort.schema = FeatureSchema::default_schema(EncoderMode::kGnn);
  QuartileEdges edges;
  edges.vaso = kExpQuartiles;
  edges.fluid = kExpQuartiles;
  cohort.quartile_edges = edges;

  const std::size_t nv = cohort.schema.variant_count();

  // Dynamics parameters are drawn once from their own seed so cohorts with
  // different sampling seeds share the same underlying process.
  Rng dyn(derive_seed(config.dynamics_seed, "dynamics"));
  std::vector<double> baseline(nv), loading(nv);
  for (double& x : baseline) x = dyn.normal();
  for (double& x : loading) x = kHealthLoading * dyn.normal();
  std::vector<double> action_imprint(nv * kActionCount);
  for (double& x : action_imprint) x = config.action_effect_scale * dyn.normal();

  const double length_p = (config.mean_length - 2.0) / 18.0;

  std::vector<double> final_health(config.n_traj);
  cohort.trajectories.resize(config.n_traj);

  const std::uint64_t traj_stream = derive_seed(seed, "synthetic-trajectories");
  for (std::size_t k = 0; k < config.n_traj; ++k) {
    Rng rng(derive_seed(traj_stream, k, 0));
    Trajectory& traj = cohort.trajectories[k];
    char idbuf[32];
    std::snprintf(idbuf, sizeof idbuf, "synth-%06zu", k);
    traj.id = idbuf;

    const std::size_t T = 2 + static_cast<std::size_t>(rng.binomial(18, length_p));

    // Inert demographics: present in every observation, untouched by the
    // dynamics so they cannot leak outcome information.
    traj.invariant_obs = {
        rng.bernoulli(0.55) ? 1.0 : 0.0,
        std::clamp(rng.normal(65.0, 15.0), 18.0, 95.0),
        rng.bernoulli(0.15) ? 1.0 : 0.0,
        rng.bernoulli(0.4) ? 1.0 : 0.0,
    };

    double health = rng.normal();
    std::vector<double> ar_noise(nv, 0.0);
    int prev_action = -1;

    traj.steps.reserve(T);
    traj.actions.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
      for (double& e : ar_noise) {
        e = kArCoefficient * e + config.feature_noise * rng.normal();
      }
      std::vector<double> obs(nv);
      for (std::size_t i = 0; i < nv; ++i) {
        obs[i] = baseline[i] + loading[i] * health + ar_noise[i];
        if (prev_action >= 0) {
          obs[i] += action_imprint[i * kActionCount + static_cast<std::size_t>(prev_action)];
        }
      }
      traj.steps.push_back(std::move(obs));

      // Behavior policy: a guided component around the planted best bins,
      // mixed with a uniform-random component.
      const int v_star = best_bin(health);
      const int f_star = best_bin(health);
      int v_bin, f_bin;
      if (rng.bernoulli(config.near_optimal_prob)) {
        v_bin = jittered_bin(v_star, rng);
        f_bin = jittered_bin(f_star, rng);
      } else {
        v_bin = static_cast<int>(rng.below(5));
        f_bin = static_cast<int>(rng.below(5));
      }
      const double vaso_dose = sample_dose_in_bin(v_bin, rng);
      const double fluid_dose = sample_dose_in_bin(f_bin, rng);
      const int action = discretize_actions(vaso_dose, fluid_dose, edges);
      traj.actions.push_back(action);
      prev_action = action;

      const int v_eff = action / 5;
      const int f_eff = action % 5;
      const double mismatch = std::abs(v_eff - v_star) + std::abs(f_eff - f_star);
      health += config.optimal_drift - config.mismatch_penalty * mismatch +
                config.health_noise * rng.normal();
    }
    final_health[k] = health;
  }

  // Calibrate the survival threshold so the cohort's expected mortality hits
  // the configured rate, then draw outcomes from a dedicated stream.
  double lo = *std::min_element(final_health.begin(), final_health.end()) - 30.0;
  double hi = *std::max_element(final_health.begin(), final_health.end()) + 30.0;
  const double target_survival = 1.0 - config.mortality_rate;
  const auto mean_survival = [&](double theta) {
    double acc = 0.0;
    for (double h : final_health) acc += sigmoid(config.survival_slope * (h - theta));
    return acc / static_cast<double>(final_health.size());
  };
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (mean_survival(mid) > target_survival) {
      lo = mid;  // survival too high -> raise the threshold
    } else {
      hi = mid;
    }
  }
  const double theta = 0.5 * (lo + hi);

  Rng outcome_rng(derive_seed(seed, "synthetic-outcomes"));
  for (std::size_t k = 0; k < config.n_traj; ++k) {
    const double p_survive = sigmoid(config.survival_slope * (final_health[k] - theta));
    cohort.trajectories[k].reward = outcome_rng.bernoulli(p_survive) ? 1 : -1;
  }
  return cohort;
}

}  // namespace sepsisrl::cohort
