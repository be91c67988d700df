#include "sepsisrl/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "sepsisrl/rng.hpp"

namespace sepsisrl::cohort {

namespace {

const char* kInvariantDefaults[] = {"gender", "age", "re_admission", "mechvent"};

// Time-variant defaults in graph mode; in flat mode Weight_kg moves to the
// invariant group. The full source table lists more variables than the
// default width of 34; the schema is overridable for other subsets.
const char* kVariantDefaults[] = {
    "max_dose_vaso", "Weight_kg",     "GCS",        "HR",
    "SysBP",         "MeanBP",        "DiaBP",      "RR",
    "Temp_C",        "FiO2_1",        "Potassium",  "Sodium",
    "Chloride",      "Glucose",       "Magnesium",  "Calcium",
    "Hb",            "WBC_count",     "Platelets_count", "PTT",
    "PT",            "Arterial_pH",   "paO2",       "paCO2",
    "Arterial_BE",   "HCO3",          "Arterial_lactate", "SOFA",
    "SIRS",          "Shock_Index",   "PaO2_FiO2",  "cumulated_balance",
    "SpO2",          "BUN"};

}  // namespace

FeatureSchema FeatureSchema::default_schema(EncoderMode mode) {
  std::vector<std::string> inv(std::begin(kInvariantDefaults), std::end(kInvariantDefaults));
  std::vector<std::string> var(std::begin(kVariantDefaults), std::end(kVariantDefaults));
  if (mode == EncoderMode::kAe) {
    inv.push_back("Weight_kg");
    var.erase(std::find(var.begin(), var.end(), "Weight_kg"));
  }
  return from_names(mode, std::move(inv), std::move(var));
}

FeatureSchema FeatureSchema::from_names(EncoderMode mode, std::vector<std::string> invariant,
                                        std::vector<std::string> variant) {
  if (invariant.empty() || variant.empty()) {
    throw ConfigError("feature schema needs at least one name in each group");
  }
  std::set<std::string> seen;
  for (const auto& group : {&invariant, &variant}) {
    for (const auto& name : *group) {
      if (!seen.insert(name).second) {
        throw ConfigError("duplicate feature name in schema: " + name);
      }
    }
  }
  FeatureSchema s;
  s.mode = mode;
  s.invariant_names = std::move(invariant);
  s.variant_names = std::move(variant);
  return s;
}

void validate_trajectory(const Trajectory& traj, const FeatureSchema& schema,
                         bool allow_short) {
  const std::size_t T = traj.steps.size();
  const std::size_t min_len = allow_short ? 1 : 2;
  if (T < min_len || T > kMaxTrajectoryLength) {
    throw DataError("trajectory '" + traj.id + "' has length " + std::to_string(T) +
                    ", expected " + std::to_string(min_len) + ".." +
                    std::to_string(kMaxTrajectoryLength));
  }
  if (traj.invariant_obs.size() != schema.invariant_count()) {
    throw DataError("trajectory '" + traj.id + "': invariant width " +
                    std::to_string(traj.invariant_obs.size()) + " != schema " +
                    std::to_string(schema.invariant_count()));
  }
  for (const auto& step : traj.steps) {
    if (step.size() != schema.variant_count()) {
      throw DataError("trajectory '" + traj.id + "': step width " +
                      std::to_string(step.size()) + " != schema " +
                      std::to_string(schema.variant_count()));
    }
  }
  if (traj.actions.size() != T) {
    throw DataError("trajectory '" + traj.id + "': " + std::to_string(traj.actions.size()) +
                    " actions for " + std::to_string(T) + " steps");
  }
  for (int a : traj.actions) {
    if (a < 0 || a >= kActionCount) {
      throw DataError("trajectory '" + traj.id + "': action " + std::to_string(a) +
                      " outside [0, 24]");
    }
  }
  if (traj.reward != 1 && traj.reward != -1) {
    throw DataError("trajectory '" + traj.id + "': reward must be +1 or -1, got " +
                    std::to_string(traj.reward));
  }
}

void validate_cohort(const Cohort& cohort, bool allow_short) {
  std::set<std::string> ids;
  for (const Trajectory& t : cohort.trajectories) {
    validate_trajectory(t, cohort.schema, allow_short);
    if (!ids.insert(t.id).second) {
      throw DataError("duplicate trajectory id: " + t.id);
    }
  }
}

std::size_t filter_short(Cohort& cohort) {
  const std::size_t before = cohort.trajectories.size();
  std::erase_if(cohort.trajectories, [](const Trajectory& t) { return t.length() < 2; });
  return before - cohort.trajectories.size();
}

SplitResult stratified_split(const Cohort& cohort, std::array<double, 3> fractions,
                             std::uint64_t seed) {
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1");
  }
  // Group trajectory indices by outcome, preserving cohort order.
  std::vector<std::size_t> survivors, deaths;
  for (std::size_t i = 0; i < cohort.trajectories.size(); ++i) {
    (cohort.trajectories[i].reward == 1 ? survivors : deaths).push_back(i);
  }
  for (const auto* group : {&survivors, &deaths}) {
    if (group->size() < 3) {
      throw DataError("cohort too small to stratify: an outcome group has " +
                      std::to_string(group->size()) + " trajectories, need at least 3");
    }
  }

  SplitResult out;
  out.train.schema = out.val.schema = out.test.schema = cohort.schema;
  out.train.quartile_edges = out.val.quartile_edges = out.test.quartile_edges =
      cohort.quartile_edges;
  Cohort* splits[3] = {&out.train, &out.val, &out.test};

  Rng rng(derive_seed(seed, "stratified-split"));
  for (auto* group : {&survivors, &deaths}) {
    rng.shuffle(*group);
    // Largest-remainder allocation of the group across the three splits.
    const std::size_t n = group->size();
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> remainders{};
    std::size_t assigned = 0;
    for (int k = 0; k < 3; ++k) {
      const double ideal = fractions[k] * static_cast<double>(n);
      counts[k] = static_cast<std::size_t>(std::floor(ideal));
      remainders[k] = ideal - std::floor(ideal);
      assigned += counts[k];
    }
    std::array<int, 3> order = {0, 1, 2};
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return remainders[a] > remainders[b]; });
    for (std::size_t extra = 0; extra < n - assigned; ++extra) {
      counts[order[extra % 3]] += 1;
    }
    std::size_t cursor = 0;
    for (int k = 0; k < 3; ++k) {
      for (std::size_t j = 0; j < counts[k]; ++j) {
        splits[k]->trajectories.push_back(cohort.trajectories[(*group)[cursor++]]);
      }
    }
  }
  return out;
}

std::vector<Batch> make_batches(std::size_t trajectory_count, std::size_t b,
                                std::uint64_t seed, std::uint64_t epoch) {
  if (b == 0) throw ConfigError("batch size must be >= 1");
  if (trajectory_count == 0) throw DataError("cannot batch an empty split");
  std::vector<std::size_t> order(trajectory_count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(derive_seed(seed, "batches"), epoch, 0));
  rng.shuffle(order);

  std::vector<Batch> batches;
  batches.reserve((trajectory_count + b - 1) / b);
  for (std::size_t start = 0; start < trajectory_count; start += b) {
    Batch batch;
    const std::size_t end = std::min(start + b, trajectory_count);
    batch.indices.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
    batches.push_back(std::move(batch));
  }
  return batches;
}

namespace {

int dose_bin(double dose, const std::array<double, 3>& edges) {
  if (dose < 0.0) throw DataError("negative dose: " + std::to_string(dose));
  if (dose == 0.0) return 0;
  if (dose <= edges[0]) return 1;
  if (dose <= edges[1]) return 2;
  if (dose <= edges[2]) return 3;
  return 4;
}

}  // namespace

int discretize_actions(double vaso_dose, double fluid_dose, const QuartileEdges& edges) {
  if (!(edges.vaso[0] < edges.vaso[1] && edges.vaso[1] < edges.vaso[2]) ||
      !(edges.fluid[0] < edges.fluid[1] && edges.fluid[1] < edges.fluid[2])) {
    throw ConfigError("quartile edges must be strictly increasing");
  }
  return 5 * dose_bin(vaso_dose, edges.vaso) + dose_bin(fluid_dose, edges.fluid);
}

std::array<double, 3> quartile_edges_from(std::vector<double> nonzero_doses) {
  if (nonzero_doses.size() < 4) {
    throw DataError("need at least 4 nonzero doses to place quartile edges");
  }
  std::sort(nonzero_doses.begin(), nonzero_doses.end());
  const auto rank = [&](double q) {
    const std::size_t n = nonzero_doses.size();
    const auto r = static_cast<std::size_t>(
        std::ceil(q * static_cast<double>(n)));
    return nonzero_doses[std::max<std::size_t>(r, 1) - 1];
  };
  return {rank(0.25), rank(0.5), rank(0.75)};
}

CohortStats cohort_stats(const Cohort& cohort) {
  if (cohort.trajectories.empty()) throw DataError("cohort_stats on empty cohort");
  CohortStats s;
  s.n = cohort.trajectories.size();
  std::vector<double> lengths;
  lengths.reserve(s.n);
  std::size_t deaths = 0;
  double total_length = 0.0;
  for (const Trajectory& t : cohort.trajectories) {
    if (t.reward == -1) ++deaths;
    lengths.push_back(static_cast<double>(t.length()));
    total_length += static_cast<double>(t.length());
  }
  s.mortality = static_cast<double>(deaths) / static_cast<double>(s.n);
  s.mean_length = total_length / static_cast<double>(s.n);
  std::sort(lengths.begin(), lengths.end());
  const std::size_t mid = s.n / 2;
  s.median_length = (s.n % 2 == 1) ? lengths[mid] : 0.5 * (lengths[mid - 1] + lengths[mid]);
  return s;
}

Cohort to_flat_grouping(const Cohort& gnn_cohort) {
  if (gnn_cohort.schema.mode != EncoderMode::kGnn) {
    throw ConfigError("to_flat_grouping expects a graph-mode cohort");
  }
  const auto& names = gnn_cohort.schema.variant_names;
  const auto it = std::find(names.begin(), names.end(), "Weight_kg");
  if (it == names.end()) {
    throw ConfigError("schema has no Weight_kg column to regroup");
  }
  const std::size_t widx = static_cast<std::size_t>(it - names.begin());

  Cohort out;
  std::vector<std::string> inv = gnn_cohort.schema.invariant_names;
  std::vector<std::string> var = names;
  inv.push_back("Weight_kg");
  var.erase(var.begin() + static_cast<std::ptrdiff_t>(widx));
  out.schema = FeatureSchema::from_names(EncoderMode::kAe, std::move(inv), std::move(var));
  out.quartile_edges = gnn_cohort.quartile_edges;

  out.trajectories.reserve(gnn_cohort.trajectories.size());
  for (const Trajectory& t : gnn_cohort.trajectories) {
    Trajectory ft;
    ft.id = t.id;
    ft.actions = t.actions;
    ft.reward = t.reward;
    ft.invariant_obs = t.invariant_obs;
    // Weight is frozen at its first observed (admission) value.
    ft.invariant_obs.push_back(t.steps.empty() ? 0.0 : t.steps.front()[widx]);
    ft.steps.reserve(t.steps.size());
    for (const auto& step : t.steps) {
      std::vector<double> row;
      row.reserve(step.size() - 1);
      for (std::size_t i = 0; i < step.size(); ++i) {
        if (i != widx) row.push_back(step[i]);
      }
      ft.steps.push_back(std::move(row));
    }
    out.trajectories.push_back(std::move(ft));
  }
  return out;
}

Standardizer Standardizer::fit(const Cohort& train) {
  if (train.trajectories.empty()) throw DataError("cannot fit standardizer on empty cohort");
  const std::size_t ni = train.schema.invariant_count();
  const std::size_t nv = train.schema.variant_count();

  Standardizer s;
  s.invariant_mean.assign(ni, 0.0);
  s.invariant_std.assign(ni, 0.0);
  s.variant_mean.assign(nv, 0.0);
  s.variant_std.assign(nv, 0.0);

  // Invariant stats: one row per trajectory.
  const double n_traj = static_cast<double>(train.trajectories.size());
  for (const Trajectory& t : train.trajectories) {
    for (std::size_t i = 0; i < ni; ++i) s.invariant_mean[i] += t.invariant_obs[i];
  }
  for (std::size_t i = 0; i < ni; ++i) s.invariant_mean[i] /= n_traj;
  for (const Trajectory& t : train.trajectories) {
    for (std::size_t i = 0; i < ni; ++i) {
      const double d = t.invariant_obs[i] - s.invariant_mean[i];
      s.invariant_std[i] += d * d;
    }
  }
  for (std::size_t i = 0; i < ni; ++i) {
    s.invariant_std[i] = std::max(std::sqrt(s.invariant_std[i] / n_traj), 1e-8);
  }

  // Variant stats: one row per step.
  double n_steps = 0.0;
  for (const Trajectory& t : train.trajectories) {
    n_steps += static_cast<double>(t.length());
    for (const auto& step : t.steps) {
      for (std::size_t i = 0; i < nv; ++i) s.variant_mean[i] += step[i];
    }
  }
  for (std::size_t i = 0; i < nv; ++i) s.variant_mean[i] /= n_steps;
  for (const Trajectory& t : train.trajectories) {
    for (const auto& step : t.steps) {
      for (std::size_t i = 0; i < nv; ++i) {
        const double d = step[i] - s.variant_mean[i];
        s.variant_std[i] += d * d;
      }
    }
  }
  for (std::size_t i = 0; i < nv; ++i) {
    s.variant_std[i] = std::max(std::sqrt(s.variant_std[i] / n_steps), 1e-8);
  }
  return s;
}

std::vector<double> Standardizer::apply_invariant(const std::vector<double>& obs) const {
  if (obs.size() != invariant_mean.size()) {
    throw DimensionError("standardizer: invariant width mismatch");
  }
  std::vector<double> out(obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) {
    out[i] = (obs[i] - invariant_mean[i]) / invariant_std[i];
  }
  return out;
}

std::vector<double> Standardizer::apply_variant(const std::vector<double>& obs) const {
  if (obs.size() != variant_mean.size()) {
    throw DimensionError("standardizer: variant width mismatch");
  }
  std::vector<double> out(obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) {
    out[i] = (obs[i] - variant_mean[i]) / variant_std[i];
  }
  return out;
}

Cohort Standardizer::apply(const Cohort& cohort) const {
  Cohort out = cohort;
  for (Trajectory& t : out.trajectories) {
    t.invariant_obs = apply_invariant(t.invariant_obs);
    for (auto& step : t.steps) step = apply_variant(step);
  }
  return out;
}

}  // namespace sepsisrl::cohort
