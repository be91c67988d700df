#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sepsisrl/errors.hpp"

namespace sepsisrl::cohort {

inline constexpr int kActionCount = 25;
inline constexpr std::size_t kMaxTrajectoryLength = 20;
inline constexpr std::size_t kTotalFeatureCount = 38;

/// Selects whether body weight is treated as a time-invariant feature (the
/// flat-encoder convention) or a time-variant one (the graph convention).
enum class EncoderMode { kAe, kGnn };

/// Ordered feature names split into time-invariant and time-variant groups.
struct FeatureSchema {
  EncoderMode mode = EncoderMode::kGnn;
  std::vector<std::string> invariant_names;
  std::vector<std::string> variant_names;

  std::size_t invariant_count() const { return invariant_names.size(); }
  std::size_t variant_count() const { return variant_names.size(); }
  std::size_t total_count() const { return invariant_names.size() + variant_names.size(); }

  /// Default 38-feature schema: 4 invariant + 34 variant in graph mode,
  /// 5 invariant + 33 variant in flat mode (weight moves groups).
  static FeatureSchema default_schema(EncoderMode mode);

  /// Validates name disjointness and non-emptiness.
  static FeatureSchema from_names(EncoderMode mode, std::vector<std::string> invariant,
                                  std::vector<std::string> variant);
};

struct Trajectory {
  std::string id;
  std::vector<double> invariant_obs;               // over the schema's 𝓘
  std::vector<std::vector<double>> steps;          // T rows over the schema's 𝓣
  std::vector<int> actions;                        // T entries in [0, 24]
  int reward = 0;                                  // +1 or −1, terminal only

  std::size_t length() const { return steps.size(); }
};

/// Dose bin boundaries per drug: three strictly increasing edges each.
struct QuartileEdges {
  std::array<double, 3> vaso{};
  std::array<double, 3> fluid{};
};

struct Cohort {
  FeatureSchema schema;
  std::vector<Trajectory> trajectories;
  std::optional<QuartileEdges> quartile_edges;

  std::size_t size() const { return trajectories.size(); }
};

/// A batch references trajectories of a split by index.
struct Batch {
  std::vector<std::size_t> indices;
  std::size_t size() const { return indices.size(); }
};

struct CohortStats {
  std::size_t n = 0;
  double mortality = 0.0;
  double mean_length = 0.0;
  double median_length = 0.0;
};

struct SplitResult {
  Cohort train, val, test;
};

/// Throws DataError on any schema violation. allow_short permits T == 1
/// (pre-filter ingestion state); length above 20 is always rejected.
void validate_trajectory(const Trajectory& traj, const FeatureSchema& schema,
                         bool allow_short);

/// Validates every trajectory and id uniqueness.
void validate_cohort(const Cohort& cohort, bool allow_short = false);

/// Removes trajectories with a single step. Returns the number removed.
std::size_t filter_short(Cohort& cohort);

/// Outcome-stratified 70/15/15 (or custom) partition. Deterministic given
/// seed. Throws DataError if any outcome group has fewer trajectories than
/// splits.
SplitResult stratified_split(const Cohort& cohort, std::array<double, 3> fractions,
                             std::uint64_t seed);

/// Batches for one epoch: a seeded shuffle of all trajectory indices chunked
/// into groups of at most b. Deterministic given (seed, epoch).
std::vector<Batch> make_batches(std::size_t trajectory_count, std::size_t b,
                                std::uint64_t seed, std::uint64_t epoch);

/// Maps continuous doses to the 25-way action index 5·vaso_bin + fluid_bin.
/// Bin 0 is exactly-zero dose; bins 1–4 by the quartile edges, with a dose
/// equal to an edge assigned to the lower bin.
int discretize_actions(double vaso_dose, double fluid_dose, const QuartileEdges& edges);

/// Order statistics at ranks ⌈n/4⌉, ⌈n/2⌉, ⌈3n/4⌉ of the nonzero doses.
std::array<double, 3> quartile_edges_from(std::vector<double> nonzero_doses);

CohortStats cohort_stats(const Cohort& cohort);

/// Converts a graph-mode cohort to the flat-encoder grouping: body weight is
/// moved to the invariant group, frozen at its first-step value, and dropped
/// from the per-step features.
Cohort to_flat_grouping(const Cohort& gnn_cohort);

/// Per-feature z-score transform fitted on a training split.
struct Standardizer {
  std::vector<double> invariant_mean, invariant_std;
  std::vector<double> variant_mean, variant_std;

  static Standardizer fit(const Cohort& train);

  std::vector<double> apply_invariant(const std::vector<double>& obs) const;
  std::vector<double> apply_variant(const std::vector<double>& obs) const;

  /// Applies the transform to every observation of a cohort.
  Cohort apply(const Cohort& cohort) const;
};

}  // namespace sepsisrl::cohort
