#pragma once

#include <iosfwd>
#include <string>

#include "sepsisrl/cohort.hpp"

namespace sepsisrl::cohort {

/// Reads a cohort from CSV. Expected header:
///   traj_id, step, <invariant names...>, <variant names...>, action, reward
/// One row per timestep; steps 0-based and contiguous, rows of a trajectory
/// consecutive; invariant columns constant within a trajectory; reward (+1 or
/// -1) present only on the final row and empty otherwise; missing values are
/// an error. No quoting — ids must not contain commas.
Cohort load_csv(const std::string& path, const FeatureSchema& schema);
Cohort load_csv_stream(std::istream& in, const FeatureSchema& schema,
                       const std::string& origin);

void save_csv(const Cohort& cohort, const std::string& path);
void save_csv_stream(const Cohort& cohort, std::ostream& out);

}  // namespace sepsisrl::cohort
