#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "sepsisrl/params.hpp"
#include "sepsisrl/rng.hpp"

namespace sepsisrl {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
};

struct GradCheckOptions {
  double step = 1e-5;              // central-difference half step
  std::size_t max_coords = 64;     // per parameter tensor; 0 = all coordinates
};

/// Compares analytic gradients against central finite differences.
///
/// `loss` must evaluate the scalar objective from the parameters' current
/// values without side effects; `compute_grads` must zero the grads and fill
/// them analytically for the current values. Relative error uses
/// |a − n| / max(1, |a|, |n|). When a tensor has more coordinates than
/// opts.max_coords, a random subset is checked.
GradCheckReport check_gradients(std::vector<Param*> params,
                                const std::function<double()>& loss,
                                const std::function<void()>& compute_grads,
                                const GradCheckOptions& opts, Rng& rng);

}  // namespace sepsisrl
