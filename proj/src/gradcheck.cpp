#include "sepsisrl/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "sepsisrl/errors.hpp"

namespace sepsisrl {

GradCheckReport check_gradients(std::vector<Param*> params,
                                const std::function<double()>& loss,
                                const std::function<void()>& compute_grads,
                                const GradCheckOptions& opts, Rng& rng) {
  compute_grads();
  // Snapshot the analytic gradients before the finite-difference probes
  // overwrite parameter values.
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const Param* p : params) {
    analytic.emplace_back(p->grad.values().begin(), p->grad.values().end());
  }

  GradCheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Param& p = *params[k];
    const std::size_t n = p.value.size();

    std::vector<std::size_t> coords;
    if (opts.max_coords == 0 || n <= opts.max_coords) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      coords.reserve(opts.max_coords);
      for (std::size_t i = 0; i < opts.max_coords; ++i) {
        coords.push_back(static_cast<std::size_t>(rng.below(n)));
      }
    }

    for (std::size_t i : coords) {
      const double saved = p.value[i];
      p.value[i] = saved + opts.step;
      const double up = loss();
      p.value[i] = saved - opts.step;
      const double down = loss();
      p.value[i] = saved;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double a = analytic[k][i];
      const double rel =
          std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = p.name;
        report.worst_index = i;
      }
      ++report.coords_checked;
    }
  }
  if (!std::isfinite(report.max_rel_err)) {
    throw NumericError("gradient check produced non-finite relative error");
  }
  return report;
}

}  // namespace sepsisrl
