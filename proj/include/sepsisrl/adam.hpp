#pragma once

#include <cstddef>
#include <vector>

#include "sepsisrl/params.hpp"

namespace sepsisrl {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2 term added into the gradient before moments
};

/// Adam optimizer with bias correction. Parameter order is fixed at
/// construction, so update order (and therefore floating-point results) is
/// deterministic.
class Adam {
 public:
  Adam(std::vector<Param*> params, AdamConfig cfg);

  /// Applies one update using the gradients currently stored on the params.
  void step();

  void zero_grad();

  std::size_t steps_taken() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

  /// First/second moment buffers, exposed for checkpointing.
  std::vector<std::vector<double>>& moments_m() { return m_; }
  std::vector<std::vector<double>>& moments_v() { return v_; }
  void set_steps_taken(std::size_t t) { t_ = t; }

 private:
  std::vector<Param*> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t t_ = 0;
};

}  // namespace sepsisrl
