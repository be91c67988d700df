#pragma once

#include <deque>
#include <string>
#include <string_view>
#include <vector>

#include "sepsisrl/rng.hpp"
#include "sepsisrl/tensor.hpp"

namespace sepsisrl {

/// A named trainable tensor with its accumulated gradient.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  Param(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros_like(value)) {}
};

/// Ordered collection of parameters with stable addresses. Registration order
/// defines the canonical order used for optimizer updates, gradient folding
/// and checkpoint layout, so it must be deterministic.
class ParamSet {
 public:
  Param& add(std::string name, Tensor init);

  std::vector<Param*> all();
  std::vector<const Param*> all() const;
  Param* find(std::string_view name);
  const Param* find(std::string_view name) const;
  std::size_t count() const { return params_.size(); }
  std::size_t scalar_count() const;

  void zero_grads();

  /// Flattened copies of all values (registration order), and the inverse.
  std::vector<double> flatten_values() const;
  void unflatten_values(const std::vector<double>& flat);

 private:
  std::deque<Param> params_;
};

/// Glorot/Xavier uniform initialization: U(-a, a), a = sqrt(6/(fan_in+fan_out)).
Tensor glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng);

}  // namespace sepsisrl
