#include "sepsisrl/params.hpp"

#include <cmath>

#include "sepsisrl/errors.hpp"

namespace sepsisrl {

Param& ParamSet::add(std::string name, Tensor init) {
  if (find(name) != nullptr) {
    throw ConfigError("duplicate parameter name: " + name);
  }
  params_.emplace_back(std::move(name), std::move(init));
  return params_.back();
}

std::vector<Param*> ParamSet::all() {
  std::vector<Param*> out;
  out.reserve(params_.size());
  for (Param& p : params_) out.push_back(&p);
  return out;
}

std::vector<const Param*> ParamSet::all() const {
  std::vector<const Param*> out;
  out.reserve(params_.size());
  for (const Param& p : params_) out.push_back(&p);
  return out;
}

Param* ParamSet::find(std::string_view name) {
  for (Param& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

const Param* ParamSet::find(std::string_view name) const {
  for (const Param& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const Param& p : params_) n += p.value.size();
  return n;
}

void ParamSet::zero_grads() {
  for (Param& p : params_) p.grad.fill(0.0);
}

std::vector<double> ParamSet::flatten_values() const {
  std::vector<double> flat;
  flat.reserve(scalar_count());
  for (const Param& p : params_) {
    flat.insert(flat.end(), p.value.values().begin(), p.value.values().end());
  }
  return flat;
}

void ParamSet::unflatten_values(const std::vector<double>& flat) {
  if (flat.size() != scalar_count()) {
    throw DimensionError("unflatten_values: expected " + std::to_string(scalar_count()) +
                         " scalars, got " + std::to_string(flat.size()));
  }
  std::size_t off = 0;
  for (Param& p : params_) {
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = flat[off++];
  }
}

Tensor glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Tensor t = Tensor::matrix(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-a, a);
  return t;
}

}  // namespace sepsisrl
