#include "sepsisrl/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "sepsisrl/errors.hpp"
#include "sepsisrl/kernels.hpp"

namespace sepsisrl {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* where) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(where) + ": expected rank " + std::to_string(rank) +
                         " tensor, got shape " + t.shape_string());
  }
}

}  // namespace

Tape::NodeId Tape::push(Tensor value, std::function<void(Tape&, Node&)> back) {
  Node n;
  n.grad = Tensor::zeros_like(value);
  n.value = std::move(value);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

Tape::NodeId Tape::leaf(Tensor value) { return push(std::move(value), {}); }

Tape::NodeId Tape::param(Param& p) {
  NodeId id = push(p.value, {});
  nodes_[id].bound = &p;
  return id;
}

Tape::NodeId Tape::linear(NodeId W, NodeId x, NodeId b) {
  const Tensor& Wv = value(W);
  const Tensor& xv = value(x);
  const Tensor& bv = value(b);
  require_rank(Wv, 2, "linear W");
  require_rank(xv, 1, "linear x");
  require_rank(bv, 1, "linear b");
  const std::size_t m = Wv.rows(), n = Wv.cols();
  if (xv.size() != n || bv.size() != m) {
    throw DimensionError("linear: W " + Wv.shape_string() + " incompatible with x " +
                         xv.shape_string() + ", b " + bv.shape_string());
  }
  Tensor y({m});
  kernels::matvec_bias(Wv.data(), xv.data(), bv.data(), y.data(), m, n);
  return push(std::move(y), [W, x, b, m, n](Tape& t, Node& self) {
    kernels::matvec_bias_backward(t.node(W).value.data(), t.node(x).value.data(),
                                  self.grad.data(), t.grad_ptr(W), t.grad_ptr(x),
                                  t.grad_ptr(b), m, n);
  });
}

Tape::NodeId Tape::linear_nobias(NodeId W, NodeId x) {
  const Tensor& Wv = value(W);
  const Tensor& xv = value(x);
  require_rank(Wv, 2, "linear_nobias W");
  require_rank(xv, 1, "linear_nobias x");
  const std::size_t m = Wv.rows(), n = Wv.cols();
  if (xv.size() != n) {
    throw DimensionError("linear_nobias: W " + Wv.shape_string() + " incompatible with x " +
                         xv.shape_string());
  }
  Tensor y({m});
  kernels::matvec_bias(Wv.data(), xv.data(), nullptr, y.data(), m, n);
  return push(std::move(y), [W, x, m, n](Tape& t, Node& self) {
    kernels::matvec_bias_backward(t.node(W).value.data(), t.node(x).value.data(),
                                  self.grad.data(), t.grad_ptr(W), t.grad_ptr(x),
                                  nullptr, m, n);
  });
}

Tape::NodeId Tape::batch_linear(NodeId X, NodeId W, NodeId b) {
  const Tensor& Xv = value(X);
  const Tensor& Wv = value(W);
  const Tensor& bv = value(b);
  require_rank(Xv, 2, "batch_linear X");
  require_rank(Wv, 2, "batch_linear W");
  require_rank(bv, 1, "batch_linear b");
  const std::size_t batch = Xv.rows(), n = Xv.cols();
  const std::size_t m = Wv.rows();
  if (Wv.cols() != n || bv.size() != m) {
    throw DimensionError("batch_linear: X " + Xv.shape_string() + " incompatible with W " +
                         Wv.shape_string() + ", b " + bv.shape_string());
  }
  Tensor Y({batch, m});
  kernels::batch_linear(Xv.data(), Wv.data(), bv.data(), Y.data(), batch, m, n);
  return push(std::move(Y), [X, W, b, batch, m, n](Tape& t, Node& self) {
    kernels::batch_linear_backward(t.node(X).value.data(), t.node(W).value.data(),
                                   self.grad.data(), t.grad_ptr(X), t.grad_ptr(W),
                                   t.grad_ptr(b), batch, m, n);
  });
}

Tape::NodeId Tape::batch_linear_nobias(NodeId X, NodeId W) {
  const Tensor& Xv = value(X);
  const Tensor& Wv = value(W);
  require_rank(Xv, 2, "batch_linear_nobias X");
  require_rank(Wv, 2, "batch_linear_nobias W");
  const std::size_t batch = Xv.rows(), n = Xv.cols();
  const std::size_t m = Wv.rows();
  if (Wv.cols() != n) {
    throw DimensionError("batch_linear_nobias: X " + Xv.shape_string() +
                         " incompatible with W " + Wv.shape_string());
  }
  Tensor Y({batch, m});
  kernels::batch_linear(Xv.data(), Wv.data(), nullptr, Y.data(), batch, m, n);
  return push(std::move(Y), [X, W, batch, m, n](Tape& t, Node& self) {
    kernels::batch_linear_backward(t.node(X).value.data(), t.node(W).value.data(),
                                   self.grad.data(), t.grad_ptr(X), t.grad_ptr(W),
                                   nullptr, batch, m, n);
  });
}

Tape::NodeId Tape::relu(NodeId x) {
  const Tensor& xv = value(x);
  Tensor y = xv;
  kernels::relu(xv.data(), y.data(), y.size());
  return push(std::move(y), [x](Tape& t, Node& self) {
    const Tensor& xv = t.node(x).value;
    double* gx = t.grad_ptr(x);
    const double* g = self.grad.data();
    for (std::size_t i = 0; i < xv.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += g[i];
    }
  });
}

Tape::NodeId Tape::leaky_relu(NodeId x, double negative_slope) {
  const Tensor& xv = value(x);
  Tensor y = xv;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] < 0.0) y[i] *= negative_slope;
  }
  return push(std::move(y), [x, negative_slope](Tape& t, Node& self) {
    const Tensor& xv = t.node(x).value;
    double* gx = t.grad_ptr(x);
    const double* g = self.grad.data();
    for (std::size_t i = 0; i < xv.size(); ++i) {
      gx[i] += g[i] * (xv[i] > 0.0 ? 1.0 : negative_slope);
    }
  });
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
  Tensor::require_same_shape(value(a), value(b), "add");
  Tensor y = value(a);
  y.add_in_place(value(b));
  return push(std::move(y), [a, b](Tape& t, Node& self) {
    const double* g = self.grad.data();
    kernels::axpy_serial(1.0, g, t.grad_ptr(a), self.grad.size());
    kernels::axpy_serial(1.0, g, t.grad_ptr(b), self.grad.size());
  });
}

Tape::NodeId Tape::add_many(const std::vector<NodeId>& ids) {
  if (ids.empty()) throw DimensionError("add_many: no inputs");
  Tensor y = value(ids[0]);
  for (std::size_t k = 1; k < ids.size(); ++k) {
    Tensor::require_same_shape(y, value(ids[k]), "add_many");
    y.add_in_place(value(ids[k]));
  }
  return push(std::move(y), [ids](Tape& t, Node& self) {
    const double* g = self.grad.data();
    for (NodeId id : ids) {
      kernels::axpy_serial(1.0, g, t.grad_ptr(id), self.grad.size());
    }
  });
}

Tape::NodeId Tape::scale(NodeId x, double c) {
  Tensor y = value(x);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= c;
  return push(std::move(y), [x, c](Tape& t, Node& self) {
    kernels::axpy_serial(c, self.grad.data(), t.grad_ptr(x), self.grad.size());
  });
}

Tape::NodeId Tape::concat(NodeId a, NodeId b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require_rank(av, 1, "concat a");
  require_rank(bv, 1, "concat b");
  Tensor y({av.size() + bv.size()});
  std::copy(av.values().begin(), av.values().end(), y.data());
  std::copy(bv.values().begin(), bv.values().end(), y.data() + av.size());
  const std::size_t na = av.size();
  return push(std::move(y), [a, b, na](Tape& t, Node& self) {
    const double* g = self.grad.data();
    kernels::axpy_serial(1.0, g, t.grad_ptr(a), na);
    kernels::axpy_serial(1.0, g + na, t.grad_ptr(b), self.grad.size() - na);
  });
}

Tape::NodeId Tape::mean_vectors(const std::vector<NodeId>& ids) {
  if (ids.empty()) throw DimensionError("mean_vectors: no inputs");
  Tensor y = value(ids[0]);
  require_rank(y, 1, "mean_vectors");
  for (std::size_t k = 1; k < ids.size(); ++k) {
    Tensor::require_same_shape(y, value(ids[k]), "mean_vectors");
    y.add_in_place(value(ids[k]));
  }
  const double inv = 1.0 / static_cast<double>(ids.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= inv;
  return push(std::move(y), [ids, inv](Tape& t, Node& self) {
    const double* g = self.grad.data();
    for (NodeId id : ids) {
      kernels::axpy_serial(inv, g, t.grad_ptr(id), self.grad.size());
    }
  });
}

Tape::NodeId Tape::sum(NodeId x) {
  const Tensor& xv = value(x);
  double acc = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) acc += xv[i];
  return push(Tensor::scalar(acc), [x](Tape& t, Node& self) {
    const double g = self.grad[0];
    double* gx = t.grad_ptr(x);
    const std::size_t n = t.node(x).value.size();
    for (std::size_t i = 0; i < n; ++i) gx[i] += g;
  });
}

Tape::NodeId Tape::dot(NodeId a, NodeId b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  Tensor::require_same_shape(av, bv, "dot");
  const double v = kernels::dot_serial(av.data(), bv.data(), av.size());
  return push(Tensor::scalar(v), [a, b](Tape& t, Node& self) {
    const double g = self.grad[0];
    const Tensor& av = t.node(a).value;
    const Tensor& bv = t.node(b).value;
    kernels::axpy_serial(g, bv.data(), t.grad_ptr(a), av.size());
    kernels::axpy_serial(g, av.data(), t.grad_ptr(b), bv.size());
  });
}

Tape::NodeId Tape::stack_scalars(const std::vector<NodeId>& ids) {
  if (ids.empty()) throw DimensionError("stack_scalars: no inputs");
  Tensor y({ids.size()});
  for (std::size_t k = 0; k < ids.size(); ++k) {
    y[k] = value(ids[k]).item();
  }
  return push(std::move(y), [ids](Tape& t, Node& self) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      t.grad_ptr(ids[k])[0] += self.grad[k];
    }
  });
}

Tape::NodeId Tape::softmax(NodeId x) {
  const Tensor& xv = value(x);
  require_rank(xv, 1, "softmax");
  Tensor y = xv;
  double mx = y[0];
  for (std::size_t i = 1; i < y.size(); ++i) mx = std::max(mx, y[i]);
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = std::exp(y[i] - mx);
    total += y[i];
  }
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= total;
  return push(std::move(y), [x](Tape& t, Node& self) {
    // dx = s ∘ (g − ⟨g, s⟩)
    const double* s = self.value.data();
    const double* g = self.grad.data();
    const std::size_t n = self.value.size();
    const double gs = kernels::dot_serial(g, s, n);
    double* gx = t.grad_ptr(x);
    for (std::size_t i = 0; i < n; ++i) gx[i] += s[i] * (g[i] - gs);
  });
}

Tape::NodeId Tape::weighted_sum(const std::vector<NodeId>& vs, NodeId w) {
  if (vs.empty()) throw DimensionError("weighted_sum: no inputs");
  const Tensor& wv = value(w);
  require_rank(wv, 1, "weighted_sum weights");
  if (wv.size() != vs.size()) {
    throw DimensionError("weighted_sum: " + std::to_string(vs.size()) + " vectors but " +
                         std::to_string(wv.size()) + " weights");
  }
  Tensor y = Tensor::zeros_like(value(vs[0]));
  require_rank(y, 1, "weighted_sum vectors");
  for (std::size_t k = 0; k < vs.size(); ++k) {
    Tensor::require_same_shape(y, value(vs[k]), "weighted_sum");
    kernels::axpy_serial(wv[k], value(vs[k]).data(), y.data(), y.size());
  }
  return push(std::move(y), [vs, w](Tape& t, Node& self) {
    const double* g = self.grad.data();
    const std::size_t d = self.grad.size();
    const Tensor& wv = t.node(w).value;
    double* gw = t.grad_ptr(w);
    for (std::size_t k = 0; k < vs.size(); ++k) {
      const Tensor& vk = t.node(vs[k]).value;
      kernels::axpy_serial(wv[k], g, t.grad_ptr(vs[k]), d);
      gw[k] += kernels::dot_serial(g, vk.data(), d);
    }
  });
}

Tape::NodeId Tape::half_sum_squares_to(NodeId pred, const Tensor& target) {
  const Tensor& pv = value(pred);
  Tensor::require_same_shape(pv, target, "half_sum_squares_to");
  double acc = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double d = pv[i] - target[i];
    acc += d * d;
  }
  return push(Tensor::scalar(0.5 * acc), [pred, target](Tape& t, Node& self) {
    const double g = self.grad[0];
    const Tensor& pv = t.node(pred).value;
    double* gp = t.grad_ptr(pred);
    for (std::size_t i = 0; i < pv.size(); ++i) gp[i] += g * (pv[i] - target[i]);
  });
}

Tape::NodeId Tape::huber_mean_to(NodeId pred, const Tensor& target) {
  const Tensor& pv = value(pred);
  Tensor::require_same_shape(pv, target, "huber_mean_to");
  const std::size_t n = pv.size();
  if (n == 0) throw DimensionError("huber_mean_to: empty prediction");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pv[i] - target[i];
    const double a = std::abs(d);
    acc += a <= 1.0 ? 0.5 * d * d : a - 0.5;
  }
  return push(Tensor::scalar(acc / static_cast<double>(n)),
              [pred, target, n](Tape& t, Node& self) {
                const double g = self.grad[0] / static_cast<double>(n);
                const Tensor& pv = t.node(pred).value;
                double* gp = t.grad_ptr(pred);
                for (std::size_t i = 0; i < n; ++i) {
                  const double d = pv[i] - target[i];
                  gp[i] += g * std::clamp(d, -1.0, 1.0);
                }
              });
}

Tape::NodeId Tape::cross_entropy_logits(NodeId logits, std::size_t label) {
  const Tensor& lv = value(logits);
  require_rank(lv, 1, "cross_entropy_logits");
  if (label >= lv.size()) throw DimensionError("cross_entropy_logits: label out of range");
  double mx = lv[0];
  for (std::size_t i = 1; i < lv.size(); ++i) mx = std::max(mx, lv[i]);
  double total = 0.0;
  for (std::size_t i = 0; i < lv.size(); ++i) total += std::exp(lv[i] - mx);
  const double loss = std::log(total) + mx - lv[label];
  return push(Tensor::scalar(loss), [logits, label](Tape& t, Node& self) {
    const double g = self.grad[0];
    const Tensor& lv = t.node(logits).value;
    double mx = lv[0];
    for (std::size_t i = 1; i < lv.size(); ++i) mx = std::max(mx, lv[i]);
    double total = 0.0;
    for (std::size_t i = 0; i < lv.size(); ++i) total += std::exp(lv[i] - mx);
    double* gl = t.grad_ptr(logits);
    for (std::size_t i = 0; i < lv.size(); ++i) {
      const double p = std::exp(lv[i] - mx) / total;
      gl[i] += g * (p - (i == label ? 1.0 : 0.0));
    }
  });
}

Tape::NodeId Tape::cross_entropy_logits_mean(NodeId logits,
                                             const std::vector<std::size_t>& labels) {
  const Tensor& L = value(logits);
  require_rank(L, 2, "cross_entropy_logits_mean");
  const std::size_t B = L.rows(), A = L.cols();
  if (labels.size() != B) {
    throw DimensionError("cross_entropy_logits_mean: " + std::to_string(B) + " rows but " +
                         std::to_string(labels.size()) + " labels");
  }
  // Cache the row-wise softmax for the backward pass.
  auto probs = std::make_shared<std::vector<double>>(B * A);
  double loss = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    if (labels[i] >= A) throw DimensionError("cross_entropy_logits_mean: label out of range");
    const double* row = L.data() + i * A;
    double mx = row[0];
    for (std::size_t j = 1; j < A; ++j) mx = std::max(mx, row[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < A; ++j) total += std::exp(row[j] - mx);
    loss += std::log(total) + mx - row[labels[i]];
    double* prow = probs->data() + i * A;
    for (std::size_t j = 0; j < A; ++j) prow[j] = std::exp(row[j] - mx) / total;
  }
  loss /= static_cast<double>(B);
  return push(Tensor::scalar(loss), [logits, labels, probs, B, A](Tape& t, Node& self) {
    const double g = self.grad[0] / static_cast<double>(B);
    double* gl = t.grad_ptr(logits);
    for (std::size_t i = 0; i < B; ++i) {
      const double* prow = probs->data() + i * A;
      double* grow = gl + i * A;
      for (std::size_t j = 0; j < A; ++j) {
        grow[j] += g * (prow[j] - (j == labels[i] ? 1.0 : 0.0));
      }
    }
  });
}

Tape::NodeId Tape::batch_norm_train(NodeId X, NodeId gamma, NodeId beta,
                                    BatchNormState* state, double momentum, double eps) {
  const Tensor& Xv = value(X);
  const Tensor& gv = value(gamma);
  const Tensor& bv = value(beta);
  require_rank(Xv, 2, "batch_norm_train X");
  const std::size_t B = Xv.rows(), n = Xv.cols();
  if (B < 2) throw NumericError("batch_norm_train: batch size must be >= 2");
  if (gv.size() != n || bv.size() != n) {
    throw DimensionError("batch_norm_train: gamma/beta must have length " + std::to_string(n));
  }

  auto xhat = std::make_shared<std::vector<double>>(B * n);
  auto invstd = std::make_shared<std::vector<double>>(n);
  Tensor Y({B, n});
  for (std::size_t j = 0; j < n; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < B; ++i) mean += Xv(i, j);
    mean /= static_cast<double>(B);
    double var = 0.0;
    for (std::size_t i = 0; i < B; ++i) {
      const double d = Xv(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(B);  // biased, used for normalization
    const double is = 1.0 / std::sqrt(var + eps);
    (*invstd)[j] = is;
    for (std::size_t i = 0; i < B; ++i) {
      const double xh = (Xv(i, j) - mean) * is;
      (*xhat)[i * n + j] = xh;
      Y(i, j) = gv[j] * xh + bv[j];
    }
    if (state != nullptr) {
      const double unbiased = var * static_cast<double>(B) / static_cast<double>(B - 1);
      state->running_mean[j] = (1.0 - momentum) * state->running_mean[j] + momentum * mean;
      state->running_var[j] = (1.0 - momentum) * state->running_var[j] + momentum * unbiased;
    }
  }
  if (state != nullptr) state->batches_seen += 1;

  return push(std::move(Y), [X, gamma, beta, xhat, invstd, B, n](Tape& t, Node& self) {
    const Tensor& gv = t.node(gamma).value;
    const double* g = self.grad.data();
    double* gX = t.grad_ptr(X);
    double* gg = t.grad_ptr(gamma);
    double* gb = t.grad_ptr(beta);
    const double invB = 1.0 / static_cast<double>(B);
    for (std::size_t j = 0; j < n; ++j) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t i = 0; i < B; ++i) {
        const double gij = g[i * n + j];
        sum_g += gij;
        sum_gx += gij * (*xhat)[i * n + j];
      }
      gg[j] += sum_gx;
      gb[j] += sum_g;
      const double k1 = gv[j] * (*invstd)[j];
      for (std::size_t i = 0; i < B; ++i) {
        const double gij = g[i * n + j];
        const double xh = (*xhat)[i * n + j];
        gX[i * n + j] += k1 * (gij - invB * sum_g - invB * xh * sum_gx);
      }
    }
  });
}

Tape::NodeId Tape::batch_norm_eval(NodeId X, NodeId gamma, NodeId beta,
                                   const BatchNormState& state, double eps) {
  const Tensor& Xv = value(X);
  const Tensor& gv = value(gamma);
  const Tensor& bv = value(beta);
  require_rank(Xv, 2, "batch_norm_eval X");
  const std::size_t B = Xv.rows(), n = Xv.cols();
  if (gv.size() != n || bv.size() != n || state.running_mean.size() != n) {
    throw DimensionError("batch_norm_eval: inconsistent widths");
  }
  auto invstd = std::make_shared<std::vector<double>>(n);
  for (std::size_t j = 0; j < n; ++j) {
    (*invstd)[j] = 1.0 / std::sqrt(state.running_var[j] + eps);
  }
  Tensor Y({B, n});
  const Tensor mean = state.running_mean;
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      Y(i, j) = gv[j] * (Xv(i, j) - mean[j]) * (*invstd)[j] + bv[j];
    }
  }
  return push(std::move(Y), [X, gamma, beta, invstd, mean, B, n](Tape& t, Node& self) {
    const Tensor& Xv = t.node(X).value;
    const Tensor& gv = t.node(gamma).value;
    const double* g = self.grad.data();
    double* gX = t.grad_ptr(X);
    double* gg = t.grad_ptr(gamma);
    double* gb = t.grad_ptr(beta);
    for (std::size_t j = 0; j < n; ++j) {
      const double is = (*invstd)[j];
      for (std::size_t i = 0; i < B; ++i) {
        const double gij = g[i * n + j];
        gX[i * n + j] += gij * gv[j] * is;
        gg[j] += gij * (Xv(i, j) - mean[j]) * is;
        gb[j] += gij;
      }
    }
  });
}

Tape::NodeId Tape::select_per_row(NodeId X, const std::vector<std::size_t>& cols) {
  const Tensor& Xv = value(X);
  require_rank(Xv, 2, "select_per_row");
  const std::size_t B = Xv.rows(), A = Xv.cols();
  if (cols.size() != B) {
    throw DimensionError("select_per_row: " + std::to_string(B) + " rows but " +
                         std::to_string(cols.size()) + " indices");
  }
  Tensor y({B});
  for (std::size_t i = 0; i < B; ++i) {
    if (cols[i] >= A) throw DimensionError("select_per_row: column index out of range");
    y[i] = Xv(i, cols[i]);
  }
  return push(std::move(y), [X, cols, A](Tape& t, Node& self) {
    double* gX = t.grad_ptr(X);
    for (std::size_t i = 0; i < cols.size(); ++i) {
      gX[i * A + cols[i]] += self.grad[i];
    }
  });
}

Tape::NodeId Tape::gather_rows(NodeId X, const std::vector<std::ptrdiff_t>& rows) {
  const Tensor& Xv = value(X);
  require_rank(Xv, 2, "gather_rows");
  const std::size_t n = Xv.rows(), d = Xv.cols();
  Tensor y({rows.size(), d}, 0.0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0) continue;  // empty neighborhood: keep the zero row
    const auto r = static_cast<std::size_t>(rows[i]);
    if (r >= n) throw DimensionError("gather_rows: row index out of range");
    for (std::size_t j = 0; j < d; ++j) y(i, j) = Xv(r, j);
  }
  return push(std::move(y), [X, rows, d](Tape& t, Node& self) {
    double* gX = t.grad_ptr(X);
    const double* g = self.grad.data();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i] < 0) continue;
      double* dst = gX + static_cast<std::size_t>(rows[i]) * d;
      const double* src = g + i * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

Tape::NodeId Tape::segment_mean(NodeId X, const std::vector<std::size_t>& seg,
                                std::size_t n_segments) {
  const Tensor& Xv = value(X);
  require_rank(Xv, 2, "segment_mean");
  const std::size_t n = Xv.rows(), d = Xv.cols();
  if (seg.size() != n) {
    throw DimensionError("segment_mean: " + std::to_string(n) + " rows but " +
                         std::to_string(seg.size()) + " segment ids");
  }
  auto counts = std::make_shared<std::vector<double>>(n_segments, 0.0);
  for (std::size_t s : seg) {
    if (s >= n_segments) throw DimensionError("segment_mean: segment id out of range");
    (*counts)[s] += 1.0;
  }
  for (double c : *counts) {
    if (c == 0.0) throw NumericError("segment_mean: empty segment has no mean");
  }
  Tensor y({n_segments, d}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) y(seg[i], j) += Xv(i, j);
  }
  for (std::size_t s = 0; s < n_segments; ++s) {
    for (std::size_t j = 0; j < d; ++j) y(s, j) /= (*counts)[s];
  }
  return push(std::move(y), [X, seg, counts, d](Tape& t, Node& self) {
    double* gX = t.grad_ptr(X);
    const double* g = self.grad.data();
    for (std::size_t i = 0; i < seg.size(); ++i) {
      const double inv = 1.0 / (*counts)[seg[i]];
      const double* src = g + seg[i] * d;
      double* dst = gX + i * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += inv * src[j];
    }
  });
}

Tape::NodeId Tape::segment_attention(NodeId scores, NodeId values,
                                     const std::vector<std::size_t>& seg,
                                     std::size_t n_segments) {
  const Tensor& sv = value(scores);
  const Tensor& Vv = value(values);
  require_rank(sv, 1, "segment_attention scores");
  require_rank(Vv, 2, "segment_attention values");
  const std::size_t n = Vv.rows(), d = Vv.cols();
  if (sv.size() != n || seg.size() != n) {
    throw DimensionError("segment_attention: scores/values/segments disagree on n");
  }
  // Stable per-segment softmax.
  std::vector<double> seg_max(n_segments, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    if (seg[i] >= n_segments) {
      throw DimensionError("segment_attention: segment id out of range");
    }
    seg_max[seg[i]] = std::max(seg_max[seg[i]], sv[i]);
  }
  for (double m : seg_max) {
    if (m == -std::numeric_limits<double>::infinity()) {
      throw NumericError("segment_attention: empty segment");
    }
  }
  auto alpha = std::make_shared<std::vector<double>>(n);
  std::vector<double> seg_sum(n_segments, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    (*alpha)[i] = std::exp(sv[i] - seg_max[seg[i]]);
    seg_sum[seg[i]] += (*alpha)[i];
  }
  for (std::size_t i = 0; i < n; ++i) (*alpha)[i] /= seg_sum[seg[i]];

  Tensor y({n_segments, d}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = (*alpha)[i];
    for (std::size_t j = 0; j < d; ++j) y(seg[i], j) += a * Vv(i, j);
  }
  return push(std::move(y), [scores, values, seg, alpha, n_segments, d](Tape& t,
                                                                        Node& self) {
    const Tensor& Vv = t.node(values).value;
    const double* g = self.grad.data();
    const std::size_t n = seg.size();
    // q_i = <V_i, g_seg(i)>; inner_s = Σ alpha_i q_i over the segment.
    std::vector<double> q(n, 0.0), inner(n_segments, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double* grow = g + seg[i] * d;
      const double* vrow = Vv.data() + i * d;
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += vrow[j] * grow[j];
      q[i] = acc;
      inner[seg[i]] += (*alpha)[i] * acc;
    }
    double* gs = t.grad_ptr(scores);
    double* gV = t.grad_ptr(values);
    for (std::size_t i = 0; i < n; ++i) {
      const double a = (*alpha)[i];
      gs[i] += a * (q[i] - inner[seg[i]]);
      const double* grow = g + seg[i] * d;
      double* dst = gV + i * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += a * grow[j];
    }
  });
}

Tape::NodeId Tape::concat_cols(NodeId A, NodeId B) {
  const Tensor& Av = value(A);
  const Tensor& Bv = value(B);
  require_rank(Av, 2, "concat_cols A");
  require_rank(Bv, 2, "concat_cols B");
  if (Av.rows() != Bv.rows()) {
    throw DimensionError("concat_cols: row counts differ, " + Av.shape_string() +
                         " vs " + Bv.shape_string());
  }
  const std::size_t n = Av.rows(), a = Av.cols(), b = Bv.cols();
  Tensor y({n, a + b});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < a; ++j) y(i, j) = Av(i, j);
    for (std::size_t j = 0; j < b; ++j) y(i, a + j) = Bv(i, j);
  }
  return push(std::move(y), [A, B, n, a, b](Tape& t, Node& self) {
    double* gA = t.grad_ptr(A);
    double* gB = t.grad_ptr(B);
    const double* g = self.grad.data();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < a; ++j) gA[i * a + j] += g[i * (a + b) + j];
      for (std::size_t j = 0; j < b; ++j) gB[i * b + j] += g[i * (a + b) + a + j];
    }
  });
}

void Tape::backward(NodeId root, double seed) {
  if (ran_backward_) throw NumericError("Tape::backward called twice on the same tape");
  ran_backward_ = true;
  Node& r = nodes_.at(root);
  if (r.value.size() != 1) {
    throw DimensionError("backward root must be scalar, got " + r.value.shape_string());
  }
  r.grad[0] += seed;
  r.touched = true;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& nd = nodes_[i];
    if (nd.touched && nd.back) nd.back(*this, nd);
  }
}

void Tape::apply_param_grads(double scale) {
  for (Node& nd : nodes_) {
    if (nd.bound == nullptr || !nd.touched) continue;
    double* out = nd.bound->grad.data();
    kernels::axpy_serial(scale, nd.grad.data(), out, nd.grad.size());
  }
}

void Tape::reset() {
  nodes_.clear();
  ran_backward_ = false;
}

}  // namespace sepsisrl
