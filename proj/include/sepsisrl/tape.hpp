#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "sepsisrl/params.hpp"
#include "sepsisrl/tensor.hpp"

namespace sepsisrl {

/// Running statistics for a batch-normalization layer. Updated as a side
/// effect of batch_norm_train and consumed by batch_norm_eval.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  std::size_t batches_seen = 0;

  explicit BatchNormState(std::size_t n)
      : running_mean({n}, 0.0), running_var({n}, 1.0) {}
};

/// Reverse-mode automatic differentiation tape. Operations append nodes that
/// record their value and a backward closure; backward() replays the closures
/// in reverse creation order. Creation order is the only order anything is
/// accumulated in, so results are deterministic.
class Tape {
 public:
  using NodeId = std::size_t;

  Tape() { nodes_.reserve(256); }

  // ----- graph construction -------------------------------------------------

  /// Constant input (no gradient flows past it).
  NodeId leaf(Tensor value);

  /// Trainable input; copies the parameter's current value and remembers the
  /// binding so apply_param_grads can fold this node's gradient back.
  NodeId param(Param& p);

  /// y = W·x + b (W rank-2 m×n, x rank-1 n, b rank-1 m). b may be omitted.
  NodeId linear(NodeId W, NodeId x, NodeId b);
  NodeId linear_nobias(NodeId W, NodeId x);

  /// Y = X·Wᵀ + b over rows of a batch matrix X (B×n); W m×n, b m, Y B×m.
  NodeId batch_linear(NodeId X, NodeId W, NodeId b);
  NodeId batch_linear_nobias(NodeId X, NodeId W);

  NodeId relu(NodeId x);
  NodeId leaky_relu(NodeId x, double negative_slope);

  NodeId add(NodeId a, NodeId b);
  NodeId add_many(const std::vector<NodeId>& ids);
  NodeId scale(NodeId x, double c);
  NodeId concat(NodeId a, NodeId b);  // rank-1 ⊕ rank-1

  /// Mean of k same-shape rank-1 nodes.
  NodeId mean_vectors(const std::vector<NodeId>& ids);

  NodeId sum(NodeId x);           // scalar Σxᵢ
  NodeId dot(NodeId a, NodeId b);  // scalar ⟨a, b⟩

  /// Vector assembled from k scalar nodes.
  NodeId stack_scalars(const std::vector<NodeId>& ids);

  NodeId softmax(NodeId x);  // rank-1

  /// Σᵢ wᵢ·vᵢ for rank-1 nodes vᵢ and a rank-1 weight node w of length k.
  NodeId weighted_sum(const std::vector<NodeId>& vs, NodeId w);

  /// 0.5·Σ(pred − target)² against a constant target (same shape as pred).
  NodeId half_sum_squares_to(NodeId pred, const Tensor& target);

  /// Mean Huber loss (delta = 1) of pred against a constant target vector.
  NodeId huber_mean_to(NodeId pred, const Tensor& target);

  /// Cross-entropy of a single logit vector against an integer label.
  NodeId cross_entropy_logits(NodeId logits, std::size_t label);

  /// Mean cross-entropy of a logits matrix (B×A) against per-row labels.
  NodeId cross_entropy_logits_mean(NodeId logits, const std::vector<std::size_t>& labels);

  /// Batch normalization in training mode over the columns of X (B×n), with
  /// learnable gamma/beta (rank-1 n). Normalizes with the biased batch
  /// variance and, when `state` is non-null, updates its running mean and
  /// (unbiased) running variance with the given momentum.
  NodeId batch_norm_train(NodeId X, NodeId gamma, NodeId beta,
                          BatchNormState* state, double momentum, double eps);

  /// Batch normalization in inference mode using frozen running statistics.
  NodeId batch_norm_eval(NodeId X, NodeId gamma, NodeId beta,
                         const BatchNormState& state, double eps);

  /// Gathers X[i, cols[i]] for each row i of a B×A matrix into a length-B
  /// vector.
  NodeId select_per_row(NodeId X, const std::vector<std::size_t>& cols);

  /// Row gather: out[i] = X[rows[i]] for rows[i] >= 0, a zero row otherwise
  /// (the empty-neighborhood convention). Backward scatter-adds in ascending
  /// output-row order, so repeated sources accumulate deterministically.
  NodeId gather_rows(NodeId X, const std::vector<std::ptrdiff_t>& rows);

  /// Per-segment mean of the rows of X (n×d): out[s] = mean of rows with
  /// seg[i] == s. Every segment in [0, n_segments) must be non-empty.
  NodeId segment_mean(NodeId X, const std::vector<std::size_t>& seg,
                      std::size_t n_segments);

  /// Attention aggregation: within each segment s, weights = softmax of the
  /// member scores and out[s] = Σ weight_i · values[i]. scores is rank-1 of
  /// length n, values is n×d. Every segment must be non-empty.
  NodeId segment_attention(NodeId scores, NodeId values,
                           const std::vector<std::size_t>& seg,
                           std::size_t n_segments);

  /// Column-wise concatenation of two matrices with equal row counts.
  NodeId concat_cols(NodeId A, NodeId B);

  // ----- execution -----------------------------------------------------------

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  const Tensor& grad(NodeId id) const { return nodes_[id].grad; }

  /// Reverse-mode pass from a scalar root. Accumulates into node gradients;
  /// may be called once per tape.
  void backward(NodeId root, double seed = 1.0);

  /// Adds scale·(node gradient) into every bound parameter's grad, in node
  /// creation order.
  void apply_param_grads(double scale = 1.0);

  void reset();
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Param* bound = nullptr;
    bool touched = false;
    std::function<void(Tape&, Node&)> back;  // empty for inputs
  };

  NodeId push(Tensor value, std::function<void(Tape&, Node&)> back);
  Node& node(NodeId id) { return nodes_[id]; }

  /// Marks the node as carrying gradient and hands out its buffer.
  double* grad_ptr(NodeId id) {
    Node& n = nodes_[id];
    n.touched = true;
    return n.grad.data();
  }

  std::vector<Node> nodes_;
  bool ran_backward_ = false;
};

}  // namespace sepsisrl
