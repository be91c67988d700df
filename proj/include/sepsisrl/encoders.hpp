#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "sepsisrl/params.hpp"
#include "sepsisrl/rng.hpp"
#include "sepsisrl/tape.hpp"
#include "sepsisrl/tensor.hpp"
#include "sepsisrl/trajgraph.hpp"

namespace sepsisrl::enc {

inline constexpr std::size_t kLatentSize = 64;

/// Canonical, storage-order-independent form of a list of graph snapshots,
/// stacked for batched processing. Row order: graphs in list order, timesteps
/// in time order within each graph.
struct PackedBatch {
  Tensor patient;                       // G × |𝓘|
  Tensor steps;                         // N × |𝓣| (N = total timesteps)
  std::vector<std::size_t> step_graph;  // N: owning graph of each step row
  std::vector<std::ptrdiff_t> step_prev;  // N: previous step row or -1
  Tensor incoming_action;               // N × 25: attr of the incoming action
                                        // edge (zero row at the first step)
  std::size_t graph_count = 0;

  std::size_t step_count() const { return step_graph.size(); }
};

/// Validates every snapshot (throws DataError with the first violation) and
/// packs them. Works from node/edge types and time indices only, so any
/// storage order of the same graph packs identically.
PackedBatch pack_snapshots(const std::vector<const graph::Graph*>& snaps);

// --------------------------------------------------------------------------
// Flat baseline encoder: MLP over [variant obs ⊕ previous-action one-hot].
// --------------------------------------------------------------------------

struct AeConfig {
  std::size_t obs_dim = 33;  // time-variant feature count in flat grouping
  std::size_t latent = kLatentSize;
};

class AeEncoder {
 public:
  /// Layers (obs_dim+25, 64), (64, 128), (128, latent); ReLU after the two
  /// hidden layers, linear latent output.
  static AeEncoder create(const AeConfig& cfg, Rng& rng);

  // Param handles point into the owned ParamSet: movable, not copyable.
  AeEncoder(const AeEncoder&) = delete;
  AeEncoder& operator=(const AeEncoder&) = delete;
  AeEncoder(AeEncoder&&) = default;
  AeEncoder& operator=(AeEncoder&&) = default;

  /// inputs: n × (obs_dim + 25). Returns an n × latent tape node.
  Tape::NodeId encode_on_tape(Tape& t, Tape::NodeId inputs) const;

  /// Inference-only convenience: runs a scratch tape forward.
  Tensor encode_values(const Tensor& inputs) const;

  const AeConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

 private:
  AeEncoder() = default;

  AeConfig cfg_;
  ParamSet params_;
  Param* w1_ = nullptr;
  Param* b1_ = nullptr;
  Param* w2_ = nullptr;
  Param* b2_ = nullptr;
  Param* w3_ = nullptr;
  Param* b3_ = nullptr;
};

// --------------------------------------------------------------------------
// Heterogeneous graph encoders.
// --------------------------------------------------------------------------

enum class GnnVariant { kSage, kGatv2 };

struct GnnConfig {
  GnnVariant variant = GnnVariant::kSage;
  std::size_t invariant_dim = 4;
  std::size_t variant_dim = 34;
  std::size_t f_out = 64;
  std::size_t n_conv = 2;  // selected default for SAGE; GATv2 default is 1
  std::size_t latent = kLatentSize;

  static GnnConfig defaults(GnnVariant variant);
};

/// One relation's parameters inside a conv layer. SAGE uses self/neigh/bias;
/// the attention variant additionally learns source/target/edge projections
/// and the scoring vector.
struct RelationParams {
  Param* w_self = nullptr;
  Param* bias = nullptr;
  Param* w_neigh = nullptr;  // SAGE only
  Param* w_src = nullptr;    // attention only
  Param* w_tgt = nullptr;    // attention only
  Param* w_edge = nullptr;   // attention only
  Param* att = nullptr;      // attention only
};

struct ConvLayerParams {
  RelationParams action;              // Timestep_t -> Timestep_{t+1}
  RelationParams patient_to_timestep; // Patient -> Timestep
  RelationParams timestep_to_patient; // Timestep -> Patient
};

class GnnEncoder {
 public:
  static GnnEncoder create(const GnnConfig& cfg, Rng& rng);

  GnnEncoder(const GnnEncoder&) = delete;
  GnnEncoder& operator=(const GnnEncoder&) = delete;
  GnnEncoder(GnnEncoder&&) = default;
  GnnEncoder& operator=(GnnEncoder&&) = default;

  /// Batched snapshot encoding: input projections per node type, n_conv
  /// heterogeneous message-passing layers, per-type mean pooling, sum over
  /// types, and the (f_out, latent) head. Returns a G × latent tape node.
  Tape::NodeId encode_on_tape(Tape& t, const PackedBatch& batch) const;

  Tensor encode_values(const PackedBatch& batch) const;

  /// Single-snapshot convenience used by tests and diagnostics.
  std::vector<double> encode_snapshot(const graph::Graph& snapshot) const;

  const GnnConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  const std::vector<ConvLayerParams>& conv_layers() const { return conv_; }

 private:
  GnnEncoder() = default;

  GnnConfig cfg_;
  ParamSet params_;
  Param* proj_patient_w_ = nullptr;
  Param* proj_patient_b_ = nullptr;
  Param* proj_step_w_ = nullptr;
  Param* proj_step_b_ = nullptr;
  std::vector<ConvLayerParams> conv_;
  Param* head_w_ = nullptr;
  Param* head_b_ = nullptr;
};

/// Attention weights of one target over its same-relation neighbors:
/// score_u = attᵀ·leakyReLU(W_s·h_u + W_t·h_v + W_e·e_uv), slope 0.2,
/// weights = softmax(scores). Throws DataError on an empty neighborhood.
std::vector<double> attention_coefficients(const std::vector<double>& target,
                                           const std::vector<std::vector<double>>& neighbors,
                                           const std::vector<std::vector<double>>& edge_attrs,
                                           const Tensor& w_src, const Tensor& w_tgt,
                                           const Tensor& w_edge, const Tensor& att);

// --------------------------------------------------------------------------
// Shared next-observation decoder.
// --------------------------------------------------------------------------

struct DecoderConfig {
  std::size_t latent = kLatentSize;
  std::size_t obs_dim = 34;  // 34 for graph grouping, 33 for flat grouping
};

class Decoder {
 public:
  /// Layers (latent+25, 64), (64, 128), (128, obs_dim); ReLU after the two
  /// hidden layers, linear output interpreted as a Gaussian mean.
  static Decoder create(const DecoderConfig& cfg, Rng& rng);

  Decoder(const Decoder&) = delete;
  Decoder& operator=(const Decoder&) = delete;
  Decoder(Decoder&&) = default;
  Decoder& operator=(Decoder&&) = default;

  /// latents: n × latent node; action one-hots for the in-between action are
  /// concatenated before decoding. Returns an n × obs_dim node.
  Tape::NodeId decode_on_tape(Tape& t, Tape::NodeId latents,
                              const Tensor& action_onehots) const;

  Tensor decode_values(const Tensor& latents, const Tensor& action_onehots) const;

  const DecoderConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

 private:
  Decoder() = default;

  DecoderConfig cfg_;
  ParamSet params_;
  Param* w1_ = nullptr;
  Param* b1_ = nullptr;
  Param* w2_ = nullptr;
  Param* b2_ = nullptr;
  Param* w3_ = nullptr;
  Param* b3_ = nullptr;
};

}  // namespace sepsisrl::enc
