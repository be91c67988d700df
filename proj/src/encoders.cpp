#include "sepsisrl/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sepsisrl/errors.hpp"
#include "sepsisrl/kernels.hpp"

namespace sepsisrl::enc {

namespace {

constexpr double kAttentionSlope = 0.2;

Tensor glorot_vector(std::size_t n, Rng& rng) {
  const double a = std::sqrt(6.0 / (static_cast<double>(n) + 1.0));
  Tensor v({n});
  for (std::size_t i = 0; i < n; ++i) v[i] = rng.uniform(-a, a);
  return v;
}

Tensor zeros(std::size_t n) { return Tensor({n}, 0.0); }

/// Relation edge-attribute widths: the action relation carries the 25-way
/// one-hot; both patient links carry the scalar weight 1.
constexpr std::size_t kActionAttrDim = 25;
constexpr std::size_t kLinkAttrDim = 1;

RelationParams make_relation(ParamSet& ps, const std::string& prefix, GnnVariant variant,
                             std::size_t f, std::size_t edge_dim, Rng& rng) {
  RelationParams r;
  r.w_self = &ps.add(prefix + ".W_self", glorot_uniform(f, f, rng));
  if (variant == GnnVariant::kSage) {
    r.w_neigh = &ps.add(prefix + ".W_neigh", glorot_uniform(f, f, rng));
    r.bias = &ps.add(prefix + ".b", zeros(f));
  } else {
    r.bias = &ps.add(prefix + ".b", zeros(f));
    r.w_src = &ps.add(prefix + ".W_src", glorot_uniform(f, f, rng));
    r.w_tgt = &ps.add(prefix + ".W_tgt", glorot_uniform(f, f, rng));
    r.w_edge = &ps.add(prefix + ".W_edge", glorot_uniform(f, edge_dim, rng));
    r.att = &ps.add(prefix + ".att", glorot_vector(f, rng));
  }
  return r;
}

}  // namespace

PackedBatch pack_snapshots(const std::vector<const graph::Graph*>& snaps) {
  using graph::EdgeType;
  using graph::GraphKind;
  if (snaps.empty()) throw DataError("pack_snapshots: no snapshots given");

  std::size_t total_steps = 0;
  for (const auto* g : snaps) {
    if (g == nullptr) throw DataError("pack_snapshots: null snapshot");
    if (g->kind != GraphKind::kSnapshot) {
      throw DataError("pack_snapshots: full trajectory graphs carry the outcome "
                      "and must not be encoded; pass prefix snapshots");
    }
    const auto violations = graph::validate_graph(*g);
    if (!violations.empty()) {
      throw DataError("pack_snapshots: invalid snapshot: " + violations.front());
    }
    total_steps += g->timestep_count();
  }

  const std::size_t di = snaps[0]->nodes[snaps[0]->patient_node()].features.size();
  const auto first_steps = snaps[0]->timestep_nodes_in_order();
  const std::size_t dv = snaps[0]->nodes[first_steps[0]].features.size();

  PackedBatch b;
  b.graph_count = snaps.size();
  b.patient = Tensor({snaps.size(), di});
  b.steps = Tensor({total_steps, dv});
  b.incoming_action = Tensor({total_steps, kActionAttrDim}, 0.0);
  b.step_graph.resize(total_steps);
  b.step_prev.resize(total_steps);

  std::size_t row = 0;
  for (std::size_t gi = 0; gi < snaps.size(); ++gi) {
    const graph::Graph& g = *snaps[gi];
    const auto& pat = g.nodes[g.patient_node()].features;
    if (pat.size() != di) {
      throw DimensionError("pack_snapshots: patient feature widths differ");
    }
    for (std::size_t j = 0; j < di; ++j) b.patient(gi, j) = pat[j];

    const auto order = g.timestep_nodes_in_order();
    const std::size_t base = row;
    // Node index -> packed row for this graph's timesteps.
    std::vector<std::size_t> node_row(g.nodes.size(), 0);
    for (std::size_t k = 0; k < order.size(); ++k) {
      const auto& feats = g.nodes[order[k]].features;
      if (feats.size() != dv) {
        throw DimensionError("pack_snapshots: timestep feature widths differ");
      }
      for (std::size_t j = 0; j < dv; ++j) b.steps(row, j) = feats[j];
      b.step_graph[row] = gi;
      b.step_prev[row] = k == 0 ? -1 : static_cast<std::ptrdiff_t>(base + k - 1);
      node_row[order[k]] = row;
      ++row;
    }
    for (const auto& e : g.edges) {
      if (e.type != EdgeType::kAction) continue;
      const std::size_t dst_row = node_row[e.dst];
      for (std::size_t j = 0; j < kActionAttrDim; ++j) {
        b.incoming_action(dst_row, j) = e.attrs[j];
      }
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// AeEncoder
// ---------------------------------------------------------------------------

AeEncoder AeEncoder::create(const AeConfig& cfg, Rng& rng) {
  AeEncoder e;
  e.cfg_ = cfg;
  const std::size_t in = cfg.obs_dim + kActionAttrDim;
  e.w1_ = &e.params_.add("enc1.W", glorot_uniform(64, in, rng));
  e.b1_ = &e.params_.add("enc1.b", zeros(64));
  e.w2_ = &e.params_.add("enc2.W", glorot_uniform(128, 64, rng));
  e.b2_ = &e.params_.add("enc2.b", zeros(128));
  e.w3_ = &e.params_.add("enc3.W", glorot_uniform(cfg.latent, 128, rng));
  e.b3_ = &e.params_.add("enc3.b", zeros(cfg.latent));
  return e;
}

Tape::NodeId AeEncoder::encode_on_tape(Tape& t, Tape::NodeId inputs) const {
  const Tensor& x = t.value(inputs);
  if (x.rank() != 2 || x.cols() != cfg_.obs_dim + kActionAttrDim) {
    throw DimensionError("AeEncoder: expected n x " +
                         std::to_string(cfg_.obs_dim + kActionAttrDim) +
                         " inputs, got " + x.shape_string());
  }
  Tape::NodeId h = t.relu(t.batch_linear(inputs, t.param(*w1_), t.param(*b1_)));
  h = t.relu(t.batch_linear(h, t.param(*w2_), t.param(*b2_)));
  return t.batch_linear(h, t.param(*w3_), t.param(*b3_));
}

Tensor AeEncoder::encode_values(const Tensor& inputs) const {
  Tape t;
  return t.value(encode_on_tape(t, t.leaf(inputs)));
}

// ---------------------------------------------------------------------------
// GnnEncoder
// ---------------------------------------------------------------------------

GnnConfig GnnConfig::defaults(GnnVariant variant) {
  GnnConfig cfg;
  cfg.variant = variant;
  cfg.n_conv = variant == GnnVariant::kSage ? 2 : 1;
  return cfg;
}

GnnEncoder GnnEncoder::create(const GnnConfig& cfg, Rng& rng) {
  if (cfg.f_out == 0 || cfg.n_conv == 0 || cfg.latent == 0) {
    throw ConfigError("GnnEncoder: f_out, n_conv and latent must be positive");
  }
  GnnEncoder e;
  e.cfg_ = cfg;
  const std::size_t f = cfg.f_out;
  e.proj_patient_w_ =
      &e.params_.add("proj.patient.W", glorot_uniform(f, cfg.invariant_dim, rng));
  e.proj_patient_b_ = &e.params_.add("proj.patient.b", zeros(f));
  e.proj_step_w_ =
      &e.params_.add("proj.timestep.W", glorot_uniform(f, cfg.variant_dim, rng));
  e.proj_step_b_ = &e.params_.add("proj.timestep.b", zeros(f));

  for (std::size_t layer = 1; layer <= cfg.n_conv; ++layer) {
    const std::string p = "conv" + std::to_string(layer);
    ConvLayerParams lp;
    lp.action = make_relation(e.params_, p + ".action", cfg.variant, f,
                              kActionAttrDim, rng);
    lp.patient_to_timestep = make_relation(e.params_, p + ".patient_to_timestep",
                                           cfg.variant, f, kLinkAttrDim, rng);
    lp.timestep_to_patient = make_relation(e.params_, p + ".timestep_to_patient",
                                           cfg.variant, f, kLinkAttrDim, rng);
    e.conv_.push_back(lp);
  }
  e.head_w_ = &e.params_.add("head.W", glorot_uniform(cfg.latent, f, rng));
  e.head_b_ = &e.params_.add("head.b", zeros(cfg.latent));
  return e;
}

Tape::NodeId GnnEncoder::encode_on_tape(Tape& t, const PackedBatch& batch) const {
  if (batch.patient.cols() != cfg_.invariant_dim ||
      batch.steps.cols() != cfg_.variant_dim) {
    throw DimensionError("GnnEncoder: packed batch widths (" +
                         batch.patient.shape_string() + ", " +
                         batch.steps.shape_string() +
                         ") do not match the configured schema");
  }
  const std::size_t G = batch.graph_count;

  // The patient row feeding each timestep row (for p2t messages and
  // attention targets).
  std::vector<std::ptrdiff_t> step_graph_rows(batch.step_count());
  for (std::size_t i = 0; i < batch.step_count(); ++i) {
    step_graph_rows[i] = static_cast<std::ptrdiff_t>(batch.step_graph[i]);
  }

  Tape::NodeId h_pat = t.batch_linear(t.leaf(batch.patient), t.param(*proj_patient_w_),
                                      t.param(*proj_patient_b_));
  Tape::NodeId h_step = t.batch_linear(t.leaf(batch.steps), t.param(*proj_step_w_),
                                       t.param(*proj_step_b_));
  const Tape::NodeId action_attrs = t.leaf(batch.incoming_action);
  const Tape::NodeId link_attrs =
      t.leaf(Tensor({batch.step_count(), kLinkAttrDim}, 1.0));

  for (const ConvLayerParams& lp : conv_) {
    Tape::NodeId m_action, m_p2t, m_t2p;
    const Tape::NodeId prev = t.gather_rows(h_step, batch.step_prev);
    const Tape::NodeId pat_of_step = t.gather_rows(h_pat, step_graph_rows);

    if (cfg_.variant == GnnVariant::kSage) {
      // Messages are W_neigh applied to the neighborhood mean. Action and
      // patient neighborhoods are singletons (or empty at the first step,
      // where the gathered zero row yields the zero message).
      m_action = t.batch_linear_nobias(prev, t.param(*lp.action.w_neigh));
      m_p2t = t.batch_linear_nobias(pat_of_step,
                                    t.param(*lp.patient_to_timestep.w_neigh));
      const Tape::NodeId step_mean = t.segment_mean(h_step, batch.step_graph, G);
      m_t2p = t.batch_linear_nobias(step_mean,
                                    t.param(*lp.timestep_to_patient.w_neigh));
    } else {
      // Attention values are W_src·h_u + W_edge·e_uv. Singleton
      // neighborhoods make the softmax weight exactly 1, so the action and
      // patient->timestep messages are their (zero-filled) values; the
      // timestep->patient relation attends over all timesteps.
      m_action = t.add(
          t.batch_linear_nobias(prev, t.param(*lp.action.w_src)),
          t.batch_linear_nobias(action_attrs, t.param(*lp.action.w_edge)));
      m_p2t = t.add(t.batch_linear_nobias(pat_of_step,
                                          t.param(*lp.patient_to_timestep.w_src)),
                    t.batch_linear_nobias(
                        link_attrs, t.param(*lp.patient_to_timestep.w_edge)));
      const Tape::NodeId values = t.add(
          t.batch_linear_nobias(h_step, t.param(*lp.timestep_to_patient.w_src)),
          t.batch_linear_nobias(link_attrs,
                                t.param(*lp.timestep_to_patient.w_edge)));
      const Tape::NodeId pre_score =
          t.add(values, t.batch_linear_nobias(
                            pat_of_step, t.param(*lp.timestep_to_patient.w_tgt)));
      const Tape::NodeId scores = t.linear_nobias(
          t.leaky_relu(pre_score, kAttentionSlope), t.param(*lp.timestep_to_patient.att));
      m_t2p = t.segment_attention(scores, values, batch.step_graph, G);
    }

    // Every relation targeting a node type contributes its self term, bias
    // and message; contributions are summed across relations, then ReLU.
    const Tape::NodeId step_self_action =
        t.batch_linear(h_step, t.param(*lp.action.w_self), t.param(*lp.action.bias));
    const Tape::NodeId step_self_p2t =
        t.batch_linear(h_step, t.param(*lp.patient_to_timestep.w_self),
                       t.param(*lp.patient_to_timestep.bias));
    const Tape::NodeId new_step =
        t.relu(t.add_many({step_self_action, m_action, step_self_p2t, m_p2t}));

    const Tape::NodeId pat_self =
        t.batch_linear(h_pat, t.param(*lp.timestep_to_patient.w_self),
                       t.param(*lp.timestep_to_patient.bias));
    const Tape::NodeId new_pat = t.relu(t.add(pat_self, m_t2p));

    h_step = new_step;
    h_pat = new_pat;
  }

  // Per-type mean pooling (the patient pool is the single patient vector),
  // summed across types, then the latent head.
  const Tape::NodeId step_pool = t.segment_mean(h_step, batch.step_graph, G);
  const Tape::NodeId pooled = t.add(h_pat, step_pool);
  return t.batch_linear(pooled, t.param(*head_w_), t.param(*head_b_));
}

Tensor GnnEncoder::encode_values(const PackedBatch& batch) const {
  Tape t;
  return t.value(encode_on_tape(t, batch));
}

std::vector<double> GnnEncoder::encode_snapshot(const graph::Graph& snapshot) const {
  const PackedBatch packed = pack_snapshots({&snapshot});
  const Tensor z = encode_values(packed);
  return std::vector<double>(z.data(), z.data() + z.size());
}

std::vector<double> attention_coefficients(
    const std::vector<double>& target, const std::vector<std::vector<double>>& neighbors,
    const std::vector<std::vector<double>>& edge_attrs, const Tensor& w_src,
    const Tensor& w_tgt, const Tensor& w_edge, const Tensor& att) {
  if (neighbors.empty()) {
    throw DataError("attention_coefficients: empty neighborhood");
  }
  if (edge_attrs.size() != neighbors.size()) {
    throw DimensionError("attention_coefficients: one edge attribute per neighbor");
  }
  const std::size_t f = att.size();
  if (w_src.rows() != f || w_tgt.rows() != f || w_edge.rows() != f) {
    throw DimensionError("attention_coefficients: projection output widths differ");
  }

  std::vector<double> tgt_proj(f, 0.0);
  kernels::matvec_bias(w_tgt.data(), target.data(), nullptr, tgt_proj.data(), f,
                       w_tgt.cols());

  std::vector<double> scores(neighbors.size());
  std::vector<double> q(f);
  std::vector<double> pre(f);
  for (std::size_t u = 0; u < neighbors.size(); ++u) {
    if (neighbors[u].size() != w_src.cols() || edge_attrs[u].size() != w_edge.cols()) {
      throw DimensionError("attention_coefficients: neighbor or edge width mismatch");
    }
    // pre = W_src h_u + W_tgt h_v + W_edge e_uv, built up through the bias slot.
    kernels::matvec_bias(w_src.data(), neighbors[u].data(), tgt_proj.data(), q.data(),
                         f, w_src.cols());
    kernels::matvec_bias(w_edge.data(), edge_attrs[u].data(), q.data(), pre.data(), f,
                         w_edge.cols());
    double s = 0.0;
    for (std::size_t j = 0; j < f; ++j) {
      const double x = pre[j] < 0.0 ? kAttentionSlope * pre[j] : pre[j];
      s += att[j] * x;
    }
    scores[u] = s;
  }

  const double max_s = *std::max_element(scores.begin(), scores.end());
  double sum = 0.0;
  for (double& s : scores) {
    s = std::exp(s - max_s);
    sum += s;
  }
  for (double& s : scores) s /= sum;
  return scores;
}

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

Decoder Decoder::create(const DecoderConfig& cfg, Rng& rng) {
  Decoder d;
  d.cfg_ = cfg;
  const std::size_t in = cfg.latent + kActionAttrDim;
  d.w1_ = &d.params_.add("dec1.W", glorot_uniform(64, in, rng));
  d.b1_ = &d.params_.add("dec1.b", zeros(64));
  d.w2_ = &d.params_.add("dec2.W", glorot_uniform(128, 64, rng));
  d.b2_ = &d.params_.add("dec2.b", zeros(128));
  d.w3_ = &d.params_.add("dec3.W", glorot_uniform(cfg.obs_dim, 128, rng));
  d.b3_ = &d.params_.add("dec3.b", zeros(cfg.obs_dim));
  return d;
}

Tape::NodeId Decoder::decode_on_tape(Tape& t, Tape::NodeId latents,
                                     const Tensor& action_onehots) const {
  const Tensor& z = t.value(latents);
  if (z.rank() != 2 || z.cols() != cfg_.latent) {
    throw DimensionError("Decoder: expected n x " + std::to_string(cfg_.latent) +
                         " latents, got " + z.shape_string());
  }
  if (action_onehots.rank() != 2 || action_onehots.cols() != kActionAttrDim ||
      action_onehots.rows() != z.rows()) {
    throw DimensionError("Decoder: action one-hots " + action_onehots.shape_string() +
                         " do not match latents " + z.shape_string());
  }
  const Tape::NodeId x = t.concat_cols(latents, t.leaf(action_onehots));
  Tape::NodeId h = t.relu(t.batch_linear(x, t.param(*w1_), t.param(*b1_)));
  h = t.relu(t.batch_linear(h, t.param(*w2_), t.param(*b2_)));
  return t.batch_linear(h, t.param(*w3_), t.param(*b3_));
}

Tensor Decoder::decode_values(const Tensor& latents, const Tensor& action_onehots) const {
  Tape t;
  return t.value(decode_on_tape(t, t.leaf(latents), action_onehots));
}

}  // namespace sepsisrl::enc
