#include "sepsisrl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <string>

#include "sepsisrl/errors.hpp"

namespace sepsisrl::policy {

namespace {

constexpr double kProbFloor = 1e-6;

Tensor zeros(std::size_t n) { return Tensor({n}, 0.0); }
Tensor zeros(std::size_t r, std::size_t c) { return Tensor({r, c}, 0.0); }

std::vector<double> softmax_stable(const double* logits, std::size_t n) {
  const double mx = *std::max_element(logits, logits + n);
  std::vector<double> p(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (double& x : p) x /= sum;
  return p;
}

Tensor batch_of(const std::vector<const train::LatentTransition*>& batch,
                std::size_t dim, bool next) {
  Tensor out({batch.size(), dim});
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& v = next ? batch[i]->s_next : batch[i]->s;
    if (v.size() != dim) {
      throw DimensionError("dbcq: transition state width " + std::to_string(v.size()) +
                           " does not match the configured latent size " +
                           std::to_string(dim));
    }
    std::copy(v.begin(), v.end(), out.data() + i * dim);
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Behavior cloning
// ---------------------------------------------------------------------------

BcDataset build_bc_dataset(const cohort::Cohort& cohort) {
  const std::size_t inv = cohort.schema.invariant_count();
  const std::size_t var = cohort.schema.variant_count();
  std::size_t rows = 0;
  for (const auto& t : cohort.trajectories) rows += t.length();

  BcDataset ds;
  ds.obs = Tensor({rows, inv + var});
  ds.labels.reserve(rows);
  std::size_t r = 0;
  for (const auto& traj : cohort.trajectories) {
    for (std::size_t t = 0; t < traj.length(); ++t, ++r) {
      double* row = ds.obs.data() + r * (inv + var);
      std::copy(traj.invariant_obs.begin(), traj.invariant_obs.end(), row);
      std::copy(traj.steps[t].begin(), traj.steps[t].end(), row + inv);
      ds.labels.push_back(static_cast<std::size_t>(traj.actions[t]));
    }
  }
  return ds;
}

BcModel BcModel::create(const BcConfig& cfg, Rng& rng) {
  if (cfg.obs_dim == 0 || cfg.hidden == 0) {
    throw ConfigError("BcModel: zero-sized layer");
  }
  BcModel m;
  m.cfg = cfg;
  m.w1_ = &m.params.add("l1.W", glorot_uniform(cfg.hidden, cfg.obs_dim, rng));
  m.b1_ = &m.params.add("l1.b", zeros(cfg.hidden));
  m.g1_ = &m.params.add("bn1.gamma", Tensor({cfg.hidden}, 1.0));
  m.be1_ = &m.params.add("bn1.beta", zeros(cfg.hidden));
  m.w2_ = &m.params.add("l2.W", glorot_uniform(cfg.hidden, cfg.hidden, rng));
  m.b2_ = &m.params.add("l2.b", zeros(cfg.hidden));
  m.g2_ = &m.params.add("bn2.gamma", Tensor({cfg.hidden}, 1.0));
  m.be2_ = &m.params.add("bn2.beta", zeros(cfg.hidden));
  m.w3_ = &m.params.add("head.W", zeros(kActionCount, cfg.hidden));
  m.b3_ = &m.params.add("head.b", zeros(kActionCount));
  m.bn1 = BatchNormState(cfg.hidden);
  m.bn2 = BatchNormState(cfg.hidden);
  return m;
}

Tape::NodeId BcModel::logits_train(Tape& t, Tape::NodeId inputs) {
  Tape::NodeId h = t.batch_linear(inputs, t.param(*w1_), t.param(*b1_));
  h = t.relu(t.batch_norm_train(h, t.param(*g1_), t.param(*be1_), &bn1,
                                cfg.bn_momentum, cfg.bn_eps));
  h = t.batch_linear(h, t.param(*w2_), t.param(*b2_));
  h = t.relu(t.batch_norm_train(h, t.param(*g2_), t.param(*be2_), &bn2,
                                cfg.bn_momentum, cfg.bn_eps));
  return t.batch_linear(h, t.param(*w3_), t.param(*b3_));
}

Tensor BcModel::logits_eval(const Tensor& inputs) const {
  Tape t;
  Tape::NodeId h = t.batch_linear(t.leaf(inputs), t.param(*w1_), t.param(*b1_));
  h = t.relu(t.batch_norm_eval(h, t.param(*g1_), t.param(*be1_), bn1, cfg.bn_eps));
  h = t.batch_linear(h, t.param(*w2_), t.param(*b2_));
  h = t.relu(t.batch_norm_eval(h, t.param(*g2_), t.param(*be2_), bn2, cfg.bn_eps));
  return t.value(t.batch_linear(h, t.param(*w3_), t.param(*b3_)));
}

BcTrainResult train_behavior_cloning(const BcDataset& data, const BcConfig& cfg) {
  if (data.size() == 0) throw DataError("train_behavior_cloning: empty dataset");
  if (data.obs.rank() != 2 || data.obs.cols() != cfg.obs_dim ||
      data.obs.rows() != data.size()) {
    throw DimensionError("train_behavior_cloning: observations are " +
                         data.obs.shape_string() + " for " +
                         std::to_string(data.size()) + " labels of width " +
                         std::to_string(cfg.obs_dim));
  }
  for (const std::size_t label : data.labels) {
    if (label >= kActionCount) {
      throw DataError("train_behavior_cloning: action label out of range");
    }
  }

  Rng init_rng(derive_seed(cfg.seed, "bc-init"));
  BcTrainResult result{BcModel::create(cfg, init_rng), 0.0, {}, false};
  BcModel& model = result.model;

  result.degenerate_labels =
      std::all_of(data.labels.begin(), data.labels.end(),
                  [&](std::size_t l) { return l == data.labels.front(); });
  if (result.degenerate_labels) {
    std::cerr << "warning: behavior-cloning labels contain a single action class\n";
  }

  const auto eval_loss = [&] {
    const Tensor logits = model.logits_eval(data.obs);
    double total = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double* row = logits.data() + i * kActionCount;
      const double mx = *std::max_element(row, row + kActionCount);
      double sum = 0.0;
      for (std::size_t j = 0; j < kActionCount; ++j) sum += std::exp(row[j] - mx);
      total += std::log(sum) + mx - row[data.labels[i]];
    }
    return total / static_cast<double>(data.size());
  };
  result.initial_loss = eval_loss();

  std::vector<Param*> params = model.params.all();
  AdamConfig acfg;
  acfg.lr = cfg.learning_rate;
  acfg.weight_decay = cfg.weight_decay;
  Adam opt(params, acfg);

  const std::uint64_t batch_seed = derive_seed(cfg.seed, "bc-batches");
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto batches =
        cohort::make_batches(data.size(), cfg.batch_size, batch_seed, epoch);
    double mean = 0.0;
    for (const auto& batch : batches) {
      Tensor obs({batch.size(), cfg.obs_dim});
      std::vector<std::size_t> labels(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const double* from = data.obs.data() + batch.indices[i] * cfg.obs_dim;
        std::copy(from, from + cfg.obs_dim, obs.data() + i * cfg.obs_dim);
        labels[i] = data.labels[batch.indices[i]];
      }
      Tape t;
      const Tape::NodeId loss =
          t.cross_entropy_logits_mean(model.logits_train(t, t.leaf(std::move(obs))), labels);
      const double value = t.value(loss).item();
      if (!std::isfinite(value)) {
        throw NumericError("train_behavior_cloning: loss diverged at epoch " +
                           std::to_string(epoch));
      }
      opt.zero_grad();
      t.backward(loss);
      t.apply_param_grads();
      opt.step();
      mean += value;
    }
    result.loss.push_back(mean / static_cast<double>(batches.size()));
  }
  return result;
}

double bc_accuracy(const BcModel& model, const BcDataset& data) {
  if (data.size() == 0) throw DataError("bc_accuracy: empty dataset");
  const Tensor logits = model.logits_eval(data.obs);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double* row = logits.data() + i * kActionCount;
    const std::size_t pick = static_cast<std::size_t>(
        std::max_element(row, row + kActionCount) - row);
    hits += pick == data.labels[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

std::vector<double> bc_probs_unfloored(const BcModel& model,
                                       const std::vector<double>& obs) {
  Tensor row({1, obs.size()});
  std::copy(obs.begin(), obs.end(), row.data());
  const Tensor logits = model.logits_eval(row);
  return softmax_stable(logits.data(), kActionCount);
}

std::vector<double> bc_probs(const BcModel& model, const std::vector<double>& obs) {
  std::vector<double> p = bc_probs_unfloored(model, obs);
  double sum = 0.0;
  for (double& x : p) {
    x = std::max(x, kProbFloor);
    sum += x;
  }
  for (double& x : p) x /= sum;
  return p;
}

// ---------------------------------------------------------------------------
// dBCQ
// ---------------------------------------------------------------------------

MlpHead MlpHead::create(std::size_t in_dim, std::size_t hidden, std::size_t out_dim,
                        Rng& rng) {
  if (in_dim == 0 || hidden == 0 || out_dim == 0) {
    throw ConfigError("MlpHead: zero-sized layer");
  }
  MlpHead m;
  m.w1_ = &m.params.add("l1.W", glorot_uniform(hidden, in_dim, rng));
  m.b1_ = &m.params.add("l1.b", zeros(hidden));
  m.w2_ = &m.params.add("l2.W", glorot_uniform(hidden, hidden, rng));
  m.b2_ = &m.params.add("l2.b", zeros(hidden));
  m.w3_ = &m.params.add("head.W", glorot_uniform(out_dim, hidden, rng));
  m.b3_ = &m.params.add("head.b", zeros(out_dim));
  return m;
}

Tape::NodeId MlpHead::forward(Tape& t, Tape::NodeId inputs) const {
  Tape::NodeId h = t.relu(t.batch_linear(inputs, t.param(*w1_), t.param(*b1_)));
  h = t.relu(t.batch_linear(h, t.param(*w2_), t.param(*b2_)));
  return t.batch_linear(h, t.param(*w3_), t.param(*b3_));
}

Tensor MlpHead::forward_values(const Tensor& inputs) const {
  Tape t;
  return t.value(forward(t, t.leaf(inputs)));
}

void polyak_update(MlpHead& target, const MlpHead& online, double c) {
  const auto tgt = target.params.all();
  const auto src = online.params.all();
  if (tgt.size() != src.size()) {
    throw DimensionError("polyak_update: parameter lists differ in length");
  }
  for (std::size_t i = 0; i < tgt.size(); ++i) {
    Tensor& tv = tgt[i]->value;
    const Tensor& sv = src[i]->value;
    if (tv.shape() != sv.shape()) {
      throw DimensionError("polyak_update: shape mismatch at '" + tgt[i]->name + "'");
    }
    for (std::size_t j = 0; j < tv.size(); ++j) {
      tv[j] = (1.0 - c) * tv[j] + c * sv[j];
    }
  }
}

DbcqModel DbcqModel::create(const DbcqConfig& cfg, Rng& rng) {
  DbcqModel m{MlpHead::create(cfg.latent, cfg.hidden, kActionCount, rng),
              MlpHead::create(cfg.latent, cfg.hidden, kActionCount, rng),
              MlpHead::create(cfg.latent, cfg.hidden, kActionCount, rng)};
  polyak_update(m.q_target, m.q_online, 1.0);  // start as an exact copy
  return m;
}

std::vector<double> latent_behavior_probs(const DbcqModel& model,
                                          const std::vector<double>& s) {
  Tensor row({1, s.size()});
  std::copy(s.begin(), s.end(), row.data());
  const Tensor logits = model.behavior.forward_values(row);
  return softmax_stable(logits.data(), kActionCount);
}

int dbcq_select_action(const std::vector<double>& q_values,
                       const std::vector<double>& behavior_probs, double tau) {
  if (q_values.size() != kActionCount || behavior_probs.size() != kActionCount) {
    throw DimensionError("dbcq_select_action: expected 25 Q-values and probabilities");
  }
  const double max_p =
      *std::max_element(behavior_probs.begin(), behavior_probs.end());
  int best = -1;
  for (std::size_t a = 0; a < kActionCount; ++a) {
    if (behavior_probs[a] / max_p < tau) continue;
    if (best < 0 || q_values[a] > q_values[static_cast<std::size_t>(best)]) {
      best = static_cast<int>(a);
    }
  }
  return best;  // the behavior argmax has ratio 1 >= tau, so best >= 0
}

std::vector<double> dbcq_targets(const std::vector<const train::LatentTransition*>& batch,
                                 const DbcqModel& model, const DbcqConfig& cfg) {
  std::vector<double> y(batch.size());
  const Tensor next = batch_of(batch, cfg.latent, true);
  const Tensor q_next = model.q_online.forward_values(next);
  const Tensor q_tgt = model.q_target.forward_values(next);
  const Tensor b_logits = model.behavior.forward_values(next);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i]->done) {
      y[i] = batch[i]->r;
      continue;
    }
    const std::vector<double> probs =
        softmax_stable(b_logits.data() + i * kActionCount, kActionCount);
    std::vector<double> q(q_next.data() + i * kActionCount,
                          q_next.data() + (i + 1) * kActionCount);
    const int a = dbcq_select_action(q, probs, cfg.tau);
    y[i] = batch[i]->r +
           cfg.gamma * q_tgt(i, static_cast<std::size_t>(a));
  }
  return y;
}

DbcqStepResult dbcq_train_step(const std::vector<const train::LatentTransition*>& batch,
                               DbcqModel& model, const DbcqConfig& cfg, Adam& opt_q,
                               Adam& opt_b) {
  if (batch.empty()) throw DataError("dbcq_train_step: empty batch");
  const std::vector<double> targets = dbcq_targets(batch, model, cfg);

  const Tensor states = batch_of(batch, cfg.latent, false);
  std::vector<std::size_t> actions(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    actions[i] = static_cast<std::size_t>(batch[i]->a);
  }

  DbcqStepResult result;
  {
    Tape t;
    const Tape::NodeId q_all = model.q_online.forward(t, t.leaf(states));
    const Tape::NodeId q_taken = t.select_per_row(q_all, actions);
    Tensor y({batch.size()});
    std::copy(targets.begin(), targets.end(), y.data());
    const Tape::NodeId loss = t.huber_mean_to(q_taken, y);
    result.td_loss = t.value(loss).item();
    if (!std::isfinite(result.td_loss)) {
      throw NumericError("dbcq_train_step: non-finite TD loss");
    }
    opt_q.zero_grad();
    t.backward(loss);
    t.apply_param_grads();
    opt_q.step();
  }
  {
    Tape t;
    const Tape::NodeId logits = model.behavior.forward(t, t.leaf(states));
    const Tape::NodeId loss = t.cross_entropy_logits_mean(logits, actions);
    result.ce_loss = t.value(loss).item();
    if (!std::isfinite(result.ce_loss)) {
      throw NumericError("dbcq_train_step: non-finite behavior loss");
    }
    opt_b.zero_grad();
    t.backward(loss);
    t.apply_param_grads();
    opt_b.step();
  }
  if (cfg.target_update_freq == 0 ||
      opt_q.steps_taken() % cfg.target_update_freq == 0) {
    polyak_update(model.q_target, model.q_online, cfg.polyak);
  }
  return result;
}

DbcqResult dbcq_train(const std::vector<train::LatentTransition>& transitions,
                      const DbcqConfig& cfg, const DbcqEvaluator& evaluator) {
  if (transitions.empty()) throw DataError("dbcq_train: no transitions");
  if (cfg.tau < 0.0 || cfg.tau > 1.0) {
    throw ConfigError("dbcq_train: tau must lie in [0, 1]");
  }
  if (cfg.gamma <= 0.0 || cfg.gamma > 1.0) {
    throw ConfigError("dbcq_train: gamma must lie in (0, 1]");
  }
  if (cfg.batch_size == 0 || cfg.eval_period == 0 || cfg.iterations == 0) {
    throw ConfigError("dbcq_train: batch size, eval period, and iterations must be > 0");
  }

  Rng init_rng(derive_seed(cfg.seed, "dbcq-init"));
  DbcqResult result{DbcqModel::create(cfg, init_rng), {}};
  DbcqModel& model = result.model;

  AdamConfig acfg;
  acfg.lr = cfg.learning_rate;
  Adam opt_q(model.q_online.params.all(), acfg);
  Adam opt_b(model.behavior.params.all(), acfg);

  Rng batch_rng(derive_seed(cfg.seed, "dbcq-batches"));
  std::vector<const train::LatentTransition*> batch(cfg.batch_size);
  double td_acc = 0.0;
  for (std::size_t iter = 1; iter <= cfg.iterations; ++iter) {
    for (std::size_t i = 0; i < cfg.batch_size; ++i) {
      batch[i] = &transitions[batch_rng.below(transitions.size())];
    }
    td_acc += dbcq_train_step(batch, model, cfg, opt_q, opt_b).td_loss;
    if (iter % cfg.eval_period == 0) {
      DbcqEvalPoint point;
      point.iteration = iter;
      point.score = evaluator ? evaluator(model) : 0.0;
      point.mean_td_loss = td_acc / static_cast<double>(cfg.eval_period);
      td_acc = 0.0;
      result.curve.push_back(point);
    }
  }
  return result;
}

}  // namespace sepsisrl::policy
