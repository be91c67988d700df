#include "sepsisrl/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <string>

#include "sepsisrl/adam.hpp"
#include "sepsisrl/errors.hpp"
#include "sepsisrl/tape.hpp"

namespace sepsisrl::train {

namespace {

constexpr std::size_t kActionCount = 25;
constexpr std::size_t kValSmoothingWindow = 10;

void format_double(char* buf, std::size_t n, double v) {
  std::snprintf(buf, n, "%.17g", v);
}

bool uses_graphs(EncoderKind kind) { return kind != EncoderKind::kFlat; }

void check_grouping(const cohort::Cohort& cohort, EncoderKind kind,
                    const char* where) {
  const auto want = uses_graphs(kind) ? cohort::EncoderMode::kGnn
                                      : cohort::EncoderMode::kAe;
  if (cohort.schema.mode != want) {
    throw ConfigError(std::string(where) + ": cohort grouping does not match the " +
                      to_string(kind) + " encoder (flat encoders need the flat "
                      "grouping, graph encoders the graph grouping)");
  }
}

Tensor gather_tensor_rows(const Tensor& src, const std::vector<std::size_t>& rows) {
  Tensor out({rows.size(), src.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double* from = src.data() + rows[i] * src.cols();
    std::copy(from, from + src.cols(), out.data() + i * out.cols());
  }
  return out;
}

struct BatchView {
  std::vector<std::size_t> rows;                 // dataset rows, batch order
  std::vector<const graph::Graph*> snapshots;    // graph kinds only
  std::size_t traj_count = 0;
};

BatchView collect_batch(const ReprDataset& ds, const std::vector<std::size_t>& traj_idx,
                        bool graphs) {
  BatchView view;
  view.traj_count = traj_idx.size();
  for (const std::size_t i : traj_idx) {
    const auto [begin, end] = ds.traj_rows.at(i);
    for (std::size_t r = begin; r < end; ++r) view.rows.push_back(r);
    if (graphs) {
      for (const graph::Graph& g : ds.snapshots.at(i)) view.snapshots.push_back(&g);
    }
  }
  return view;
}

/// Sum of trajectory losses over one batch; updates parameters when opt is
/// non-null.
double run_batch(const ReprModel& model, const ReprDataset& ds,
                 const std::vector<std::size_t>& traj_idx, Adam* opt) {
  const BatchView view = collect_batch(ds, traj_idx, uses_graphs(model.kind));
  const Tensor targets = gather_tensor_rows(ds.targets, view.rows);
  const Tensor actions = gather_tensor_rows(ds.decoder_actions, view.rows);

  Tape tape;
  Tape::NodeId latents;
  if (model.kind == EncoderKind::kFlat) {
    latents = model.flat->encode_on_tape(
        tape, tape.leaf(gather_tensor_rows(ds.flat_inputs, view.rows)));
  } else {
    latents = model.gnn->encode_on_tape(tape, enc::pack_snapshots(view.snapshots));
  }
  const Tape::NodeId pred = model.decoder->decode_on_tape(tape, latents, actions);
  const Tape::NodeId loss = tape.half_sum_squares_to(pred, targets);
  const double value = tape.value(loss).item();
  if (opt != nullptr) {
    opt->zero_grad();
    tape.backward(loss);
    tape.apply_param_grads();
    opt->step();
  }
  return value;
}

double smoothed_tail(const std::vector<double>& xs) {
  const std::size_t n = std::min(xs.size(), kValSmoothingWindow);
  const double sum = std::accumulate(xs.end() - static_cast<std::ptrdiff_t>(n),
                                     xs.end(), 0.0);
  return sum / static_cast<double>(n);
}

}  // namespace

std::string to_string(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::kFlat: return "ae";
    case EncoderKind::kSage: return "sage";
    case EncoderKind::kGatv2: return "gatv2";
  }
  throw ConfigError("unknown encoder kind");
}

EncoderKind parse_encoder_kind(const std::string& text) {
  if (text == "ae") return EncoderKind::kFlat;
  if (text == "sage") return EncoderKind::kSage;
  if (text == "gatv2") return EncoderKind::kGatv2;
  throw ConfigError("unknown encoder '" + text + "' (expected ae, sage, or gatv2)");
}

ReprTrainConfig ReprTrainConfig::defaults_for(EncoderKind kind) {
  ReprTrainConfig cfg;
  cfg.kind = kind;
  if (kind == EncoderKind::kFlat) {
    cfg.epochs = 600;
    cfg.learning_rate = 5e-4;
  } else {
    cfg.epochs = 200;
    cfg.learning_rate = 1e-3;
    cfg.f_out = 64;
    cfg.n_conv = kind == EncoderKind::kSage ? 2 : 1;
  }
  return cfg;
}

ReprModel ReprModel::create(const ReprTrainConfig& cfg,
                            const cohort::FeatureSchema& schema, Rng& rng) {
  ReprModel m;
  m.kind = cfg.kind;
  if (cfg.kind == EncoderKind::kFlat) {
    enc::AeConfig acfg;
    acfg.obs_dim = schema.variant_count();
    acfg.latent = cfg.latent;
    m.flat = enc::AeEncoder::create(acfg, rng);
  } else {
    enc::GnnConfig gcfg;
    gcfg.variant = cfg.kind == EncoderKind::kSage ? enc::GnnVariant::kSage
                                                  : enc::GnnVariant::kGatv2;
    gcfg.invariant_dim = schema.invariant_count();
    gcfg.variant_dim = schema.variant_count();
    gcfg.f_out = cfg.f_out;
    gcfg.n_conv = cfg.n_conv;
    gcfg.latent = cfg.latent;
    m.gnn = enc::GnnEncoder::create(gcfg, rng);
  }
  enc::DecoderConfig dcfg;
  dcfg.latent = cfg.latent;
  dcfg.obs_dim = schema.variant_count();
  m.decoder = enc::Decoder::create(dcfg, rng);
  return m;
}

std::vector<Param*> ReprModel::all_params() {
  std::vector<Param*> out = kind == EncoderKind::kFlat ? flat->params().all()
                                                       : gnn->params().all();
  for (Param* p : decoder->params().all()) out.push_back(p);
  return out;
}

std::vector<const Param*> ReprModel::all_params() const {
  std::vector<const Param*> out;
  const ParamSet& enc_ps = kind == EncoderKind::kFlat ? flat->params() : gnn->params();
  for (const Param* p : enc_ps.all()) out.push_back(p);
  for (const Param* p : decoder->params().all()) out.push_back(p);
  return out;
}

std::size_t ReprModel::latent_size() const {
  return kind == EncoderKind::kFlat ? flat->config().latent : gnn->config().latent;
}

ParamSnapshot snapshot_params(const std::vector<Param*>& params) {
  ParamSnapshot snap;
  snap.reserve(params.size());
  for (const Param* p : params) snap.push_back(p->value);
  return snap;
}

void restore_params(const std::vector<Param*>& params, const ParamSnapshot& snap) {
  if (params.size() != snap.size()) {
    throw DimensionError("restore_params: snapshot holds " +
                         std::to_string(snap.size()) + " tensors for " +
                         std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->value.shape() != snap[i].shape()) {
      throw DimensionError("restore_params: shape mismatch at parameter '" +
                           params[i]->name + "'");
    }
    params[i]->value = snap[i];
  }
}

ReprDataset build_repr_dataset(const cohort::Cohort& cohort, EncoderKind kind,
                               bool action_injection) {
  check_grouping(cohort, kind, "build_repr_dataset");
  const std::size_t var_dim = cohort.schema.variant_count();

  std::size_t rows = 0;
  for (const auto& t : cohort.trajectories) {
    if (t.length() < 2) {
      throw DataError("build_repr_dataset: trajectory '" + t.id +
                      "' is shorter than two steps");
    }
    rows += t.length() - 1;
  }

  ReprDataset ds;
  ds.traj_count = cohort.size();
  ds.targets = Tensor({rows, var_dim});
  ds.decoder_actions = Tensor({rows, kActionCount});
  if (kind == EncoderKind::kFlat) {
    ds.flat_inputs = Tensor({rows, var_dim + kActionCount});
  } else {
    ds.snapshots.reserve(cohort.size());
  }

  std::size_t r = 0;
  for (const auto& traj : cohort.trajectories) {
    const std::size_t T = traj.length();
    const std::size_t begin = r;
    if (kind != EncoderKind::kFlat) {
      const graph::Graph full = graph::build_trajectory_graph(traj, cohort.schema);
      std::vector<graph::Graph> snaps;
      snaps.reserve(T - 1);
      for (std::size_t t = 1; t <= T - 1; ++t) {
        snaps.push_back(graph::snapshot_at(full, t));
      }
      ds.snapshots.push_back(std::move(snaps));
    }
    for (std::size_t t = 1; t <= T - 1; ++t, ++r) {
      std::copy(traj.steps[t].begin(), traj.steps[t].end(),
                ds.targets.data() + r * var_dim);
      if (action_injection) {
        ds.decoder_actions(r, static_cast<std::size_t>(traj.actions[t - 1])) = 1.0;
      }
      if (kind == EncoderKind::kFlat) {
        double* row = ds.flat_inputs.data() + r * (var_dim + kActionCount);
        std::copy(traj.steps[t - 1].begin(), traj.steps[t - 1].end(), row);
        if (t >= 2) row[var_dim + static_cast<std::size_t>(traj.actions[t - 2])] = 1.0;
      }
    }
    ds.traj_rows.emplace_back(begin, r);
  }
  return ds;
}

double evaluate_repr_loss(const ReprModel& model, const ReprDataset& ds,
                          std::size_t batch_size) {
  if (ds.traj_count == 0) throw DataError("evaluate_repr_loss: empty dataset");
  if (batch_size == 0) throw ConfigError("evaluate_repr_loss: batch size zero");
  double total = 0.0;
  std::vector<std::size_t> chunk;
  for (std::size_t i = 0; i < ds.traj_count; i += batch_size) {
    chunk.clear();
    for (std::size_t j = i; j < std::min(ds.traj_count, i + batch_size); ++j) {
      chunk.push_back(j);
    }
    total += run_batch(model, ds, chunk, nullptr);
  }
  return total / static_cast<double>(ds.traj_count);
}

ReprTrainResult train_autoencoder(const cohort::SplitResult& split,
                                  const ReprTrainConfig& cfg) {
  if (cfg.epochs == 0) throw ConfigError("train_autoencoder: epochs must be > 0");
  if (cfg.batch_size == 0) throw ConfigError("train_autoencoder: batch size must be > 0");
  if (cfg.val_period == 0 || cfg.epochs % cfg.val_period != 0) {
    throw ConfigError("train_autoencoder: validation period must divide epochs");
  }
  if (split.train.size() == 0 || split.val.size() == 0) {
    throw DataError("train_autoencoder: train and validation splits must be non-empty");
  }

  Rng init_rng(derive_seed(cfg.seed, "repr-init"));
  ReprTrainResult result{ReprModel::create(cfg, split.train.schema, init_rng), {}, {}};
  ReprModel& model = result.model;
  const ReprDataset train_ds =
      build_repr_dataset(split.train, cfg.kind, cfg.action_injection);
  const ReprDataset val_ds = build_repr_dataset(split.val, cfg.kind, cfg.action_injection);

  const std::vector<Param*> params = model.all_params();
  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.learning_rate;
  Adam opt(params, adam_cfg);

  LossCurve& curve = result.curve;
  const auto validate_now = [&](std::size_t epoch) {
    const double v = evaluate_repr_loss(model, val_ds, cfg.batch_size);
    if (!std::isfinite(v)) {
      throw NumericError("train_autoencoder: validation loss diverged at epoch " +
                         std::to_string(epoch));
    }
    curve.val_epochs.push_back(epoch);
    curve.val.push_back(v);
    curve.val_smoothed.push_back(smoothed_tail(curve.val));
    const std::size_t i = curve.val.size() - 1;
    if (i == 0 || curve.val_smoothed[i] < curve.val_smoothed[curve.best_index]) {
      curve.best_index = i;
      result.best = snapshot_params(params);
    }
  };

  validate_now(0);
  const std::uint64_t batch_seed = derive_seed(cfg.seed, "repr-batches");
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto batches =
        cohort::make_batches(train_ds.traj_count, cfg.batch_size, batch_seed, epoch);
    double avg = 0.0;
    for (const auto& batch : batches) {
      const double batch_loss = run_batch(model, train_ds, batch.indices, &opt);
      if (!std::isfinite(batch_loss)) {
        throw NumericError("train_autoencoder: training loss diverged at epoch " +
                           std::to_string(epoch) + " (batch loss " +
                           std::to_string(batch_loss) + ")");
      }
      avg += batch_loss / static_cast<double>(batch.size());
    }
    curve.train.push_back(avg / static_cast<double>(batches.size()));
    if (epoch % cfg.val_period == 0) validate_now(epoch);
  }
  return result;
}

LatentDataset encode_dataset(const cohort::Cohort& cohort, const ReprModel& model) {
  check_grouping(cohort, model.kind, "encode_dataset");
  const std::size_t var_dim = cohort.schema.variant_count();
  LatentDataset out;
  out.latent_dim = model.latent_size();

  for (const auto& traj : cohort.trajectories) {
    const std::size_t T = traj.length();
    Tensor latents;
    if (model.kind == EncoderKind::kFlat) {
      Tensor inputs({T, var_dim + kActionCount}, 0.0);
      for (std::size_t t = 1; t <= T; ++t) {
        double* row = inputs.data() + (t - 1) * inputs.cols();
        std::copy(traj.steps[t - 1].begin(), traj.steps[t - 1].end(), row);
        if (t >= 2) row[var_dim + static_cast<std::size_t>(traj.actions[t - 2])] = 1.0;
      }
      latents = model.flat->encode_values(inputs);
    } else {
      const graph::Graph full = graph::build_trajectory_graph(traj, cohort.schema);
      const std::vector<graph::Graph> snaps = graph::snapshots(full);
      std::vector<const graph::Graph*> ptrs;
      ptrs.reserve(snaps.size());
      for (const auto& g : snaps) ptrs.push_back(&g);
      latents = model.gnn->encode_values(enc::pack_snapshots(ptrs));
    }

    LatentTrajectory lt;
    lt.id = traj.id;
    lt.steps.reserve(T);
    for (std::size_t t = 1; t <= T; ++t) {
      LatentStep step;
      step.latent.assign(latents.data() + (t - 1) * latents.cols(),
                         latents.data() + t * latents.cols());
      step.action = traj.actions[t - 1];
      step.done = t == T;
      step.reward = step.done ? static_cast<double>(traj.reward) : 0.0;
      lt.steps.push_back(std::move(step));
    }
    out.trajectories.push_back(std::move(lt));
  }
  return out;
}

std::vector<LatentTransition> flatten_transitions(const LatentDataset& ds) {
  std::vector<LatentTransition> out;
  for (const auto& traj : ds.trajectories) {
    for (std::size_t j = 0; j < traj.steps.size(); ++j) {
      LatentTransition tr;
      tr.s = traj.steps[j].latent;
      tr.a = traj.steps[j].action;
      tr.r = traj.steps[j].reward;
      tr.done = traj.steps[j].done;
      tr.s_next = tr.done ? std::vector<double>(ds.latent_dim, 0.0)
                          : traj.steps[j + 1].latent;
      out.push_back(std::move(tr));
    }
  }
  return out;
}

SweepResult run_sweep(const cohort::SplitResult& split, const ReprTrainConfig& base,
                      const std::vector<std::pair<std::size_t, std::size_t>>& grid) {
  if (grid.empty()) throw ConfigError("run_sweep: empty hyperparameter grid");
  SweepResult result;
  double best_metric = 0.0;
  for (const auto& [f_out, n_conv] : grid) {
    ReprTrainConfig cfg = base;
    cfg.f_out = f_out;
    cfg.n_conv = n_conv;
    SweepEntry entry{f_out, n_conv, train_autoencoder(split, cfg).curve};
    const double metric = entry.curve.val_smoothed.back();
    result.runs.push_back(std::move(entry));

    const auto& best = result.runs[result.best_index];
    const bool first = result.runs.size() == 1;
    const bool better =
        metric < best_metric ||
        (metric == best_metric &&
         (f_out < best.f_out || (f_out == best.f_out && n_conv < best.n_conv)));
    if (first || better) {
      best_metric = metric;
      result.best_index = result.runs.size() - 1;
    }
  }
  result.best_config = base;
  result.best_config.f_out = result.runs[result.best_index].f_out;
  result.best_config.n_conv = result.runs[result.best_index].n_conv;
  return result;
}

void write_loss_jsonl(const std::filesystem::path& path, const LossCurve& curve) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  char buf[64];
  const auto record = [&](const char* phase, std::size_t epoch, double loss) {
    format_double(buf, sizeof buf, loss);
    out << "{\"phase\":\"" << phase << "\",\"epoch\":" << epoch << ",\"loss\":" << buf
        << "}\n";
  };
  std::size_t vi = 0;
  const auto flush_val = [&](std::size_t epoch) {
    if (vi < curve.val_epochs.size() && curve.val_epochs[vi] == epoch) {
      record("val", epoch, curve.val[vi]);
      record("val_smoothed", epoch, curve.val_smoothed[vi]);
      ++vi;
    }
  };
  flush_val(0);
  for (std::size_t e = 1; e <= curve.train.size(); ++e) {
    record("train", e, curve.train[e - 1]);
    flush_val(e);
  }
  if (!out.good()) throw IoError("failed writing '" + path.string() + "'");
}

void write_sweep_csv(const std::filesystem::path& path, const SweepResult& result) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "f_out,n_conv,final_train_loss,final_val_loss,final_val_smoothed,selected\n";
  char buf[64];
  for (std::size_t i = 0; i < result.runs.size(); ++i) {
    const auto& run = result.runs[i];
    out << run.f_out << ',' << run.n_conv << ',';
    format_double(buf, sizeof buf, run.curve.train.back());
    out << buf << ',';
    format_double(buf, sizeof buf, run.curve.val.back());
    out << buf << ',';
    format_double(buf, sizeof buf, run.curve.val_smoothed.back());
    out << buf << ',' << (i == result.best_index ? 1 : 0) << '\n';
  }
  if (!out.good()) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace sepsisrl::train
