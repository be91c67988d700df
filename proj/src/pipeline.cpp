#include "sepsisrl/pipeline.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <utility>

#include <json.hpp>

#include "sepsisrl/checkpoint.hpp"
#include "sepsisrl/csv.hpp"
#include "sepsisrl/errors.hpp"
#include "sepsisrl/rng.hpp"
#include "sepsisrl/trajgraph.hpp"

namespace sepsisrl::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Small filesystem/json helpers
// ---------------------------------------------------------------------------

std::string join_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void ensure_out_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create run directory " + dir + ": " + ec.message());
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError("failed while writing " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_json_file(const std::string& path, const json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

double to_little_endian(double v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    auto bits = std::bit_cast<std::uint64_t>(v);
    bits = ((bits & 0x00000000000000ffULL) << 56) | ((bits & 0x000000000000ff00ULL) << 40) |
           ((bits & 0x0000000000ff0000ULL) << 24) | ((bits & 0x00000000ff000000ULL) << 8) |
           ((bits & 0x000000ff00000000ULL) >> 8) | ((bits & 0x0000ff0000000000ULL) >> 24) |
           ((bits & 0x00ff000000000000ULL) >> 40) | ((bits & 0xff00000000000000ULL) >> 56);
    return std::bit_cast<double>(bits);
  }
}

// ---------------------------------------------------------------------------
// Paths and run-directory layout
// ---------------------------------------------------------------------------

std::string cohort_path(const RunConfig& cfg) {
  return cfg.cohort_csv.empty() ? join_path(cfg.out_dir, "cohort.csv") : cfg.cohort_csv;
}

std::string grouping_name(const RunConfig& cfg) {
  return cfg.repr.kind == train::EncoderKind::kFlat ? "flat" : "gnn";
}

void require_file(const std::string& path, const std::string& producer) {
  if (!fs::exists(path))
    throw IoError(path + " not found; run `sepsis-rl " + producer + "` first");
}

// ---------------------------------------------------------------------------
// Stage manifests: resolved config + content hashes of all inputs/outputs
// ---------------------------------------------------------------------------

class Manifest {
 public:
  Manifest(const RunConfig& cfg, std::string stage)
      : cfg_(cfg),
        stage_(std::move(stage)),
        start_(std::chrono::steady_clock::now()),
        inputs_(json::object()),
        outputs_(json::object()),
        notes_(json::object()) {}

  void input(const std::string& path) { inputs_[path] = ckpt::sha256_file(path); }
  void output(const std::string& path) { outputs_[path] = ckpt::sha256_file(path); }
  void note(const std::string& key, const json& value) { notes_[key] = value; }

  void write() const {
    auto elapsed = std::chrono::steady_clock::now() - start_;
    json m;
    m["stage"] = stage_;
    m["config"] = json::parse(config_json(cfg_));
    m["config_hash"] = config_hash(cfg_);
    m["inputs"] = inputs_;
    m["outputs"] = outputs_;
    if (!notes_.empty()) m["notes"] = notes_;
    // Wall-clock fields vary between runs; every other field is deterministic.
    m["created_unix_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(
                               std::chrono::system_clock::now().time_since_epoch())
                               .count();
    m["duration_ms"] =
        std::chrono::duration_cast<std::chrono::milliseconds>(elapsed).count();
    write_json_file(join_path(cfg_.out_dir, "manifest_" + stage_ + ".json"), m);
  }

 private:
  const RunConfig& cfg_;
  std::string stage_;
  std::chrono::steady_clock::time_point start_;
  json inputs_, outputs_, notes_;
};

// ---------------------------------------------------------------------------
// Cohort loading, splitting, standardization
// ---------------------------------------------------------------------------

struct Prepared {
  cohort::FeatureSchema schema;  // grouped per the configured encoder kind
  cohort::SplitResult split;     // unstandardized
};

cohort::Cohort load_grouped_cohort(const RunConfig& cfg) {
  auto path = cohort_path(cfg);
  if (!fs::exists(path))
    throw IoError("cohort file not found at " + path +
                  "; run `sepsis-rl generate` or point [paths].cohort_csv at a dataset");
  auto c = cohort::load_csv(path, cohort::FeatureSchema::default_schema(cohort::EncoderMode::kGnn));
  if (cfg.repr.kind == train::EncoderKind::kFlat) c = cohort::to_flat_grouping(c);
  return c;
}

Prepared load_and_split(const RunConfig& cfg) {
  auto c = load_grouped_cohort(cfg);
  double rest = 1.0 - cfg.train_frac - cfg.val_frac;
  auto split = cohort::stratified_split(c, {cfg.train_frac, cfg.val_frac, rest}, cfg.split_seed);
  return {c.schema, std::move(split)};
}

std::string standardizer_path(const RunConfig& cfg) {
  return join_path(cfg.out_dir, "standardizer.json");
}

void save_standardizer(const std::string& path, const cohort::Standardizer& z,
                       const std::string& grouping) {
  json j;
  j["format"] = "sepsisrl-standardizer";
  j["version"] = 1;
  j["grouping"] = grouping;
  j["invariant_mean"] = z.invariant_mean;
  j["invariant_std"] = z.invariant_std;
  j["variant_mean"] = z.variant_mean;
  j["variant_std"] = z.variant_std;
  write_json_file(path, j);
}

cohort::Standardizer load_standardizer(const std::string& path, const std::string& grouping) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw DataError("corrupt standardizer " + path + ": " + e.what());
  }
  try {
    if (j.at("format") != "sepsisrl-standardizer")
      throw DataError("corrupt standardizer " + path + ": unrecognized format field");
    if (j.at("version").get<int>() != 1)
      throw DataError(path + ": unsupported standardizer version");
    if (j.at("grouping") != grouping)
      throw DataError(path + " was fitted for the '" + j.at("grouping").get<std::string>() +
                      "' feature grouping but this run uses '" + grouping +
                      "'; re-run `sepsis-rl train-encoder`");
    cohort::Standardizer z;
    z.invariant_mean = j.at("invariant_mean").get<std::vector<double>>();
    z.invariant_std = j.at("invariant_std").get<std::vector<double>>();
    z.variant_mean = j.at("variant_mean").get<std::vector<double>>();
    z.variant_std = j.at("variant_std").get<std::vector<double>>();
    return z;
  } catch (const json::exception& e) {
    throw DataError("corrupt standardizer " + path + ": " + e.what());
  }
}

/// Loads the saved standardizer or, if none exists yet, fits one on the
/// train split and saves it. Fitting is deterministic, so both paths yield
/// identical artifacts.
cohort::Standardizer load_or_fit_standardizer(const RunConfig& cfg,
                                              const cohort::SplitResult& split, Manifest& m) {
  auto path = standardizer_path(cfg);
  if (fs::exists(path)) {
    m.input(path);
    m.note("standardizer", "loaded");
    return load_standardizer(path, grouping_name(cfg));
  }
  auto z = cohort::Standardizer::fit(split.train);
  save_standardizer(path, z, grouping_name(cfg));
  m.output(path);
  m.note("standardizer", "fitted on the train split (none found on disk)");
  return z;
}

cohort::SplitResult apply_standardizer(const cohort::Standardizer& z,
                                       const cohort::SplitResult& split) {
  return {z.apply(split.train), z.apply(split.val), z.apply(split.test)};
}

// ---------------------------------------------------------------------------
// Model persistence on top of the checkpoint container
// ---------------------------------------------------------------------------

std::string encoder_kind_string(const RunConfig& cfg) { return train::to_string(cfg.repr.kind); }

std::string encoder_config_path(const RunConfig& cfg) {
  return join_path(cfg.out_dir, "encoder_config.json");
}

void save_encoder_config(const RunConfig& cfg, const train::ReprTrainConfig& rc) {
  json j;
  j["kind"] = train::to_string(rc.kind);
  j["latent"] = rc.latent;
  j["f_out"] = rc.f_out;
  j["n_conv"] = rc.n_conv;
  j["action_injection"] = rc.action_injection;
  j["seed"] = rc.seed;
  write_json_file(encoder_config_path(cfg), j);
}

/// The architecture actually on disk: a sweep may have selected a different
/// width/depth than the run config's starting point.
train::ReprTrainConfig load_encoder_config(const RunConfig& cfg) {
  auto path = encoder_config_path(cfg);
  require_file(path, "train-encoder");
  json j;
  try {
    j = json::parse(read_text_file(path));
    auto rc = cfg.repr;
    auto kind = train::parse_encoder_kind(j.at("kind").get<std::string>());
    if (kind != cfg.repr.kind)
      throw DataError("encoder on disk was trained as '" + j.at("kind").get<std::string>() +
                      "' but the run config asks for '" + encoder_kind_string(cfg) +
                      "'; re-run `sepsis-rl train-encoder`");
    rc.latent = j.at("latent").get<std::size_t>();
    rc.f_out = j.at("f_out").get<std::size_t>();
    rc.n_conv = j.at("n_conv").get<std::size_t>();
    rc.action_injection = j.at("action_injection").get<bool>();
    rc.seed = j.at("seed").get<std::uint64_t>();
    return rc;
  } catch (const json::exception& e) {
    throw DataError("corrupt encoder config " + path + ": " + e.what());
  }
}

ckpt::CheckpointMeta make_meta(const RunConfig& cfg, const std::string& kind,
                               const cohort::FeatureSchema& schema, std::uint64_t seed) {
  return ckpt::CheckpointMeta{kind, ckpt::schema_fingerprint(schema), seed, config_hash(cfg)};
}

void save_bc_model(const std::string& path, const policy::BcModel& model,
                   const ckpt::CheckpointMeta& meta) {
  std::vector<ckpt::NamedTensor> state;
  state.push_back({"bn1.running_mean", model.bn1.running_mean});
  state.push_back({"bn1.running_var", model.bn1.running_var});
  state.push_back({"bn1.batches_seen",
                   Tensor({1}, {static_cast<double>(model.bn1.batches_seen)})});
  state.push_back({"bn2.running_mean", model.bn2.running_mean});
  state.push_back({"bn2.running_var", model.bn2.running_var});
  state.push_back({"bn2.batches_seen",
                   Tensor({1}, {static_cast<double>(model.bn2.batches_seen)})});
  const policy::BcModel& cm = model;
  ckpt::save_checkpoint(path, meta, cm.params.all(), state);
}

void restore_bn(BatchNormState& bn, const ckpt::LoadedCheckpoint& loaded,
                const std::string& prefix) {
  const Tensor& mean = ckpt::find_state(loaded, prefix + ".running_mean");
  const Tensor& var = ckpt::find_state(loaded, prefix + ".running_var");
  Tensor::require_same_shape(bn.running_mean, mean, "checkpoint running_mean");
  Tensor::require_same_shape(bn.running_var, var, "checkpoint running_var");
  bn.running_mean = mean;
  bn.running_var = var;
  bn.batches_seen = static_cast<std::size_t>(
      ckpt::find_state(loaded, prefix + ".batches_seen").item());
}

policy::BcModel load_bc_model(const RunConfig& cfg, const cohort::FeatureSchema& schema,
                              Manifest& m) {
  auto path = join_path(cfg.out_dir, "bc.ckpt");
  require_file(path, "train-bc");
  m.input(path);
  auto bcc = cfg.bc;
  bcc.obs_dim = schema.total_count();
  Rng init(derive_seed(bcc.seed, "bc-init"));
  auto model = policy::BcModel::create(bcc, init);
  auto loaded = ckpt::load_checkpoint(path);
  ckpt::restore_params(loaded, "bc", ckpt::schema_fingerprint(schema), model.params.all());
  restore_bn(model.bn1, loaded, "bn1");
  restore_bn(model.bn2, loaded, "bn2");
  return model;
}

std::vector<const Param*> dbcq_params(const policy::DbcqModel& model) {
  std::vector<const Param*> all;
  for (const policy::MlpHead* head : {&model.q_online, &model.q_target, &model.behavior}) {
    auto part = head->params.all();
    all.insert(all.end(), part.begin(), part.end());
  }
  return all;
}

std::vector<Param*> dbcq_params_mut(policy::DbcqModel& model) {
  std::vector<Param*> all;
  for (policy::MlpHead* head : {&model.q_online, &model.q_target, &model.behavior}) {
    auto part = head->params.all();
    all.insert(all.end(), part.begin(), part.end());
  }
  return all;
}

// ---------------------------------------------------------------------------
// JSONL writers for the pipeline's own curves
// ---------------------------------------------------------------------------

void write_bc_loss_jsonl(const std::string& path, const policy::BcTrainResult& result) {
  std::ostringstream out;
  out << json{{"phase", "initial"}, {"epoch", 0}, {"loss", result.initial_loss}}.dump() << "\n";
  for (std::size_t e = 0; e < result.loss.size(); ++e)
    out << json{{"phase", "train"}, {"epoch", e + 1}, {"loss", result.loss[e]}}.dump() << "\n";
  write_text_file(path, out.str());
}

void write_wis_jsonl(const std::string& path, const std::vector<policy::DbcqEvalPoint>& curve) {
  std::ostringstream out;
  for (const auto& p : curve)
    out << json{{"iteration", p.iteration}, {"wis", p.score}, {"td_loss", p.mean_td_loss}}.dump()
        << "\n";
  write_text_file(path, out.str());
}

// ---------------------------------------------------------------------------
// Config binding
// ---------------------------------------------------------------------------

std::size_t checked_size(std::int64_t v, const std::string& key) {
  if (v < 0) throw ConfigError("config key '" + key + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

std::uint64_t checked_seed(std::int64_t v, const std::string& key) {
  if (v < 0) throw ConfigError("config key '" + key + "' must be non-negative");
  return static_cast<std::uint64_t>(v);
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "paths.out_dir", "paths.cohort_csv",
      "cohort.n_traj", "cohort.mortality_rate", "cohort.mean_length",
      "cohort.optimal_drift", "cohort.mismatch_penalty", "cohort.health_noise",
      "cohort.action_effect_scale", "cohort.feature_noise", "cohort.near_optimal_prob",
      "cohort.survival_slope", "cohort.dynamics_seed", "cohort.seed",
      "cohort.train_frac", "cohort.val_frac", "cohort.split_seed",
      "encoder.kind", "encoder.epochs", "encoder.learning_rate", "encoder.batch_size",
      "encoder.val_period", "encoder.latent", "encoder.f_out", "encoder.n_conv",
      "encoder.action_injection", "encoder.untrained", "encoder.seed",
      "encoder.sweep_f_out", "encoder.sweep_n_conv",
      "bc.hidden", "bc.epochs", "bc.learning_rate", "bc.weight_decay", "bc.batch_size",
      "bc.bn_momentum", "bc.bn_eps", "bc.seed",
      "policy.tau", "policy.gamma", "policy.polyak", "policy.target_update_freq",
      "policy.learning_rate", "policy.iterations", "policy.eval_period",
      "policy.batch_size", "policy.hidden",
      "wis.epsilon", "wis.gamma", "wis.discounted", "wis.ratio_floor",
      "wis.ratio_ceiling", "wis.tau",
      "run.seeds", "run.desk_scale",
  };
  return keys;
}

std::vector<std::size_t> size_array(const toml::Table& t, const std::string& key) {
  std::vector<std::size_t> out;
  for (auto v : t.get_int_array(key)) out.push_back(checked_size(v, key));
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

RunConfig default_run_config() {
  RunConfig cfg;
  cfg.repr = train::ReprTrainConfig::defaults_for(train::EncoderKind::kSage);
  cfg.repr.seed = 7;
  cfg.bc.seed = 7;
  cfg.seeds.assign(eval::kDefaultSeeds.begin(), eval::kDefaultSeeds.end());
  return cfg;
}

RunConfig run_config_from_toml(const toml::Table& t,
                               const std::optional<std::string>& encoder_kind_override) {
  for (const auto& key : t.keys())
    if (!known_keys().count(key))
      throw ConfigError(t.source() + ": unknown config key '" + key + "'");

  RunConfig cfg = default_run_config();

  cfg.out_dir = t.get_string_or("paths.out_dir", cfg.out_dir);
  cfg.cohort_csv = t.get_string_or("paths.cohort_csv", "");

  auto& syn = cfg.synthetic;
  syn.n_traj = checked_size(t.get_int_or("cohort.n_traj", static_cast<std::int64_t>(syn.n_traj)),
                            "cohort.n_traj");
  syn.mortality_rate = t.get_double_or("cohort.mortality_rate", syn.mortality_rate);
  syn.mean_length = t.get_double_or("cohort.mean_length", syn.mean_length);
  syn.optimal_drift = t.get_double_or("cohort.optimal_drift", syn.optimal_drift);
  syn.mismatch_penalty = t.get_double_or("cohort.mismatch_penalty", syn.mismatch_penalty);
  syn.health_noise = t.get_double_or("cohort.health_noise", syn.health_noise);
  syn.action_effect_scale = t.get_double_or("cohort.action_effect_scale", syn.action_effect_scale);
  syn.feature_noise = t.get_double_or("cohort.feature_noise", syn.feature_noise);
  syn.near_optimal_prob = t.get_double_or("cohort.near_optimal_prob", syn.near_optimal_prob);
  syn.survival_slope = t.get_double_or("cohort.survival_slope", syn.survival_slope);
  syn.dynamics_seed = checked_seed(
      t.get_int_or("cohort.dynamics_seed", static_cast<std::int64_t>(syn.dynamics_seed)),
      "cohort.dynamics_seed");
  cfg.cohort_seed = checked_seed(
      t.get_int_or("cohort.seed", static_cast<std::int64_t>(cfg.cohort_seed)), "cohort.seed");
  cfg.train_frac = t.get_double_or("cohort.train_frac", cfg.train_frac);
  cfg.val_frac = t.get_double_or("cohort.val_frac", cfg.val_frac);
  cfg.split_seed = checked_seed(
      t.get_int_or("cohort.split_seed", static_cast<std::int64_t>(cfg.split_seed)),
      "cohort.split_seed");

  // The encoder kind decides this section's defaults, so resolve it first. A
  // command-line kind takes precedence over the file's.
  std::string kind_str = encoder_kind_override
                             ? *encoder_kind_override
                             : t.get_string_or("encoder.kind", "sage");
  cfg.repr = train::ReprTrainConfig::defaults_for(train::parse_encoder_kind(kind_str));
  cfg.repr.seed = 7;
  if (t.contains("encoder.epochs"))
    cfg.repr.epochs = checked_size(t.get_int("encoder.epochs"), "encoder.epochs");
  cfg.repr.learning_rate = t.get_double_or("encoder.learning_rate", cfg.repr.learning_rate);
  if (t.contains("encoder.batch_size"))
    cfg.repr.batch_size = checked_size(t.get_int("encoder.batch_size"), "encoder.batch_size");
  if (t.contains("encoder.val_period"))
    cfg.repr.val_period = checked_size(t.get_int("encoder.val_period"), "encoder.val_period");
  if (t.contains("encoder.latent"))
    cfg.repr.latent = checked_size(t.get_int("encoder.latent"), "encoder.latent");
  if (t.contains("encoder.f_out"))
    cfg.repr.f_out = checked_size(t.get_int("encoder.f_out"), "encoder.f_out");
  if (t.contains("encoder.n_conv"))
    cfg.repr.n_conv = checked_size(t.get_int("encoder.n_conv"), "encoder.n_conv");
  cfg.repr.action_injection = t.get_bool_or("encoder.action_injection", true);
  cfg.untrained_encoder = t.get_bool_or("encoder.untrained", false);
  if (t.contains("encoder.seed"))
    cfg.repr.seed = checked_seed(t.get_int("encoder.seed"), "encoder.seed");
  if (t.contains("encoder.sweep_f_out")) cfg.sweep_f_out = size_array(t, "encoder.sweep_f_out");
  if (t.contains("encoder.sweep_n_conv"))
    cfg.sweep_n_conv = size_array(t, "encoder.sweep_n_conv");

  auto& bc = cfg.bc;
  if (t.contains("bc.hidden")) bc.hidden = checked_size(t.get_int("bc.hidden"), "bc.hidden");
  if (t.contains("bc.epochs")) bc.epochs = checked_size(t.get_int("bc.epochs"), "bc.epochs");
  bc.learning_rate = t.get_double_or("bc.learning_rate", bc.learning_rate);
  bc.weight_decay = t.get_double_or("bc.weight_decay", bc.weight_decay);
  if (t.contains("bc.batch_size"))
    bc.batch_size = checked_size(t.get_int("bc.batch_size"), "bc.batch_size");
  bc.bn_momentum = t.get_double_or("bc.bn_momentum", bc.bn_momentum);
  bc.bn_eps = t.get_double_or("bc.bn_eps", bc.bn_eps);
  if (t.contains("bc.seed")) bc.seed = checked_seed(t.get_int("bc.seed"), "bc.seed");

  auto& dq = cfg.dbcq;
  dq.tau = t.get_double_or("policy.tau", dq.tau);
  dq.gamma = t.get_double_or("policy.gamma", dq.gamma);
  dq.polyak = t.get_double_or("policy.polyak", dq.polyak);
  if (t.contains("policy.target_update_freq"))
    dq.target_update_freq =
        checked_size(t.get_int("policy.target_update_freq"), "policy.target_update_freq");
  dq.learning_rate = t.get_double_or("policy.learning_rate", dq.learning_rate);
  if (t.contains("policy.iterations"))
    dq.iterations = checked_size(t.get_int("policy.iterations"), "policy.iterations");
  if (t.contains("policy.eval_period"))
    dq.eval_period = checked_size(t.get_int("policy.eval_period"), "policy.eval_period");
  if (t.contains("policy.batch_size"))
    dq.batch_size = checked_size(t.get_int("policy.batch_size"), "policy.batch_size");
  if (t.contains("policy.hidden"))
    dq.hidden = checked_size(t.get_int("policy.hidden"), "policy.hidden");

  auto& w = cfg.wis;
  w.epsilon = t.get_double_or("wis.epsilon", w.epsilon);
  w.tau = t.get_double_or("wis.tau", dq.tau);  // defaults to the training threshold
  w.wis.gamma = t.get_double_or("wis.gamma", dq.gamma);
  w.wis.discounted = t.get_bool_or("wis.discounted", true);
  w.wis.ratio_floor = t.get_double_or("wis.ratio_floor", w.wis.ratio_floor);
  w.wis.ratio_ceiling = t.get_double_or("wis.ratio_ceiling", w.wis.ratio_ceiling);

  if (t.contains("run.seeds")) {
    cfg.seeds.clear();
    for (auto v : t.get_int_array("run.seeds")) cfg.seeds.push_back(checked_seed(v, "run.seeds"));
  }
  cfg.desk_scale = t.get_bool_or("run.desk_scale", false);
  return cfg;
}

RunConfig load_run_config(const std::string& config_path, const CliOverrides& overrides) {
  toml::Table table = config_path.empty() ? toml::parse("", "<built-in defaults>")
                                          : toml::parse_file(config_path);
  RunConfig cfg = run_config_from_toml(table, overrides.encoder_kind);
  if (overrides.out_dir) cfg.out_dir = *overrides.out_dir;
  if (overrides.seeds) cfg.seeds = *overrides.seeds;
  if (overrides.untrained_encoder) cfg.untrained_encoder = true;
  if (overrides.no_action_injection) cfg.repr.action_injection = false;
  if (overrides.desk_scale) cfg.desk_scale = true;
  if (cfg.desk_scale) apply_desk_scale(cfg);
  validate_run_config(cfg);
  return cfg;
}

void apply_desk_scale(RunConfig& cfg) {
  cfg.synthetic.n_traj = 2000;
  cfg.repr.epochs = 50;
  cfg.bc.epochs = 25;
  cfg.dbcq.iterations = 50000;
  cfg.dbcq.eval_period = 500;
  cfg.desk_scale = true;
}

void validate_run_config(const RunConfig& cfg) {
  if (cfg.out_dir.empty()) throw ConfigError("out_dir must not be empty");
  if (cfg.synthetic.n_traj == 0) throw ConfigError("cohort.n_traj must be positive");
  if (!(cfg.train_frac > 0.0) || !(cfg.val_frac > 0.0) ||
      !(cfg.train_frac + cfg.val_frac < 1.0))
    throw ConfigError("train/val fractions must be positive and leave a test remainder");
  if (cfg.seeds.empty()) throw ConfigError("run.seeds must name at least one seed");
  if (std::set<std::uint64_t>(cfg.seeds.begin(), cfg.seeds.end()).size() != cfg.seeds.size())
    throw ConfigError("run.seeds must be distinct");
  if (cfg.dbcq.eval_period == 0 || cfg.dbcq.iterations < cfg.dbcq.eval_period)
    throw ConfigError("policy.iterations must cover at least one eval_period");
  if (cfg.repr.val_period == 0 || cfg.repr.epochs % cfg.repr.val_period != 0)
    throw ConfigError("encoder.val_period must divide encoder.epochs");
  if (cfg.sweep_f_out.empty() != cfg.sweep_n_conv.empty())
    throw ConfigError(
        "encoder.sweep_f_out and encoder.sweep_n_conv must be given together");
}

std::string config_json(const RunConfig& cfg) {
  json j;
  j["paths"] = {{"out_dir", cfg.out_dir}, {"cohort_csv", cfg.cohort_csv}};
  j["cohort"] = {{"n_traj", cfg.synthetic.n_traj},
                 {"mortality_rate", cfg.synthetic.mortality_rate},
                 {"mean_length", cfg.synthetic.mean_length},
                 {"optimal_drift", cfg.synthetic.optimal_drift},
                 {"mismatch_penalty", cfg.synthetic.mismatch_penalty},
                 {"health_noise", cfg.synthetic.health_noise},
                 {"action_effect_scale", cfg.synthetic.action_effect_scale},
                 {"feature_noise", cfg.synthetic.feature_noise},
                 {"near_optimal_prob", cfg.synthetic.near_optimal_prob},
                 {"survival_slope", cfg.synthetic.survival_slope},
                 {"dynamics_seed", cfg.synthetic.dynamics_seed},
                 {"seed", cfg.cohort_seed},
                 {"train_frac", cfg.train_frac},
                 {"val_frac", cfg.val_frac},
                 {"split_seed", cfg.split_seed}};
  j["encoder"] = {{"kind", encoder_kind_string(cfg)},
                  {"epochs", cfg.repr.epochs},
                  {"learning_rate", cfg.repr.learning_rate},
                  {"batch_size", cfg.repr.batch_size},
                  {"val_period", cfg.repr.val_period},
                  {"latent", cfg.repr.latent},
                  {"f_out", cfg.repr.f_out},
                  {"n_conv", cfg.repr.n_conv},
                  {"action_injection", cfg.repr.action_injection},
                  {"untrained", cfg.untrained_encoder},
                  {"seed", cfg.repr.seed},
                  {"sweep_f_out", cfg.sweep_f_out},
                  {"sweep_n_conv", cfg.sweep_n_conv}};
  j["bc"] = {{"hidden", cfg.bc.hidden},
             {"epochs", cfg.bc.epochs},
             {"learning_rate", cfg.bc.learning_rate},
             {"weight_decay", cfg.bc.weight_decay},
             {"batch_size", cfg.bc.batch_size},
             {"bn_momentum", cfg.bc.bn_momentum},
             {"bn_eps", cfg.bc.bn_eps},
             {"seed", cfg.bc.seed}};
  j["policy"] = {{"tau", cfg.dbcq.tau},
                 {"gamma", cfg.dbcq.gamma},
                 {"polyak", cfg.dbcq.polyak},
                 {"target_update_freq", cfg.dbcq.target_update_freq},
                 {"learning_rate", cfg.dbcq.learning_rate},
                 {"iterations", cfg.dbcq.iterations},
                 {"eval_period", cfg.dbcq.eval_period},
                 {"batch_size", cfg.dbcq.batch_size},
                 {"hidden", cfg.dbcq.hidden}};
  j["wis"] = {{"epsilon", cfg.wis.epsilon},
              {"tau", cfg.wis.tau},
              {"gamma", cfg.wis.wis.gamma},
              {"discounted", cfg.wis.wis.discounted},
              {"ratio_floor", cfg.wis.wis.ratio_floor},
              {"ratio_ceiling", cfg.wis.wis.ratio_ceiling}};
  j["run"] = {{"seeds", cfg.seeds}, {"desk_scale", cfg.desk_scale}};
  return j.dump();
}

std::string config_hash(const RunConfig& cfg) { return ckpt::sha256_hex(config_json(cfg)); }

// ---------------------------------------------------------------------------
// Latent persistence
// ---------------------------------------------------------------------------

void save_latents(const std::string& path, const train::LatentDataset& data) {
  json header;
  header["format"] = "sepsisrl-latents";
  header["version"] = 1;
  header["latent_dim"] = data.latent_dim;
  json trajs = json::array();
  for (const auto& traj : data.trajectories) {
    if (traj.steps.empty()) throw DataError("latent trajectory " + traj.id + " is empty");
    json actions = json::array();
    for (const auto& s : traj.steps) actions.push_back(s.action);
    trajs.push_back(
        {{"id", traj.id}, {"reward", traj.steps.back().reward}, {"actions", actions}});
  }
  header["trajectories"] = trajs;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << header.dump() << "\n";
  std::vector<double> buf;
  for (const auto& traj : data.trajectories)
    for (const auto& s : traj.steps) {
      if (s.latent.size() != data.latent_dim)
        throw DimensionError("latent width mismatch in trajectory " + traj.id);
      for (double v : s.latent) buf.push_back(to_little_endian(v));
    }
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(double)));
  if (!out) throw IoError("failed while writing " + path);
}

train::LatentDataset load_latents(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for reading");
  std::string line;
  if (!std::getline(in, line)) throw DataError("corrupt latents " + path + ": missing header");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError("corrupt latents " + path + ": " + e.what());
  }

  train::LatentDataset data;
  std::size_t total_rows = 0;
  try {
    if (header.at("format") != "sepsisrl-latents")
      throw DataError("corrupt latents " + path + ": unrecognized format field");
    if (header.at("version").get<int>() != 1)
      throw DataError(path + ": unsupported latents version");
    data.latent_dim = header.at("latent_dim").get<std::size_t>();
    for (const auto& tj : header.at("trajectories")) {
      train::LatentTrajectory traj;
      traj.id = tj.at("id").get<std::string>();
      double reward = tj.at("reward").get<double>();
      auto actions = tj.at("actions").get<std::vector<int>>();
      if (actions.empty())
        throw DataError("corrupt latents " + path + ": empty trajectory " + traj.id);
      for (std::size_t t = 0; t < actions.size(); ++t) {
        train::LatentStep step;
        step.action = actions[t];
        step.done = t + 1 == actions.size();
        step.reward = step.done ? reward : 0.0;
        traj.steps.push_back(std::move(step));
      }
      total_rows += actions.size();
      data.trajectories.push_back(std::move(traj));
    }
  } catch (const json::exception& e) {
    throw DataError("corrupt latents " + path + ": " + e.what());
  }

  std::vector<double> payload(total_rows * data.latent_dim);
  in.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(payload.size() * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != payload.size() * sizeof(double))
    throw DataError("corrupt latents " + path + ": payload shorter than declared");
  if (in.get() != std::ifstream::traits_type::eof())
    throw DataError("corrupt latents " + path + ": payload longer than declared");

  std::size_t offset = 0;
  for (auto& traj : data.trajectories)
    for (auto& step : traj.steps) {
      step.latent.resize(data.latent_dim);
      for (std::size_t k = 0; k < data.latent_dim; ++k)
        step.latent[k] = to_little_endian(payload[offset + k]);
      offset += data.latent_dim;
    }
  return data;
}

// ---------------------------------------------------------------------------
// Curve CSV reader
// ---------------------------------------------------------------------------

eval::EvalCurve read_curve_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path + " for reading");
  std::string line;
  if (!std::getline(in, line)) throw DataError("corrupt curve CSV " + path + ": empty file");

  std::vector<std::string> cols;
  std::stringstream hs(line);
  for (std::string cell; std::getline(hs, cell, ',');) cols.push_back(cell);
  if (cols.size() < 4 || cols[0] != "iteration" || cols[1] != "mean" || cols[2] != "std")
    throw DataError("corrupt curve CSV " + path + ": unexpected header '" + line + "'");

  eval::EvalCurve curve;
  for (std::size_t c = 3; c < cols.size(); ++c) {
    if (cols[c].rfind("seed_", 0) != 0)
      throw DataError("corrupt curve CSV " + path + ": unexpected column '" + cols[c] + "'");
    curve.seeds.push_back(std::stoull(cols[c].substr(5)));
  }
  curve.smoothed.assign(curve.seeds.size(), {});

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
    if (cells.size() != cols.size())
      throw DataError("corrupt curve CSV " + path + ": line " + std::to_string(line_no) +
                      " has " + std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(cols.size()));
    try {
      curve.iterations.push_back(std::stoull(cells[0]));
      curve.mean.push_back(std::stod(cells[1]));
      curve.std_dev.push_back(std::stod(cells[2]));
      for (std::size_t s = 0; s < curve.seeds.size(); ++s)
        curve.smoothed[s].push_back(std::stod(cells[3 + s]));
    } catch (const std::exception&) {
      throw DataError("corrupt curve CSV " + path + ": line " + std::to_string(line_no) +
                      " has a non-numeric cell");
    }
  }
  if (curve.iterations.empty())
    throw DataError("corrupt curve CSV " + path + ": no data rows");
  curve.raw = curve.smoothed;  // raw scores are not part of the export
  return curve;
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

namespace {

json stats_json(const cohort::CohortStats& stats) {
  return json{{"n", stats.n},
              {"mortality", stats.mortality},
              {"mean_length", stats.mean_length},
              {"median_length", stats.median_length}};
}

void print_stats(const char* stage, const cohort::CohortStats& stats) {
  std::cout << "[" << stage << "] " << stats.n << " trajectories, mortality "
            << stats.mortality << ", mean length " << stats.mean_length << ", median length "
            << stats.median_length << "\n";
}

}  // namespace

void stage_generate(const RunConfig& cfg) {
  ensure_out_dir(cfg.out_dir);
  Manifest m(cfg, "generate");
  auto c = cohort::generate_synthetic(cfg.synthetic, cfg.cohort_seed);
  auto path = cohort_path(cfg);
  cohort::save_csv(c, path);
  auto stats = cohort::cohort_stats(c);
  auto stats_path = join_path(cfg.out_dir, "cohort_stats.json");
  write_json_file(stats_path, stats_json(stats));
  m.output(path);
  m.output(stats_path);
  m.write();
  print_stats("generate", stats);
  std::cout << "[generate] wrote " << path << "\n";
}

void stage_ingest(const RunConfig& cfg) {
  ensure_out_dir(cfg.out_dir);
  Manifest m(cfg, "ingest");
  auto path = cohort_path(cfg);
  if (!fs::exists(path))
    throw IoError("cohort file not found at " + path +
                  "; run `sepsis-rl generate` or point [paths].cohort_csv at a dataset");
  m.input(path);
  auto c = cohort::load_csv(path, cohort::FeatureSchema::default_schema(cohort::EncoderMode::kGnn));
  cohort::validate_cohort(c);
  auto stats = cohort::cohort_stats(c);
  auto stats_path = join_path(cfg.out_dir, "cohort_stats.json");
  write_json_file(stats_path, stats_json(stats));
  m.output(stats_path);
  m.write();
  print_stats("ingest", stats);
}

void stage_graph_check(const RunConfig& cfg) {
  ensure_out_dir(cfg.out_dir);
  Manifest m(cfg, "graph-check");
  auto path = cohort_path(cfg);
  if (!fs::exists(path))
    throw IoError("cohort file not found at " + path + "; run `sepsis-rl generate` first");
  m.input(path);
  auto schema = cohort::FeatureSchema::default_schema(cohort::EncoderMode::kGnn);
  auto c = cohort::load_csv(path, schema);

  std::size_t graph_count = 0, snapshot_count = 0;
  std::vector<std::string> issues;
  for (const auto& traj : c.trajectories) {
    auto full = graph::build_trajectory_graph(traj, schema);
    ++graph_count;
    for (auto& issue : graph::validate_graph(full))
      issues.push_back(traj.id + ": " + issue);
    for (const auto& snap : graph::snapshots(full)) {
      ++snapshot_count;
      for (auto& issue : graph::validate_graph(snap))
        issues.push_back(traj.id + " (snapshot): " + issue);
    }
    if (issues.size() > 20) break;  // enough evidence; keep the report short
  }

  auto report_path = join_path(cfg.out_dir, "graph_check.json");
  write_json_file(report_path, json{{"trajectories", graph_count},
                                    {"snapshots", snapshot_count},
                                    {"issues", issues}});
  m.output(report_path);
  m.write();
  if (!issues.empty())
    throw DataError("graph check failed with " + std::to_string(issues.size()) +
                    " issue(s); first: " + issues.front());
  std::cout << "[graph-check] " << graph_count << " trajectory graphs and " << snapshot_count
            << " prefix snapshots verified\n";
}

void stage_train_encoder(const RunConfig& cfg) {
  ensure_out_dir(cfg.out_dir);
  Manifest m(cfg, "train-encoder");
  auto prepared = load_and_split(cfg);
  m.input(cohort_path(cfg));

  auto z = cohort::Standardizer::fit(prepared.split.train);
  save_standardizer(standardizer_path(cfg), z, grouping_name(cfg));
  m.output(standardizer_path(cfg));
  auto split = apply_standardizer(z, prepared.split);

  train::ReprTrainConfig chosen = cfg.repr;
  if (!cfg.sweep_f_out.empty()) {
    std::vector<std::pair<std::size_t, std::size_t>> grid;
    for (auto f : cfg.sweep_f_out)
      for (auto n : cfg.sweep_n_conv) grid.emplace_back(f, n);
    auto sweep = train::run_sweep(split, cfg.repr, grid);
    for (const auto& entry : sweep.runs) {
      auto curve_path = join_path(cfg.out_dir, "encoder_loss_f" + std::to_string(entry.f_out) +
                                                   "_c" + std::to_string(entry.n_conv) +
                                                   ".jsonl");
      train::write_loss_jsonl(curve_path, entry.curve);
      m.output(curve_path);
    }
    auto sweep_path = join_path(cfg.out_dir, "encoder_sweep.csv");
    train::write_sweep_csv(sweep_path, sweep);
    m.output(sweep_path);
    chosen = sweep.best_config;
    m.note("sweep", json{{"f_out", chosen.f_out}, {"n_conv", chosen.n_conv}});
    std::cout << "[train-encoder] sweep selected f_out=" << chosen.f_out
              << " n_conv=" << chosen.n_conv << "\n";
  }

  // Retraining the selected configuration is deterministic, so the sweep's
  // winner and this run have identical curves and parameters.
  auto result = train::train_autoencoder(split, chosen);
  save_encoder_config(cfg, chosen);
  m.output(encoder_config_path(cfg));

  auto loss_path = join_path(cfg.out_dir, "encoder_loss.jsonl");
  train::write_loss_jsonl(loss_path, result.curve);
  m.output(loss_path);

  auto meta = make_meta(cfg, encoder_kind_string(cfg), prepared.schema, chosen.seed);
  auto final_path = join_path(cfg.out_dir, "encoder_final.ckpt");
  const train::ReprModel& cm = result.model;
  ckpt::save_checkpoint(final_path, meta, cm.all_params());
  m.output(final_path);

  train::restore_params(result.model.all_params(), result.best);
  auto best_path = join_path(cfg.out_dir, "encoder_best.ckpt");
  ckpt::save_checkpoint(best_path, meta, cm.all_params());
  m.output(best_path);
  m.write();

  std::cout << "[train-encoder] " << encoder_kind_string(cfg) << " trained for "
            << chosen.epochs << " epochs; best smoothed validation loss "
            << result.curve.val_smoothed[result.curve.best_index] << " at epoch "
            << result.curve.val_epochs[result.curve.best_index] << "; final "
            << result.curve.val_smoothed.back() << "\n";
}

void stage_encode(const RunConfig& cfg) {
  ensure_out_dir(cfg.out_dir);
  Manifest m(cfg, "encode");
  auto prepared = load_and_split(cfg);
  m.input(cohort_path(cfg));
  auto z = load_or_fit_standardizer(cfg, prepared.split, m);
  auto split = apply_standardizer(z, prepared.split);

  train::ReprTrainConfig arch = cfg.repr;
  if (!cfg.untrained_encoder) {
    arch = load_encoder_config(cfg);
    m.input(encoder_config_path(cfg));
  }
  Rng init(derive_seed(arch.seed, "repr-init"));
  auto model = train::ReprModel::create(arch, prepared.schema, init);

  if (cfg.untrained_encoder) {
    m.note("encoder", "random-init, seed=" + std::to_string(arch.seed));
    std::cout << "[encode] using an untrained (randomly initialized) encoder\n";
  } else {
    auto best_path = join_path(cfg.out_dir, "encoder_best.ckpt");
    require_file(best_path, "train-encoder");
    m.input(best_path);
    ckpt::load_into(best_path, encoder_kind_string(cfg),
                    ckpt::schema_fingerprint(prepared.schema), model.all_params());
  }

  const struct {
    const char* name;
    const cohort::Cohort& part;
  } parts[] = {{"latents_train.bin", split.train},
               {"latents_val.bin", split.val},
               {"latents_test.bin", split.test}};
  for (const auto& p : parts) {
    auto latents = train::encode_dataset(p.part, model);
    auto path = join_path(cfg.out_dir, p.name);
    save_latents(path, latents);
    m.output(path);
    std::cout << "[encode] " << path << ": " << latents.trajectories.size()
              << " trajectories at latent width " << latents.latent_dim << "\n";
  }
  m.write();
}

void stage_train_bc(const RunConfig& cfg) {
  ensure_out_dir(cfg.out_dir);
  Manifest m(cfg, "train-bc");
  auto prepared = load_and_split(cfg);
  m.input(cohort_path(cfg));
  auto z = load_or_fit_standardizer(cfg, prepared.split, m);
  auto split = apply_standardizer(z, prepared.split);

  // The behavior clone feeds evaluation, not model selection, so it may use
  // train and validation together; the test split stays held out.
  cohort::Cohort merged = split.train;
  merged.trajectories.insert(merged.trajectories.end(), split.val.trajectories.begin(),
                             split.val.trajectories.end());
  auto data = policy::build_bc_dataset(merged);

  auto bcc = cfg.bc;
  bcc.obs_dim = prepared.schema.total_count();
  auto result = policy::train_behavior_cloning(data, bcc);
  double accuracy = policy::bc_accuracy(result.model, data);

  auto ckpt_path = join_path(cfg.out_dir, "bc.ckpt");
  save_bc_model(ckpt_path, result.model, make_meta(cfg, "bc", prepared.schema, bcc.seed));
  m.output(ckpt_path);

  auto loss_path = join_path(cfg.out_dir, "bc_loss.jsonl");
  write_bc_loss_jsonl(loss_path, result);
  m.output(loss_path);

  auto report_path = join_path(cfg.out_dir, "bc_report.json");
  write_json_file(report_path,
                  json{{"initial_loss", result.initial_loss},
                       {"final_loss", result.loss.empty() ? result.initial_loss
                                                          : result.loss.back()},
                       {"train_accuracy", accuracy},
                       {"degenerate_labels", result.degenerate_labels}});
  m.output(report_path);
  m.write();

  std::cout << "[train-bc] cross-entropy " << result.initial_loss << " -> "
            << (result.loss.empty() ? result.initial_loss : result.loss.back())
            << " over " << bcc.epochs << " epochs; top-1 accuracy " << accuracy << "\n";
}

namespace {

struct EvalContext {
  policy::BcModel behavior;
  train::LatentDataset test_latents;
  cohort::Cohort test_raw;  // standardized
};

EvalContext load_eval_context(const RunConfig& cfg, Manifest& m) {
  auto prepared = load_and_split(cfg);
  auto z = load_or_fit_standardizer(cfg, prepared.split, m);
  auto behavior = load_bc_model(cfg, prepared.schema, m);
  auto test_path = join_path(cfg.out_dir, "latents_test.bin");
  require_file(test_path, "encode");
  m.input(test_path);
  return {std::move(behavior), load_latents(test_path), z.apply(prepared.split.test)};
}

}  // namespace

void stage_train_policy(const RunConfig& cfg) {
  ensure_out_dir(cfg.out_dir);
  Manifest m(cfg, "train-policy");

  auto train_path = join_path(cfg.out_dir, "latents_train.bin");
  auto val_path = join_path(cfg.out_dir, "latents_val.bin");
  require_file(train_path, "encode");
  require_file(val_path, "encode");
  m.input(train_path);
  m.input(val_path);
  auto train_latents = load_latents(train_path);
  auto val_latents = load_latents(val_path);
  auto pool = train::flatten_transitions(train_latents);
  auto val_pool = train::flatten_transitions(val_latents);
  pool.insert(pool.end(), std::make_move_iterator(val_pool.begin()),
              std::make_move_iterator(val_pool.end()));

  auto ctx = load_eval_context(cfg, m);
  m.input(cohort_path(cfg));
  auto schema = ctx.test_raw.schema;

  std::vector<std::size_t> iterations;
  std::vector<std::vector<double>> scores;
  for (std::uint64_t seed : cfg.seeds) {
    auto dc = cfg.dbcq;
    dc.seed = seed;
    dc.latent = train_latents.latent_dim;
    auto evaluator = [&](const policy::DbcqModel& model) {
      return eval::wis_evaluator(model, ctx.behavior, ctx.test_latents, ctx.test_raw, cfg.wis);
    };
    auto result = policy::dbcq_train(pool, dc, evaluator);

    auto jsonl_path = join_path(cfg.out_dir, "wis_seed" + std::to_string(seed) + ".jsonl");
    write_wis_jsonl(jsonl_path, result.curve);
    m.output(jsonl_path);

    auto ckpt_path = join_path(cfg.out_dir, "policy_seed" + std::to_string(seed) + ".ckpt");
    ckpt::save_checkpoint(ckpt_path, make_meta(cfg, "dbcq", schema, seed),
                          dbcq_params(result.model));
    m.output(ckpt_path);

    if (iterations.empty())
      for (const auto& p : result.curve) iterations.push_back(p.iteration);
    std::vector<double> s;
    for (const auto& p : result.curve) s.push_back(p.score);
    scores.push_back(std::move(s));
    std::cout << "[train-policy] seed " << seed << ": final WIS " << scores.back().back()
              << " after " << dc.iterations << " iterations\n";
  }

  auto curve = eval::make_eval_curve(iterations, cfg.seeds, scores);
  auto csv_path = join_path(cfg.out_dir, "wis_curve.csv");
  auto svg_path = join_path(cfg.out_dir, "wis_curve.svg");
  eval::write_curve_csv(csv_path, curve);
  eval::write_curve_svg(svg_path, curve, "off-policy value (weighted importance sampling)");
  m.output(csv_path);
  m.output(svg_path);

  double uniform =
      eval::wis(eval::uniform_eval_trajectories(ctx.behavior, ctx.test_raw), cfg.wis.wis);
  json per_seed = json::object();
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i)
    per_seed[std::to_string(cfg.seeds[i])] = curve.smoothed[i].back();
  double final_mean = curve.mean.back();
  auto report_path = join_path(cfg.out_dir, "policy_report.json");
  write_json_file(report_path, json{{"per_seed_final_smoothed", per_seed},
                                    {"final_smoothed_mean", final_mean},
                                    {"uniform_wis", uniform},
                                    {"delta", final_mean - uniform}});
  m.output(report_path);
  m.write();

  std::cout << "[train-policy] mean final smoothed WIS " << final_mean << " vs uniform "
            << uniform << " (delta " << final_mean - uniform << ")\n";
}

void stage_evaluate(const RunConfig& cfg) {
  ensure_out_dir(cfg.out_dir);
  Manifest m(cfg, "evaluate");
  auto ctx = load_eval_context(cfg, m);
  m.input(cohort_path(cfg));

  json per_seed = json::array();
  double sum = 0.0;
  for (std::uint64_t seed : cfg.seeds) {
    auto ckpt_path = join_path(cfg.out_dir, "policy_seed" + std::to_string(seed) + ".ckpt");
    require_file(ckpt_path, "train-policy");
    m.input(ckpt_path);
    auto dc = cfg.dbcq;
    dc.seed = seed;
    dc.latent = ctx.test_latents.latent_dim;
    Rng init(derive_seed(seed, "dbcq-init"));
    auto model = policy::DbcqModel::create(dc, init);
    auto loaded = ckpt::load_checkpoint(ckpt_path);
    ckpt::restore_params(loaded, "dbcq", ckpt::schema_fingerprint(ctx.test_raw.schema),
                         dbcq_params_mut(model));

    auto records = eval::policy_eval_trajectories(model, ctx.behavior, ctx.test_latents,
                                                  ctx.test_raw, cfg.wis);
    auto detail = eval::wis_detailed(records, cfg.wis.wis);
    per_seed.push_back(json{{"seed", seed},
                            {"wis", detail.value},
                            {"clipped_steps", detail.clipped_steps}});
    sum += detail.value;
    std::cout << "[evaluate] seed " << seed << ": WIS " << detail.value << " ("
              << detail.clipped_steps << " clipped ratio steps)\n";
  }
  double mean = sum / static_cast<double>(cfg.seeds.size());
  double uniform =
      eval::wis(eval::uniform_eval_trajectories(ctx.behavior, ctx.test_raw), cfg.wis.wis);

  auto report_path = join_path(cfg.out_dir, "evaluation.json");
  write_json_file(report_path, json{{"per_seed", per_seed},
                                    {"mean_wis", mean},
                                    {"uniform_wis", uniform},
                                    {"delta", mean - uniform}});
  m.output(report_path);
  m.write();
  std::cout << "[evaluate] mean WIS " << mean << " vs uniform " << uniform << " (delta "
            << mean - uniform << ")\n";
}

void stage_plot(const RunConfig& cfg) {
  ensure_out_dir(cfg.out_dir);
  Manifest m(cfg, "plot");
  auto csv_path = join_path(cfg.out_dir, "wis_curve.csv");
  require_file(csv_path, "train-policy");
  m.input(csv_path);
  auto curve = read_curve_csv(csv_path);
  auto svg_path = join_path(cfg.out_dir, "wis_curve.svg");
  eval::write_curve_svg(svg_path, curve, "off-policy value (weighted importance sampling)");
  m.output(svg_path);
  m.write();
  std::cout << "[plot] " << svg_path << " (" << curve.iterations.size() << " points, "
            << curve.seeds.size() << " seeds)\n";
}

void stage_reproduce(const RunConfig& cfg) {
  stage_generate(cfg);
  stage_graph_check(cfg);
  stage_train_encoder(cfg);
  stage_encode(cfg);
  stage_train_bc(cfg);
  stage_train_policy(cfg);
  stage_evaluate(cfg);
  stage_plot(cfg);
  std::cout << "[reproduce] all stages complete in " << cfg.out_dir << "\n";
}

}  // namespace sepsisrl::cli
