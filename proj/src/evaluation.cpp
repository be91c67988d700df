#include "sepsisrl/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <utility>

#include "sepsisrl/errors.hpp"

namespace sepsisrl::eval {
namespace {

/// Average trajectory length used to put summed per-trajectory losses on a
/// per-step, per-feature scale.
constexpr double kMeanEpisodeLength = 13.3;

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// Fixed-precision formatting for SVG coordinates: enough digits that
/// distinct data stay distinct, short enough to keep files readable.
std::string format_coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

void check_trajectory(const EvalTrajectory& t, std::size_t index) {
  if (t.pi_e.size() != t.pi_b.size() || t.actions.size() != t.pi_e.size()) {
    throw DimensionError("wis: trajectory " + std::to_string(index) +
                         " has mismatched pi_e/pi_b/action lengths");
  }
  if (t.length() == 0) {
    throw DataError("wis: trajectory " + std::to_string(index) + " is empty");
  }
  for (std::size_t s = 0; s < t.length(); ++s) {
    if (!(t.pi_b[s] > 0.0) || t.pi_b[s] > 1.0) {
      throw DataError("wis: behavior probability out of (0,1] at trajectory " +
                      std::to_string(index) + " step " + std::to_string(s));
    }
    if (t.pi_e[s] < 0.0 || t.pi_e[s] > 1.0) {
      throw DataError("wis: evaluated probability out of [0,1] at trajectory " +
                      std::to_string(index) + " step " + std::to_string(s));
    }
  }
}

/// Builds the per-step behavior-policy probability of each logged action by
/// running the cloned policy on invariant + step features.
std::vector<double> behavior_probs_for(const policy::BcModel& behavior,
                                       const cohort::Trajectory& traj) {
  const std::size_t inv = traj.invariant_obs.size();
  std::vector<double> obs(behavior.cfg.obs_dim);
  std::vector<double> out(traj.length());
  for (std::size_t t = 0; t < traj.length(); ++t) {
    if (inv + traj.steps[t].size() != behavior.cfg.obs_dim) {
      throw DimensionError(
          "evaluation: trajectory " + traj.id + " step features (" +
          std::to_string(inv + traj.steps[t].size()) +
          ") do not match the behavior model's observation width (" +
          std::to_string(behavior.cfg.obs_dim) + ")");
    }
    std::copy(traj.invariant_obs.begin(), traj.invariant_obs.end(), obs.begin());
    std::copy(traj.steps[t].begin(), traj.steps[t].end(), obs.begin() + inv);
    const std::vector<double> p = policy::bc_probs(behavior, obs);
    out[t] = p[static_cast<std::size_t>(traj.actions[t])];
  }
  return out;
}

void require_alignment(const train::LatentDataset& latents,
                       const cohort::Cohort& raw) {
  if (latents.trajectories.size() != raw.trajectories.size()) {
    throw DataError("evaluation: latent dataset has " +
                    std::to_string(latents.trajectories.size()) +
                    " trajectories but the cohort has " +
                    std::to_string(raw.trajectories.size()));
  }
  for (std::size_t i = 0; i < raw.trajectories.size(); ++i) {
    const auto& lat = latents.trajectories[i];
    const auto& traj = raw.trajectories[i];
    if (lat.id != traj.id) {
      throw DataError("evaluation: trajectory " + std::to_string(i) +
                      " id mismatch between latents (" + lat.id +
                      ") and cohort (" + traj.id + ")");
    }
    if (lat.steps.size() != traj.length()) {
      throw DataError("evaluation: trajectory " + traj.id + " has " +
                      std::to_string(lat.steps.size()) + " latent steps but " +
                      std::to_string(traj.length()) + " observed steps");
    }
    for (std::size_t t = 0; t < traj.length(); ++t) {
      if (lat.steps[t].action != traj.actions[t]) {
        throw DataError("evaluation: trajectory " + traj.id + " step " +
                        std::to_string(t) +
                        " action differs between latents and cohort");
      }
    }
  }
}

}  // namespace

WisResult wis_detailed(const std::vector<EvalTrajectory>& trajectories,
                       const WisConfig& config) {
  if (trajectories.empty()) {
    throw DataError("wis: need at least one trajectory");
  }
  if (!(config.gamma > 0.0) || config.gamma > 1.0) {
    throw ConfigError("wis: gamma must lie in (0,1], got " +
                      std::to_string(config.gamma));
  }
  if (config.ratio_floor < 0.0 || !(config.ratio_ceiling > 0.0) ||
      config.ratio_floor > config.ratio_ceiling) {
    throw ConfigError("wis: ratio clip bounds must satisfy 0 <= floor <= ceiling");
  }

  const std::size_t n = trajectories.size();
  for (std::size_t i = 0; i < n; ++i) check_trajectory(trajectories[i], i);

  std::vector<double> weights(n);
  std::vector<double> returns(n);
  std::vector<std::size_t> clipped(n, 0);

  // Per-trajectory work is independent; the reduction below runs in index
  // order so the result does not depend on the thread count.
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    const EvalTrajectory& t = trajectories[i];
    double w = 1.0;
    for (std::size_t s = 0; s < t.length(); ++s) {
      double ratio = t.pi_e[s] / t.pi_b[s];
      if (ratio < config.ratio_floor) {
        ratio = config.ratio_floor;
        ++clipped[i];
      } else if (ratio > config.ratio_ceiling) {
        ratio = config.ratio_ceiling;
        ++clipped[i];
      }
      w *= ratio;
    }
    weights[i] = w;
    returns[i] = config.discounted
                     ? std::pow(config.gamma,
                                static_cast<double>(t.length() - 1)) *
                           t.reward
                     : t.reward;
  }

  double numerator = 0.0;
  double denominator = 0.0;
  std::size_t total_clipped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    numerator += weights[i] * returns[i];
    denominator += weights[i];
    total_clipped += clipped[i];
  }
  if (!(denominator > 0.0) || !std::isfinite(denominator) ||
      !std::isfinite(numerator)) {
    throw NumericError("wis: degenerate weights (total weight " +
                       std::to_string(denominator) + ")");
  }
  return WisResult{numerator / denominator, total_clipped};
}

double wis(const std::vector<EvalTrajectory>& trajectories,
           const WisConfig& config) {
  return wis_detailed(trajectories, config).value;
}

std::vector<double> soften_policy(const std::vector<double>& q_values,
                                  const std::vector<double>& behavior_probs,
                                  double tau, double epsilon) {
  if (!(epsilon >= 0.0) || epsilon >= 1.0) {
    throw ConfigError("soften_policy: epsilon must lie in [0,1), got " +
                      std::to_string(epsilon));
  }
  if (q_values.size() != policy::kActionCount ||
      behavior_probs.size() != policy::kActionCount) {
    throw DimensionError("soften_policy: expected " +
                         std::to_string(policy::kActionCount) +
                         " Q-values and behavior probabilities");
  }
  const int selected = policy::dbcq_select_action(q_values, behavior_probs, tau);
  std::vector<double> p(policy::kActionCount,
                        epsilon / static_cast<double>(policy::kActionCount - 1));
  p[static_cast<std::size_t>(selected)] = 1.0 - epsilon;
  return p;
}

std::vector<double> ema(const std::vector<double>& series, double alpha) {
  if (series.empty()) {
    throw DataError("ema: series is empty");
  }
  if (!(alpha > 0.0) || alpha > 1.0) {
    throw ConfigError("ema: alpha must lie in (0,1], got " +
                      std::to_string(alpha));
  }
  std::vector<double> out(series.size());
  out[0] = series[0];
  for (std::size_t t = 1; t < series.size(); ++t) {
    out[t] = alpha * series[t] + (1.0 - alpha) * out[t - 1];
  }
  return out;
}

SeedAggregate aggregate_seeds(const std::vector<std::vector<double>>& curves) {
  if (curves.empty()) {
    throw DataError("aggregate_seeds: no curves");
  }
  const std::size_t len = curves.front().size();
  for (std::size_t k = 1; k < curves.size(); ++k) {
    if (curves[k].size() != len) {
      throw DimensionError("aggregate_seeds: curve " + std::to_string(k) +
                           " has length " + std::to_string(curves[k].size()) +
                           ", expected " + std::to_string(len));
    }
  }
  const double n = static_cast<double>(curves.size());
  SeedAggregate agg;
  agg.mean.resize(len);
  agg.std_dev.resize(len);
  for (std::size_t i = 0; i < len; ++i) {
    double m = 0.0;
    for (const auto& c : curves) m += c[i];
    m /= n;
    double var = 0.0;
    for (const auto& c : curves) var += (c[i] - m) * (c[i] - m);
    agg.mean[i] = m;
    agg.std_dev[i] = std::sqrt(var / n);
  }
  return agg;
}

double normalize_loss(double avg_trajectory_loss, std::size_t obs_dim) {
  if (obs_dim == 0) {
    throw ConfigError("normalize_loss: obs_dim must be positive");
  }
  return avg_trajectory_loss /
         (kMeanEpisodeLength * static_cast<double>(obs_dim));
}

EvalCurve make_eval_curve(std::vector<std::size_t> iterations,
                          std::vector<std::uint64_t> seeds,
                          std::vector<std::vector<double>> per_seed_scores,
                          double alpha) {
  if (seeds.empty() || per_seed_scores.empty()) {
    throw DataError("make_eval_curve: need at least one seed's scores");
  }
  if (seeds.size() != per_seed_scores.size()) {
    throw DimensionError("make_eval_curve: " + std::to_string(seeds.size()) +
                         " seeds but " +
                         std::to_string(per_seed_scores.size()) +
                         " score series");
  }
  for (std::size_t k = 0; k < per_seed_scores.size(); ++k) {
    if (per_seed_scores[k].size() != iterations.size()) {
      throw DimensionError(
          "make_eval_curve: seed " + std::to_string(seeds[k]) + " has " +
          std::to_string(per_seed_scores[k].size()) + " scores but there are " +
          std::to_string(iterations.size()) + " iteration points");
    }
  }
  EvalCurve curve;
  curve.iterations = std::move(iterations);
  curve.seeds = std::move(seeds);
  curve.raw = std::move(per_seed_scores);
  curve.smoothed.reserve(curve.raw.size());
  for (const auto& r : curve.raw) curve.smoothed.push_back(ema(r, alpha));
  SeedAggregate agg = aggregate_seeds(curve.smoothed);
  curve.mean = std::move(agg.mean);
  curve.std_dev = std::move(agg.std_dev);
  return curve;
}

std::vector<EvalTrajectory> policy_eval_trajectories(
    const policy::DbcqModel& model, const policy::BcModel& behavior,
    const train::LatentDataset& latents, const cohort::Cohort& raw,
    const WisEvaluatorConfig& config) {
  require_alignment(latents, raw);
  const std::size_t n = raw.trajectories.size();
  std::vector<EvalTrajectory> out(n);
  // Exceptions must not escape the parallel region; the first one is
  // captured and rethrown after the loop.
  std::exception_ptr error = nullptr;
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      const auto& lat = latents.trajectories[i];
      const auto& traj = raw.trajectories[i];
      EvalTrajectory record;
      record.actions = traj.actions;
      record.reward = traj.reward;
      record.pi_b = behavior_probs_for(behavior, traj);
      record.pi_e.resize(traj.length());
      for (std::size_t t = 0; t < traj.length(); ++t) {
        const std::vector<double>& s = lat.steps[t].latent;
        Tensor row({1, s.size()});
        std::copy(s.begin(), s.end(), row.data());
        const Tensor q = model.q_online.forward_values(row);
        const std::vector<double> q_values(q.data(),
                                           q.data() + policy::kActionCount);
        const std::vector<double> probs =
            policy::latent_behavior_probs(model, s);
        const std::vector<double> pi =
            soften_policy(q_values, probs, config.tau, config.epsilon);
        record.pi_e[t] = pi[static_cast<std::size_t>(traj.actions[t])];
      }
      out[i] = std::move(record);
    } catch (...) {
#pragma omp critical(sepsisrl_eval_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return out;
}

std::vector<EvalTrajectory> uniform_eval_trajectories(
    const policy::BcModel& behavior, const cohort::Cohort& raw) {
  const std::size_t n = raw.trajectories.size();
  std::vector<EvalTrajectory> out(n);
  std::exception_ptr error = nullptr;
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      const auto& traj = raw.trajectories[i];
      EvalTrajectory record;
      record.actions = traj.actions;
      record.reward = traj.reward;
      record.pi_b = behavior_probs_for(behavior, traj);
      record.pi_e.assign(traj.length(),
                         1.0 / static_cast<double>(policy::kActionCount));
      out[i] = std::move(record);
    } catch (...) {
#pragma omp critical(sepsisrl_eval_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return out;
}

double wis_evaluator(const policy::DbcqModel& model,
                     const policy::BcModel& behavior,
                     const train::LatentDataset& latents,
                     const cohort::Cohort& raw,
                     const WisEvaluatorConfig& config) {
  return wis(policy_eval_trajectories(model, behavior, latents, raw, config),
             config.wis);
}

void write_curve_csv(const std::string& path, const EvalCurve& curve) {
  std::ofstream file(path);
  if (!file) {
    throw IoError("cannot open " + path + " for writing");
  }
  file << "iteration,mean,std";
  for (std::uint64_t s : curve.seeds) file << ",seed_" << s;
  file << "\n";
  for (std::size_t i = 0; i < curve.iterations.size(); ++i) {
    file << curve.iterations[i] << ',' << format_double(curve.mean[i]) << ','
         << format_double(curve.std_dev[i]);
    for (const auto& series : curve.smoothed) {
      file << ',' << format_double(series[i]);
    }
    file << "\n";
  }
  if (!file.good()) {
    throw IoError("failed while writing " + path);
  }
}

void write_curve_svg(const std::string& path, const EvalCurve& curve,
                     const std::string& title) {
  if (curve.iterations.empty() || curve.mean.empty()) {
    throw DataError("write_curve_svg: empty curve");
  }
  constexpr double kLeft = 70.0, kRight = 690.0, kTop = 50.0, kBottom = 390.0;

  double x_min = static_cast<double>(curve.iterations.front());
  double x_max = static_cast<double>(curve.iterations.back());
  if (x_max <= x_min) x_max = x_min + 1.0;
  double y_min = curve.mean[0] - curve.std_dev[0];
  double y_max = curve.mean[0] + curve.std_dev[0];
  for (std::size_t i = 0; i < curve.mean.size(); ++i) {
    y_min = std::min(y_min, curve.mean[i] - curve.std_dev[i]);
    y_max = std::max(y_max, curve.mean[i] + curve.std_dev[i]);
    for (const auto& series : curve.smoothed) {
      y_min = std::min(y_min, series[i]);
      y_max = std::max(y_max, series[i]);
    }
  }
  if (y_max <= y_min) y_max = y_min + 1.0;
  const double y_pad = 0.05 * (y_max - y_min);
  y_min -= y_pad;
  y_max += y_pad;

  const auto sx = [&](double x) {
    return kLeft + (x - x_min) / (x_max - x_min) * (kRight - kLeft);
  };
  const auto sy = [&](double y) {
    return kBottom - (y - y_min) / (y_max - y_min) * (kBottom - kTop);
  };
  const auto point = [&](double x, double y) {
    return format_coord(sx(x)) + "," + format_coord(sy(y));
  };

  std::string band;
  for (std::size_t i = 0; i < curve.mean.size(); ++i) {
    band += point(static_cast<double>(curve.iterations[i]),
                  curve.mean[i] + curve.std_dev[i]);
    band += ' ';
  }
  for (std::size_t i = curve.mean.size(); i-- > 0;) {
    band += point(static_cast<double>(curve.iterations[i]),
                  curve.mean[i] - curve.std_dev[i]);
    if (i != 0) band += ' ';
  }

  static const char* kSeedColors[] = {"#d08770", "#a3be8c", "#b48ead",
                                      "#ebcb8b", "#88c0d0"};
  std::string body;
  body += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"720\" "
          "height=\"440\" viewBox=\"0 0 720 440\">\n";
  body += "<rect width=\"720\" height=\"440\" fill=\"#ffffff\"/>\n";
  body += "<text x=\"360\" y=\"28\" text-anchor=\"middle\" "
          "font-family=\"sans-serif\" font-size=\"16\">" +
          title + "</text>\n";
  body += "<polygon points=\"" + band +
          "\" fill=\"#5e81ac\" fill-opacity=\"0.18\" stroke=\"none\"/>\n";
  for (std::size_t k = 0; k < curve.smoothed.size(); ++k) {
    std::string line;
    for (std::size_t i = 0; i < curve.smoothed[k].size(); ++i) {
      line += point(static_cast<double>(curve.iterations[i]),
                    curve.smoothed[k][i]);
      if (i + 1 < curve.smoothed[k].size()) line += ' ';
    }
    body += "<polyline points=\"" + line + "\" fill=\"none\" stroke=\"" +
            kSeedColors[k % 5] + "\" stroke-width=\"1\" stroke-opacity=\"0.8\"/>\n";
  }
  std::string mean_line;
  for (std::size_t i = 0; i < curve.mean.size(); ++i) {
    mean_line += point(static_cast<double>(curve.iterations[i]), curve.mean[i]);
    if (i + 1 < curve.mean.size()) mean_line += ' ';
  }
  body += "<polyline points=\"" + mean_line +
          "\" fill=\"none\" stroke=\"#5e81ac\" stroke-width=\"2\"/>\n";
  // Axes with min/mid/max labels.
  body += "<line x1=\"70\" y1=\"390\" x2=\"690\" y2=\"390\" stroke=\"#333\"/>\n";
  body += "<line x1=\"70\" y1=\"50\" x2=\"70\" y2=\"390\" stroke=\"#333\"/>\n";
  const double x_mid = 0.5 * (x_min + x_max);
  const double y_mid = 0.5 * (y_min + y_max);
  const auto x_label = [&](double x) {
    body += "<text x=\"" + format_coord(sx(x)) +
            "\" y=\"410\" text-anchor=\"middle\" font-family=\"sans-serif\" "
            "font-size=\"11\">" +
            format_coord(x) + "</text>\n";
  };
  const auto y_label = [&](double y) {
    body += "<text x=\"62\" y=\"" + format_coord(sy(y) + 4.0) +
            "\" text-anchor=\"end\" font-family=\"sans-serif\" "
            "font-size=\"11\">" +
            format_coord(y) + "</text>\n";
  };
  x_label(x_min);
  x_label(x_mid);
  x_label(x_max);
  y_label(y_min);
  y_label(y_mid);
  y_label(y_max);
  body += "<text x=\"380\" y=\"432\" text-anchor=\"middle\" "
          "font-family=\"sans-serif\" font-size=\"12\">iteration (band: +/-1 "
          "population std across " +
          std::to_string(curve.seeds.size()) + " seeds)</text>\n";
  body += "</svg>\n";

  std::ofstream file(path);
  if (!file) {
    throw IoError("cannot open " + path + " for writing");
  }
  file << body;
  if (!file.good()) {
    throw IoError("failed while writing " + path);
  }
}

}  // namespace sepsisrl::eval
