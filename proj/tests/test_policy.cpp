#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "sepsisrl/errors.hpp"
#include "sepsisrl/gradcheck.hpp"
#include "sepsisrl/policy.hpp"
#include "sepsisrl/rng.hpp"
#include "sepsisrl/tape.hpp"

using namespace sepsisrl;
using namespace sepsisrl::policy;
using train::LatentTransition;

namespace {

/// Observations whose action is a hard linear rule: pick the quadrant sign
/// pattern of the first two coordinates and spread it over the action range.
BcDataset separable_dataset(std::size_t n, std::size_t obs_dim, std::uint64_t seed) {
  Rng rng(seed);
  BcDataset ds;
  ds.obs = Tensor({n, obs_dim});
  for (std::size_t i = 0; i < n; ++i) {
    double* row = ds.obs.data() + i * obs_dim;
    for (std::size_t j = 0; j < obs_dim; ++j) row[j] = rng.normal();
    // Push the decisive coordinates away from the boundary so the rule is
    // separable with a margin rather than only almost-everywhere.
    row[0] += std::copysign(0.25, row[0]);
    row[1] += std::copysign(0.25, row[1]);
    const std::size_t quadrant =
        (row[0] > 0 ? 1u : 0u) + 2u * (row[1] > 0 ? 1u : 0u);
    ds.labels.push_back(quadrant * 6);  // labels 0, 6, 12, 18
  }
  return ds;
}

BcDataset random_label_dataset(std::size_t n, std::size_t obs_dim,
                               std::uint64_t seed) {
  Rng rng(seed);
  BcDataset ds;
  ds.obs = Tensor({n, obs_dim});
  for (std::size_t i = 0; i < n * obs_dim; ++i) ds.obs[i] = rng.normal();
  for (std::size_t i = 0; i < n; ++i) ds.labels.push_back(rng.below(25));
  return ds;
}

std::vector<double> random_distribution(Rng& rng) {
  std::vector<double> p(kActionCount);
  double sum = 0.0;
  for (double& x : p) {
    x = rng.uniform() + 1e-3;
    sum += x;
  }
  for (double& x : p) x /= sum;
  return p;
}

LatentTransition make_transition(const std::vector<double>& s, int a, double r,
                                 const std::vector<double>& s_next, bool done) {
  LatentTransition t;
  t.s = s;
  t.a = a;
  t.r = r;
  t.s_next = s_next;
  t.done = done;
  return t;
}

}  // namespace

TEST_CASE("untrained behavior cloning is exactly the uniform policy") {
  BcConfig cfg;
  cfg.obs_dim = 6;
  cfg.hidden = 8;
  cfg.epochs = 1;
  cfg.batch_size = 16;
  const BcDataset ds = random_label_dataset(64, 6, 1);
  const auto result = train_behavior_cloning(ds, cfg);
  CHECK(result.initial_loss == doctest::Approx(std::log(25.0)).epsilon(1e-12));

  SUBCASE("probabilities are a floored, renormalized distribution") {
    Rng rng(2);
    std::vector<double> obs(6);
    for (double& x : obs) x = rng.normal();
    const auto p = bc_probs(result.model, obs);
    REQUIRE(p.size() == 25);
    double sum = 0.0;
    for (double x : p) {
      CHECK(x >= 1e-6 / (1.0 + 25e-6));
      sum += x;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));

    const auto raw = bc_probs_unfloored(result.model, obs);
    const auto amax = std::max_element(raw.begin(), raw.end()) - raw.begin();
    const auto fmax = std::max_element(p.begin(), p.end()) - p.begin();
    CHECK(amax == fmax);
  }
}

TEST_CASE("behavior cloning learns a separable rule and flails on noise") {
  BcConfig cfg;
  cfg.obs_dim = 10;
  cfg.hidden = 32;
  cfg.epochs = 60;
  cfg.learning_rate = 3e-3;
  cfg.weight_decay = 1e-4;
  cfg.batch_size = 64;
  cfg.seed = 5;

  SUBCASE("separable labels reach high train accuracy") {
    const BcDataset ds = separable_dataset(1500, 10, 7);
    const auto result = train_behavior_cloning(ds, cfg);
    CHECK(result.loss.back() < result.initial_loss);
    CHECK(bc_accuracy(result.model, ds) >= 0.95);
    const BcDataset held_out = separable_dataset(600, 10, 8);
    CHECK(bc_accuracy(result.model, held_out) >= 0.95);
  }
  SUBCASE("uniformly random labels stay near chance accuracy") {
    BcConfig quick = cfg;
    quick.epochs = 8;
    const BcDataset ds = random_label_dataset(10000, 10, 9);
    const auto result = train_behavior_cloning(ds, quick);
    const BcDataset probe = random_label_dataset(10000, 10, 10);
    CHECK(bc_accuracy(result.model, probe) ==
          doctest::Approx(1.0 / 25.0).epsilon(0.6));
    CHECK(std::abs(bc_accuracy(result.model, probe) - 0.04) < 0.02);
  }
  SUBCASE("single-class labels are flagged but still train") {
    BcConfig quick = cfg;
    quick.epochs = 2;
    BcDataset ds = random_label_dataset(100, 10, 11);
    std::fill(ds.labels.begin(), ds.labels.end(), 4);
    const auto result = train_behavior_cloning(ds, quick);
    CHECK(result.degenerate_labels);
    CHECK(bc_accuracy(result.model, ds) == 1.0);
  }
}

TEST_CASE("behavior-cloning training is deterministic and guards its inputs") {
  BcConfig cfg;
  cfg.obs_dim = 6;
  cfg.hidden = 8;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.seed = 21;
  const BcDataset ds = random_label_dataset(80, 6, 12);

  const auto a = train_behavior_cloning(ds, cfg);
  const auto b = train_behavior_cloning(ds, cfg);
  CHECK(a.loss == b.loss);
  const auto pa = a.model.params.all();
  const auto pb = b.model.params.all();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    for (std::size_t j = 0; j < pa[i]->value.size(); ++j) {
      CHECK(pa[i]->value[j] == pb[i]->value[j]);
    }
  }

  SUBCASE("dimension and label guards") {
    BcDataset bad = random_label_dataset(10, 5, 13);
    CHECK_THROWS_AS(train_behavior_cloning(bad, cfg), DimensionError);
    BcDataset empty;
    CHECK_THROWS_AS(train_behavior_cloning(empty, cfg), DataError);
    BcDataset out_of_range = random_label_dataset(10, 6, 14);
    out_of_range.labels[3] = 25;
    CHECK_THROWS_AS(train_behavior_cloning(out_of_range, cfg), DataError);
  }
}

TEST_CASE("batch-normalized classifier gradients match finite differences") {
  BcConfig cfg;
  cfg.obs_dim = 5;
  cfg.hidden = 6;
  Rng rng(31);
  BcModel model = BcModel::create(cfg, rng);
  // Give the zero head some signal so its gradients are informative.
  for (Param* p : model.params.all()) {
    if (p->name == "head.W") {
      for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] = 0.05 * rng.normal();
    }
  }

  const BcDataset ds = random_label_dataset(12, 5, 32);
  std::vector<Param*> params = model.params.all();

  // Freeze running statistics so repeated forward passes are pure functions.
  const auto forward_loss = [&] {
    BatchNormState saved1 = model.bn1, saved2 = model.bn2;
    Tape t;
    const auto loss =
        t.cross_entropy_logits_mean(model.logits_train(t, t.leaf(ds.obs)), ds.labels);
    const double v = t.value(loss).item();
    model.bn1 = saved1;
    model.bn2 = saved2;
    return v;
  };
  const auto compute_grads = [&] {
    BatchNormState saved1 = model.bn1, saved2 = model.bn2;
    for (Param* p : params) p->grad.fill(0.0);
    Tape t;
    const auto loss =
        t.cross_entropy_logits_mean(model.logits_train(t, t.leaf(ds.obs)), ds.labels);
    t.backward(loss);
    t.apply_param_grads();
    model.bn1 = saved1;
    model.bn2 = saved2;
  };
  Rng check_rng(33);
  const auto report = check_gradients(params, forward_loss, compute_grads,
                                      GradCheckOptions{1e-5, 30}, check_rng);
  CAPTURE(report.worst_param);
  CHECK(report.max_rel_err < 1e-5);
}

TEST_CASE("constrained action selection respects the eligibility threshold") {
  Rng rng(41);

  SUBCASE("threshold zero is the plain argmax") {
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> q(25);
      for (double& x : q) x = rng.normal();
      const auto p = random_distribution(rng);
      const int a = dbcq_select_action(q, p, 0.0);
      CHECK(a == static_cast<int>(std::max_element(q.begin(), q.end()) - q.begin()));
    }
  }
  SUBCASE("uniform behavior keeps every action eligible at any threshold") {
    const std::vector<double> uniform(25, 1.0 / 25.0);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> q(25);
      for (double& x : q) x = rng.normal();
      CHECK(dbcq_select_action(q, uniform, 1.0) ==
            static_cast<int>(std::max_element(q.begin(), q.end()) - q.begin()));
    }
  }
  SUBCASE("a high-Q but improbable action is excluded") {
    std::vector<double> q(25, 0.0);
    q[3] = 10.0;  // best Q
    q[7] = 1.0;
    std::vector<double> p(25, (1.0 - 0.5 - 0.05) / 23.0);
    p[0] = 0.5;   // behavior argmax
    p[3] = 0.05;  // ratio 0.1 < 0.3
    const int a = dbcq_select_action(q, p, 0.3);
    // Brute-force oracle over all 25 actions.
    int expect = -1;
    for (int cand = 0; cand < 25; ++cand) {
      if (p[cand] / 0.5 < 0.3) continue;
      if (expect < 0 || q[cand] > q[expect]) expect = cand;
    }
    CHECK(a == expect);
    CHECK(a != 3);
  }
  SUBCASE("the constraint holds over random inputs, and ties pick the lowest index") {
    for (int trial = 0; trial < 2000; ++trial) {
      std::vector<double> q(25);
      for (double& x : q) x = rng.normal();
      const auto p = random_distribution(rng);
      const double tau = trial % 3 == 0 ? 0.0 : (trial % 3 == 1 ? 0.3 : 1.0);
      const int a = dbcq_select_action(q, p, tau);
      const double max_p = *std::max_element(p.begin(), p.end());
      CHECK(p[a] / max_p >= tau);
    }
    std::vector<double> tie_q(25, 1.0);
    const std::vector<double> uniform(25, 1.0 / 25.0);
    CHECK(dbcq_select_action(tie_q, uniform, 0.3) == 0);
    tie_q[0] = 0.0;
    CHECK(dbcq_select_action(tie_q, uniform, 0.3) == 1);
  }
}

TEST_CASE("Bellman targets: terminal transitions and hand-computed values") {
  DbcqConfig cfg;
  cfg.latent = 4;
  cfg.hidden = 6;
  cfg.tau = 0.0;
  Rng rng(51);
  DbcqModel model = DbcqModel::create(cfg, rng);

  // Flatten the Q-nets to constants: zero all weights, set the head biases.
  std::vector<double> online_bias(25, 0.0), target_bias(25, 0.0);
  online_bias[13] = 2.0;  // online argmax at 13
  online_bias[4] = 1.0;
  target_bias[13] = 0.7;  // target's value at the online argmax
  target_bias[4] = 5.0;   // tempting but not selected: selection uses online Q
  for (Param* p : model.q_online.params.all()) {
    p->value.fill(0.0);
    if (p->name == "head.b") {
      std::copy(online_bias.begin(), online_bias.end(), p->value.data());
    }
  }
  for (Param* p : model.q_target.params.all()) {
    p->value.fill(0.0);
    if (p->name == "head.b") {
      std::copy(target_bias.begin(), target_bias.end(), p->value.data());
    }
  }

  const std::vector<double> s{0.1, -0.2, 0.3, 0.4};
  const std::vector<double> s2{-0.5, 0.2, 0.0, 0.1};
  const auto terminal = make_transition(s, 3, -1.0, {0, 0, 0, 0}, true);
  const auto mid = make_transition(s, 7, 0.0, s2, false);

  const auto y = dbcq_targets({&terminal, &mid}, model, cfg);
  REQUIRE(y.size() == 2);
  CHECK(y[0] == -1.0);  // exactly r on done
  // a' = argmax online = 13; y = 0 + 0.99 * target.head.b[13].
  CHECK(y[1] == doctest::Approx(0.99 * 0.7).epsilon(1e-15));

  SUBCASE("unit target-Q gives gamma exactly") {
    for (Param* p : model.q_target.params.all()) {
      p->value.fill(0.0);
      if (p->name == "head.b") p->value.fill(1.0);
    }
    const auto y2 = dbcq_targets({&mid}, model, cfg);
    CHECK(y2[0] == 0.99);
  }
}

TEST_CASE("one training step reproduces the hand-computed Huber TD loss") {
  DbcqConfig cfg;
  cfg.latent = 3;
  cfg.hidden = 4;
  cfg.tau = 0.0;
  cfg.learning_rate = 0.0;  // freeze parameters: we only check the loss value
  cfg.polyak = 0.0;
  Rng rng(61);
  DbcqModel model = DbcqModel::create(cfg, rng);

  std::vector<double> online_bias(25, 0.0), target_bias(25, 0.0);
  online_bias[2] = 0.4;   // Q(s, a) = 0.4 for every s at action 2
  online_bias[9] = 1.5;   // online argmax
  target_bias[9] = -0.3;  // value backed up through the target net
  for (Param* p : model.q_online.params.all()) {
    p->value.fill(0.0);
    if (p->name == "head.b") {
      std::copy(online_bias.begin(), online_bias.end(), p->value.data());
    }
  }
  for (Param* p : model.q_target.params.all()) {
    p->value.fill(0.0);
    if (p->name == "head.b") {
      std::copy(target_bias.begin(), target_bias.end(), p->value.data());
    }
  }

  const auto t1 = make_transition({1, 0, 0}, 2, 0.0, {0, 1, 0}, false);
  const auto t2 = make_transition({0, 1, 0}, 2, 1.0, {0, 0, 0}, true);

  Adam opt_q(model.q_online.params.all(), {});
  Adam opt_b(model.behavior.params.all(), {});
  const auto result = dbcq_train_step({&t1, &t2}, model, cfg, opt_q, opt_b);

  // t1: y = 0.99 * (-0.3) = -0.297, diff = 0.4 + 0.297 = 0.697 -> 0.5 * d^2.
  // t2: y = 1, diff = 0.4 - 1 = -0.6 -> 0.18. Mean of the two Huber values.
  const double expected = 0.5 * (0.5 * 0.697 * 0.697 + 0.5 * 0.36);
  CHECK(result.td_loss == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("Polyak updates blend and converge geometrically") {
  DbcqConfig cfg;
  cfg.latent = 3;
  cfg.hidden = 4;
  Rng rng(71);
  DbcqModel model = DbcqModel::create(cfg, rng);

  SUBCASE("coefficient one copies the online network") {
    polyak_update(model.q_target, model.q_online, 1.0);
    const auto a = model.q_target.params.all();
    const auto b = model.q_online.params.all();
    for (std::size_t i = 0; i < a.size(); ++i) {
      for (std::size_t j = 0; j < a[i]->value.size(); ++j) {
        CHECK(a[i]->value[j] == b[i]->value[j]);
      }
    }
  }
  SUBCASE("coefficient 0.01 against a frozen online net decays the gap") {
    // Measure the distance before and after 200 blends.
    const auto gap = [&] {
      double g = 0.0;
      const auto a = model.q_target.params.all();
      const auto b = model.q_online.params.all();
      for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = 0; j < a[i]->value.size(); ++j) {
          g += std::abs(a[i]->value[j] - b[i]->value[j]);
        }
      }
      return g;
    };
    for (Param* p : model.q_target.params.all()) p->value.fill(2.0);
    const double g0 = gap();
    for (int k = 0; k < 200; ++k) polyak_update(model.q_target, model.q_online, 0.01);
    const double g200 = gap();
    CHECK(g200 == doctest::Approx(std::pow(0.99, 200) * g0).epsilon(1e-9));
  }
}

TEST_CASE("full dBCQ training: curve shape, determinism, planted optimum") {
  // Planted problem: the sign of s[0] decides which of two actions pays +1;
  // every other action pays -1. Single-step episodes.
  const std::size_t latent = 8;
  Rng rng(81);
  std::vector<LatentTransition> pool;
  const auto planted_action = [](const std::vector<double>& s) {
    return s[0] > 0 ? 12 : 7;
  };
  for (int i = 0; i < 4000; ++i) {
    std::vector<double> s(latent);
    for (double& x : s) x = rng.normal();
    const int best = planted_action(s);
    const int a = rng.uniform() < 0.12 ? best : static_cast<int>(rng.below(25));
    const double r = a == best ? 1.0 : -1.0;
    pool.push_back(make_transition(s, a, r, std::vector<double>(latent, 0.0), true));
  }

  DbcqConfig cfg;
  cfg.latent = latent;
  cfg.hidden = 32;
  cfg.iterations = 3000;
  cfg.eval_period = 500;
  cfg.batch_size = 128;
  cfg.seed = 17;

  std::size_t eval_calls = 0;
  const DbcqEvaluator counter = [&](const DbcqModel&) {
    ++eval_calls;
    return static_cast<double>(eval_calls);
  };
  const auto result = dbcq_train(pool, cfg, counter);

  SUBCASE("the evaluator fires once per period") {
    CHECK(eval_calls == 6);
    REQUIRE(result.curve.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(result.curve[i].iteration == (i + 1) * 500);
      CHECK(result.curve[i].score == static_cast<double>(i + 1));
      CHECK(std::isfinite(result.curve[i].mean_td_loss));
    }
  }
  SUBCASE("reruns are bitwise identical") {
    const auto again = dbcq_train(pool, cfg, nullptr);
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(result.curve[i].mean_td_loss == again.curve[i].mean_td_loss);
    }
    const auto pa = result.model.q_online.params.all();
    const auto pb = again.model.q_online.params.all();
    for (std::size_t i = 0; i < pa.size(); ++i) {
      for (std::size_t j = 0; j < pa[i]->value.size(); ++j) {
        CHECK(pa[i]->value[j] == pb[i]->value[j]);
      }
    }
  }
  SUBCASE("the greedy policy recovers the planted optimum on held-out states") {
    Rng probe_rng(99);
    std::size_t hits = 0;
    const std::size_t n_probe = 500;
    for (std::size_t i = 0; i < n_probe; ++i) {
      std::vector<double> s(latent);
      for (double& x : s) x = probe_rng.normal();
      Tensor row({1, latent});
      std::copy(s.begin(), s.end(), row.data());
      const Tensor q = result.model.q_online.forward_values(row);
      const std::vector<double> qv(q.data(), q.data() + 25);
      const int pick = dbcq_select_action(qv, latent_behavior_probs(result.model, s),
                                          cfg.tau);
      hits += pick == planted_action(s) ? 1 : 0;
    }
    CHECK(static_cast<double>(hits) / static_cast<double>(n_probe) >= 0.8);
  }
  SUBCASE("TD loss falls as learning progresses") {
    CHECK(result.curve.back().mean_td_loss < result.curve.front().mean_td_loss);
  }
}

TEST_CASE("dBCQ configuration guards") {
  const std::vector<LatentTransition> pool = {
      make_transition({0.0, 0.0}, 1, 1.0, {0.0, 0.0}, true)};
  DbcqConfig cfg;
  cfg.latent = 2;
  cfg.hidden = 4;
  cfg.iterations = 1;

  SUBCASE("tau outside [0,1]") {
    cfg.tau = 1.5;
    CHECK_THROWS_AS(dbcq_train(pool, cfg, nullptr), ConfigError);
  }
  SUBCASE("gamma outside (0,1]") {
    cfg.gamma = 0.0;
    CHECK_THROWS_AS(dbcq_train(pool, cfg, nullptr), ConfigError);
  }
  SUBCASE("empty transition pool") {
    CHECK_THROWS_AS(dbcq_train({}, cfg, nullptr), DataError);
  }
  SUBCASE("latent width mismatch") {
    cfg.latent = 3;
    CHECK_THROWS_AS(dbcq_train(pool, cfg, nullptr), DimensionError);
  }
}
