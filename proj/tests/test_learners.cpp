#include <cmath>

#include "doctest.h"
#include "poela/envs.hpp"
#include "poela/learners.hpp"

using namespace poela;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

TrainConfig small_config(LearnerTag tag, std::uint64_t seed) {
  TrainConfig c;
  c.tag = tag;
  c.lambda = 0.0;
  c.truncation = 1000.0;
  c.learning_rate = 0.2;
  c.max_steps = 40;
  c.checkpoint_every = 10;
  c.seed = seed;
  c.arch = PolicyArch::LinearSoftmax;
  c.hidden = 0;
  return c;
}

Checkpoint make_ckpt(std::size_t step, double value, double ess_v) {
  Checkpoint c;
  c.step = step;
  Estimate e;
  e.value = value;
  e.ess = ess_v;
  c.val_estimate = e;
  return c;
}

}  // namespace

TEST_CASE("select_checkpoint rule") {
  SUBCASE("all below threshold -> none") {
    std::vector<Checkpoint> cks{make_ckpt(1, 0.9, 10.0), make_ckpt(2, 0.5, 50.0)};
    CHECK(select_checkpoint(cks, 100.0) == nullptr);
  }
  SUBCASE("single eligible checkpoint is returned") {
    std::vector<Checkpoint> cks{make_ckpt(1, 0.9, 10.0), make_ckpt(2, 0.5, 300.0)};
    const Checkpoint* c = select_checkpoint(cks, 200.0);
    REQUIRE(c != nullptr);
    CHECK(c->step == 2);
  }
  SUBCASE("(0.9,150), (0.8,300), (0.85,250) with threshold 200 -> the (0.85,250) one") {
    std::vector<Checkpoint> cks{make_ckpt(1, 0.9, 150.0), make_ckpt(2, 0.8, 300.0),
                                make_ckpt(3, 0.85, 250.0)};
    const Checkpoint* c = select_checkpoint(cks, 200.0);
    REQUIRE(c != nullptr);
    CHECK(c->step == 3);
  }
  SUBCASE("ties break to the earliest step") {
    std::vector<Checkpoint> cks{make_ckpt(1, 0.8, 300.0), make_ckpt(2, 0.8, 400.0)};
    const Checkpoint* c = select_checkpoint(cks, 0.0);
    REQUIRE(c != nullptr);
    CHECK(c->step == 1);
  }
  SUBCASE("checkpoints without a validation estimate are skipped") {
    std::vector<Checkpoint> cks{make_ckpt(1, 0.8, 300.0)};
    Checkpoint degenerate;
    degenerate.step = 2;
    cks.push_back(degenerate);
    const Checkpoint* c = select_checkpoint(cks, 0.0);
    REQUIRE(c != nullptr);
    CHECK(c->step == 1);
  }
}

TEST_CASE("training is deterministic given the seed") {
  const auto env = make_env(EnvSpec{.tag = "example1", .contexts = 4, .actions = 4});
  const Dataset train = generate_logged_data(*env, BehaviorTag::Uniform, 120, 31);
  const Dataset val = generate_logged_data(*env, BehaviorTag::Uniform, 60, 32);
  TrainConfig cfg = small_config(LearnerTag::Poela, 99);
  cfg.delta = 0.0;
  const auto a = train_poela(cfg, train, val);
  const auto b = train_poela(cfg, train, val);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].params.values == b[i].params.values);  // bit-identical
    CHECK(a[i].train_objective == b[i].train_objective);
  }
}

TEST_CASE("poela checkpoints place zero probability on ineligible actions") {
  const auto env = make_env(EnvSpec{.tag = "example1", .contexts = 6, .actions = 6});
  const Dataset train = generate_logged_data(*env, BehaviorTag::Uniform, 40, 41);
  const Dataset val = generate_logged_data(*env, BehaviorTag::Uniform, 40, 42);
  TrainConfig cfg = small_config(LearnerTag::Poela, 7);
  cfg.delta = 0.0;
  const auto checkpoints = train_poela(cfg, train, val);
  REQUIRE(!checkpoints.empty());

  const NeighborIndex index(train);
  const EligibleMaskSource source(index, 0.0);
  for (const Checkpoint& ckpt : checkpoints) {
    const MaskedPolicy policy{&ckpt.params, &source};
    for (const Trajectory& t : train.trajectories()) {
      const std::vector<std::uint8_t> mask = source.mask_at(t.contexts[0]);
      const std::vector<double> probs = policy.probs(t.contexts[0]);
      for (int a = 0; a < train.action_count(); ++a)
        if (!mask[a]) CHECK(probs[a] == 0.0);
    }
  }
}

TEST_CASE("checkpoint objective equals an independent recomputation") {
  const auto env = make_env(EnvSpec{.tag = "example1", .contexts = 4, .actions = 4});
  const Dataset train = generate_logged_data(*env, BehaviorTag::Uniform, 80, 51);
  const Dataset val = generate_logged_data(*env, BehaviorTag::Uniform, 40, 52);
  TrainConfig cfg = small_config(LearnerTag::Poela, 13);
  cfg.delta = 0.0;
  cfg.lambda = 0.5;
  const auto checkpoints = train_poela(cfg, train, val);

  const NeighborIndex index(train);
  const EligibleMask masks = precompute_masks(index, train, 0.0);
  for (const Checkpoint& ckpt : checkpoints) {
    const WeightTable w = policy_weights(ckpt.params, &masks, train, cfg.truncation);
    const Estimate e = sntis_value(w, train);
    const double expected = e.value - cfg.lambda * std::sqrt(sntis_variance(w, train, e.value));
    CHECK(ckpt.train_objective == doctest::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("gradient ascent does not decrease a smooth objective early on") {
  const auto env = make_env(EnvSpec{.tag = "example1", .contexts = 4, .actions = 4});
  const Dataset train = generate_logged_data(*env, BehaviorTag::Uniform, 100, 61);
  const Dataset val = generate_logged_data(*env, BehaviorTag::Uniform, 50, 62);
  TrainConfig cfg = small_config(LearnerTag::PoCrm, 17);
  cfg.learning_rate = 0.02;  // small enough for monotone ascent
  cfg.max_steps = 10;
  cfg.checkpoint_every = 1;
  cfg.truncation = kInf;
  const auto checkpoints = train_pocrm(cfg, train, val);
  REQUIRE(checkpoints.size() == 10);
  for (std::size_t i = 1; i < checkpoints.size(); ++i)
    CHECK(checkpoints[i].train_objective >= checkpoints[i - 1].train_objective - 1e-12);
}

TEST_CASE("unconstrained ascent improves SNIS on a single-context bandit") {
  // lambda = 0, M = inf, delta = inf: poela reduces to plain SNIS ascent.
  std::vector<Trajectory> ts;
  Rng rng(71);
  for (int i = 0; i < 60; ++i) {
    Trajectory t;
    t.contexts = {{1.0}};
    const int a = static_cast<int>(rng.next_below(3));
    t.actions = {a};
    t.rewards = {a == 2 ? 1.0 : (a == 1 ? 0.2 : -0.5)};
    t.behavior_probs = {1.0 / 3.0};
    ts.push_back(std::move(t));
  }
  const Dataset train(std::move(ts), 1, 3, 1.0, 1, "single-context");
  TrainConfig cfg = small_config(LearnerTag::Poela, 3);
  cfg.delta = kInf;
  cfg.truncation = kInf;
  cfg.max_steps = 60;
  const auto checkpoints = train_poela(cfg, train, Dataset({}, 1, 3, 1.0, 1, "empty"));
  CHECK(checkpoints.back().train_objective > checkpoints.front().train_objective);
  CHECK(checkpoints.back().train_objective > 0.8);
}

TEST_CASE("pomu masks collapse or open up with the threshold") {
  const auto env = make_env(EnvSpec{.tag = "example1", .contexts = 4, .actions = 4});
  const Dataset train = generate_logged_data(*env, BehaviorTag::Uniform, 60, 81);
  const Dataset val = generate_logged_data(*env, BehaviorTag::Uniform, 30, 82);
  const int a_n = env->action_count();
  const BehaviorEstimate exact = BehaviorEstimate::exact(
      [a_n](std::span<const double>) { return std::vector<double>(a_n, 1.0 / a_n); }, a_n);

  // b < 1/|A|: all-true masks, PO-mu cannot rule out unobserved actions.
  const EligibleMask open = overlap_mask(exact, train, 0.1);
  for (std::size_t i = 0; i < train.size(); ++i)
    for (int a = 0; a < a_n; ++a) CHECK(open.masks[i][0][a] == 1);

  // b above max muhat: masks collapse to the logged action.
  const EligibleMask closed = overlap_mask(exact, train, 0.9);
  for (std::size_t i = 0; i < train.size(); ++i) {
    int count = 0;
    for (int a = 0; a < a_n; ++a) count += closed.masks[i][0][a];
    CHECK(count == 1);
  }

  // And the training loop runs under both.
  TrainConfig cfg = small_config(LearnerTag::PoMu, 5);
  cfg.mu_threshold = 0.9;
  cfg.max_steps = 5;
  const auto cks = train_pomu(cfg, train, val, exact);
  CHECK(cks.size() == 1 + 5 / cfg.checkpoint_every);
}

TEST_CASE("theorem-3 style consistency of SNTIS selection over a finite class") {
  // Discrete bandit, |X|=2 one-hot contexts, |A|=4, uniform behavior; the 16
  // deterministic policies form the class. M(n) = sqrt(n).
  const double reward[2][4] = {{0.9, 0.1, -0.4, 0.3}, {-0.8, 0.6, 0.2, -0.2}};
  auto gen = [&](std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Trajectory> ts;
    for (std::size_t i = 0; i < n; ++i) {
      const int c = static_cast<int>(rng.next_below(2));
      const int a = static_cast<int>(rng.next_below(4));
      Trajectory t;
      t.contexts = {{c == 0 ? 1.0 : 0.0, c == 0 ? 0.0 : 1.0}};
      t.actions = {a};
      t.rewards = {reward[c][a]};
      t.behavior_probs = {0.25};
      ts.push_back(std::move(t));
    }
    return Dataset(std::move(ts), 2, 4, 1.0, 1, "bandit16");
  };
  double best_value = -1e9;
  for (int a0 = 0; a0 < 4; ++a0)
    for (int a1 = 0; a1 < 4; ++a1)
      best_value = std::max(best_value, 0.5 * (reward[0][a0] + reward[1][a1]));
  CHECK(best_value == doctest::Approx(0.75));  // 0.5 * (0.9 + 0.6)

  const std::size_t n = 10000;
  const double truncation = std::sqrt(static_cast<double>(n));
  int good = 0;
  for (std::uint64_t rep = 0; rep < 100; ++rep) {
    const Dataset ds = gen(n, derive_seed(888, rep));
    double best_obj = -1e9;
    double chosen_value = 0.0;
    for (int a0 = 0; a0 < 4; ++a0) {
      for (int a1 = 0; a1 < 4; ++a1) {
        const WeightTable w = compute_weights(
            ds,
            [&](std::size_t i, std::size_t) {
              const int c = ds.traj(i).contexts[0][0] == 1.0 ? 0 : 1;
              const int pick = c == 0 ? a0 : a1;
              return ds.traj(i).actions[0] == pick ? 1.0 : 0.0;
            },
            truncation);
        const Estimate e = sntis_value(w, ds);
        const double obj = e.value - std::sqrt(sntis_variance(w, ds, e.value));
        if (obj > best_obj) {
          best_obj = obj;
          chosen_value = 0.5 * (reward[0][a0] + reward[1][a1]);
        }
      }
    }
    if (std::abs(chosen_value - best_value) <= 0.05) ++good;
  }
  CHECK(good >= 95);
}
