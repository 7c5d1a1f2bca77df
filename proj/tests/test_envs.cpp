#include <cmath>

#include "doctest.h"
#include "poela/envs.hpp"

using namespace poela;

namespace {

PolicyFn deterministic(int action, int action_count) {
  return [action, action_count](std::span<const double>) {
    std::vector<double> p(action_count, 0.0);
    p[action] = 1.0;
    return p;
  };
}

PolicyFn uniform(int action_count) {
  return [action_count](std::span<const double>) {
    return std::vector<double>(action_count, 1.0 / action_count);
  };
}

}  // namespace

TEST_CASE("example1 structure and values") {
  const auto env = make_env(EnvSpec{.tag = "example1", .contexts = 10, .actions = 10});
  CHECK(env->feature_dim() == 10);
  CHECK(env->action_count() == 10);
  CHECK(env->h_max() == 1);

  SUBCASE("optimal value is 0") { CHECK(optimal_value(*env) == 0.0); }
  SUBCASE("uniform policy value is -1.45 analytically and by Monte Carlo") {
    const OracleValue oracle = oracle_context_value(*env, uniform(10));
    CHECK(oracle.overall == doctest::Approx(-1.45).epsilon(1e-12));
    const McValue mc = mc_value(*env, uniform(10), 100000, 7);
    CHECK(std::abs(mc.mean - (-1.45)) <= 3.0 * mc.std_error);
  }
  SUBCASE("per-context oracles") {
    // Rewarded action in a positive context.
    const OracleValue v_good = oracle_context_value(*env, deterministic(0, 10));
    CHECK(v_good.per_context[0].second == 1.0);  // context 0 rewards action 0
    // Uniform policy in a negative context: (-1 - 5) / 2 = -3.
    const OracleValue v_uni = oracle_context_value(*env, uniform(10));
    CHECK(v_uni.per_context[7].second == doctest::Approx(-3.0).epsilon(1e-12));
  }
  SUBCASE("odd sizes are rejected") {
    CHECK_THROWS_AS(make_env(EnvSpec{.tag = "example1", .contexts = 5, .actions = 4}),
                    ValidationError);
    CHECK_THROWS_AS(make_env(EnvSpec{.tag = "example1", .contexts = 4, .actions = 3}),
                    ValidationError);
  }
}

TEST_CASE("example2 structure and values") {
  EnvSpec spec;
  spec.tag = "example2";
  spec.actions = 2;
  spec.horizon = 10;
  const auto env = make_env(spec);

  SUBCASE("optimal value is 0 via the first action") { CHECK(optimal_value(*env) == 0.0); }
  SUBCASE("a1-first policy is worth 0") {
    const McValue mc = mc_value(*env, deterministic(0, 2), 100000, 11);
    CHECK(std::abs(mc.mean - 0.0) <= 3.0 * mc.std_error);
    CHECK(oracle_context_value(*env, deterministic(0, 2)).overall == 0.0);
  }
  SUBCASE("a2-first policies are worth -1.5 regardless of the continuation") {
    CHECK(oracle_context_value(*env, deterministic(1, 2)).overall ==
          doctest::Approx(-1.5).epsilon(1e-12));
    const McValue mc = mc_value(*env, deterministic(1, 2), 100000, 13);
    CHECK(std::abs(mc.mean - (-1.5)) <= 3.0 * mc.std_error);
    // Mixed continuation, same value.
    const PolicyFn mixed = [](std::span<const double> x) {
      if (x[0] == 1.0) return std::vector<double>{0.0, 1.0};
      return std::vector<double>{0.3, 0.7};
    };
    CHECK(oracle_context_value(*env, mixed).overall == doctest::Approx(-1.5).epsilon(1e-12));
  }
  SUBCASE("logged data satisfies dataset invariants with exact propensities") {
    const Dataset ds = generate_logged_data(*env, BehaviorTag::Uniform, 500, 3);
    CHECK(ds.size() == 500);
    for (const Trajectory& t : ds.trajectories())
      for (double p : t.behavior_probs) CHECK(p == 0.5);
    // Horizons are 1 (terminal first step) or the full chain length.
    for (const Trajectory& t : ds.trajectories())
      CHECK((t.horizon() == 1 || t.horizon() == 10));
  }
  SUBCASE("chain contexts are distinct per path prefix") {
    const Dataset ds = generate_logged_data(*env, BehaviorTag::Uniform, 300, 5);
    // Two chain trajectories that diverge at step 2 must differ at step 3.
    const Trajectory* first = nullptr;
    for (const Trajectory& t : ds.trajectories()) {
      if (t.horizon() != 10) continue;
      if (!first) {
        first = &t;
        continue;
      }
      if (t.actions[1] != first->actions[1]) {
        CHECK(t.contexts[2] != first->contexts[2]);
        break;
      }
    }
  }
}

TEST_CASE("example3 aliasing") {
  EnvSpec spec;
  spec.tag = "example3";
  spec.actions = 3;
  spec.horizon = 6;
  const auto env = make_env(spec);

  // Actions 0 and 2 lead to the identical next context but different returns.
  Rng rng(17);
  std::vector<double> ctx_after_0, ctx_after_2;
  double return_0 = 0.0, return_2 = 0.0;
  {
    auto ep = env->start(rng);
    auto [r1, d1] = ep->apply(0, rng);
    REQUIRE(!d1);
    ctx_after_0 = ep->context();
    auto [r2, d2] = ep->apply(1, rng);
    CHECK(d2);
    return_0 = r1 + r2;
  }
  {
    auto ep = env->start(rng);
    auto [r1, d1] = ep->apply(2, rng);
    REQUIRE(!d1);
    ctx_after_2 = ep->context();
    auto [r2, d2] = ep->apply(0, rng);
    CHECK(d2);
    return_2 = r1 + r2;
  }
  CHECK(ctx_after_0 == ctx_after_2);  // exact vector equality
  CHECK(std::abs(return_0) == 1.0);
  CHECK(return_2 == -5.0);

  CHECK(oracle_context_value(*env, deterministic(2, 3)).overall == -5.0);
  CHECK(optimal_value(*env) == 0.0);
}

TEST_CASE("mixture behavior propensities") {
  EnvSpec spec;
  spec.tag = "synthetic";
  spec.actions = 4;
  spec.horizon = 6;
  spec.dim = 2;
  const auto env = make_env(spec);
  const Dataset ds = generate_logged_data(*env, BehaviorTag::Mixture, 100, 23);
  const double hi = 0.7 + 0.3 / 4.0, lo = 0.3 / 4.0;
  for (const Trajectory& t : ds.trajectories())
    for (std::size_t h = 0; h < t.horizon(); ++h)
      CHECK((t.behavior_probs[h] == hi || t.behavior_probs[h] == lo));
}

TEST_CASE("seed determinism of generation and Monte Carlo") {
  EnvSpec spec;
  spec.tag = "synthetic";
  spec.actions = 3;
  spec.horizon = 5;
  spec.dim = 3;
  spec.env_seed = 2;
  const auto env = make_env(spec);
  const Dataset a = generate_logged_data(*env, BehaviorTag::Uniform, 50, 77);
  const Dataset b = generate_logged_data(*env, BehaviorTag::Uniform, 50, 77);
  CHECK(a.fingerprint() == b.fingerprint());
  const Dataset c = generate_logged_data(*env, BehaviorTag::Uniform, 50, 78);
  CHECK(a.fingerprint() != c.fingerprint());

  const McValue m1 = mc_value(*env, uniform(3), 500, 5);
  const McValue m2 = mc_value(*env, uniform(3), 500, 5);
  CHECK(m1.mean == m2.mean);
  CHECK(m1.std_error == m2.std_error);

  CHECK_THROWS_AS(oracle_context_value(*env, uniform(3)), UnsupportedError);
}

TEST_CASE("oracle matches Monte Carlo for random policies on finite envs") {
  for (const char* tag : {"example1", "example2", "example3"}) {
    EnvSpec spec;
    spec.tag = tag;
    if (spec.tag == "example1") {
      spec.contexts = 4;
      spec.actions = 4;
    } else {
      spec.horizon = 5;
      spec.actions = spec.tag == "example2" ? 2 : 3;
    }
    const auto env = make_env(spec);
    const int a_n = env->action_count();
    for (std::uint64_t rep = 0; rep < 20; ++rep) {
      Rng rng(derive_seed(900 + a_n, rep));
      std::vector<double> logits(a_n);
      for (double& v : logits) v = rng.next_uniform(-1.0, 1.0);
      double mx = *std::max_element(logits.begin(), logits.end());
      double sum = 0.0;
      std::vector<double> probs(a_n);
      for (int a = 0; a < a_n; ++a) sum += probs[a] = std::exp(logits[a] - mx);
      for (double& v : probs) v /= sum;
      const PolicyFn pi = [probs](std::span<const double>) { return probs; };
      const double v_exact = oracle_context_value(*env, pi).overall;
      const McValue mc = mc_value(*env, pi, 20000, derive_seed(901, rep));
      CHECK(std::abs(mc.mean - v_exact) <= std::max(3.0 * mc.std_error, 1e-9));
    }
  }
}
