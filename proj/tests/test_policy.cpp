#include <cmath>

#include "doctest.h"
#include "poela/policy.hpp"

using namespace poela;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Dataset random_instance(std::size_t n, std::size_t horizon, std::size_t dim, int actions,
                        std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Trajectory> ts;
  for (std::size_t i = 0; i < n; ++i) {
    Trajectory t;
    for (std::size_t h = 0; h < horizon; ++h) {
      std::vector<double> x(dim);
      for (double& v : x) v = rng.next_uniform(-1.0, 1.0);
      t.contexts.push_back(std::move(x));
      t.actions.push_back(static_cast<int>(rng.next_below(actions)));
      t.rewards.push_back(rng.next_uniform(-2.0, 2.0));
      t.behavior_probs.push_back(rng.next_uniform(0.2, 0.9));
    }
    ts.push_back(std::move(t));
  }
  return Dataset(std::move(ts), dim, actions, 2.0, horizon, "gradcheck");
}

EligibleMask random_masks(const Dataset& ds, std::uint64_t seed) {
  Rng rng(seed);
  EligibleMask m;
  m.delta = 0.0;
  m.dataset_fingerprint = ds.fingerprint();
  m.action_count = ds.action_count();
  m.masks.resize(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Trajectory& t = ds.traj(i);
    m.masks[i].resize(t.horizon());
    for (std::size_t h = 0; h < t.horizon(); ++h) {
      std::vector<std::uint8_t> mask(ds.action_count(), 0);
      for (int a = 0; a < ds.action_count(); ++a) mask[a] = rng.next_double() < 0.6 ? 1 : 0;
      mask[t.actions[h]] = 1;  // keep the objective well defined
      m.masks[i][h] = std::move(mask);
    }
  }
  return m;
}

PolicyParams random_params(PolicyArch arch, std::size_t dim, int actions, std::size_t hidden,
                           std::uint64_t seed, double scale) {
  PolicyParams p = init_policy(arch, dim, actions, hidden, seed);
  Rng rng(derive_seed(seed, 5));
  for (double& v : p.values) v = scale * rng.next_normal();
  return p;
}

}  // namespace

TEST_CASE("action_probs oracles") {
  SUBCASE("zero parameters give the uniform distribution") {
    PolicyParams p = init_policy(PolicyArch::LinearSoftmax, 3, 4, 0, 1);
    std::fill(p.values.begin(), p.values.end(), 0.0);
    const std::vector<double> probs = action_probs(p, std::vector<double>{0.3, -0.2, 1.0});
    for (double v : probs) CHECK(v == 0.25);
  }
  SUBCASE("logits (0, ln 3) give probs (0.25, 0.75)") {
    PolicyParams p = init_policy(PolicyArch::LinearSoftmax, 1, 2, 0, 1);
    std::fill(p.values.begin(), p.values.end(), 0.0);
    // theta rows zero; bias = (0, ln 3)
    p.values[2] = 0.0;
    p.values[3] = std::log(3.0);
    const std::vector<double> probs = action_probs(p, std::vector<double>{0.0});
    CHECK(probs[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(probs[1] == doctest::Approx(0.75).epsilon(1e-12));
  }
  SUBCASE("probabilities sum to 1 for 1000 random (params, x)") {
    Rng rng(2);
    for (int rep = 0; rep < 1000; ++rep) {
      const auto arch = rep % 2 == 0 ? PolicyArch::LinearSoftmax : PolicyArch::MlpSoftmax;
      const PolicyParams p = random_params(arch, 3, 4, 8, derive_seed(3, rep), 1.5);
      std::vector<double> x(3);
      for (double& v : x) v = rng.next_uniform(-2.0, 2.0);
      const std::vector<double> probs = action_probs(p, x);
      double sum = 0.0;
      for (double v : probs) {
        CHECK(v >= 0.0);
        sum += v;
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("mask_renormalize oracles") {
  SUBCASE("all-true mask returns probs unchanged, bitwise") {
    const std::vector<double> probs{0.3, 0.30000000000000004, 0.4};
    const std::vector<std::uint8_t> mask{1, 1, 1};
    CHECK(mask_renormalize(probs, mask) == probs);
  }
  SUBCASE("single-true mask is one-hot") {
    const std::vector<double> probs{0.2, 0.5, 0.3};
    const std::vector<std::uint8_t> mask{0, 1, 0};
    CHECK(mask_renormalize(probs, mask) == std::vector<double>{0.0, 1.0, 0.0});
  }
  SUBCASE("(0.5, 0.3, 0.2) with (1,1,0) -> (0.625, 0.375, 0)") {
    const std::vector<double> probs{0.5, 0.3, 0.2};
    const std::vector<std::uint8_t> mask{1, 1, 0};
    const std::vector<double> out = mask_renormalize(probs, mask);
    CHECK(out[0] == 0.625);
    CHECK(out[1] == 0.375);
    CHECK(out[2] == 0.0);
    double sum = out[0] + out[1];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("all-false mask throws") {
    CHECK_THROWS_AS(
        mask_renormalize(std::vector<double>{0.5, 0.5}, std::vector<std::uint8_t>{0, 0}),
        ValidationError);
  }
  SUBCASE("zero allowed mass falls back to uniform over the mask") {
    reset_degenerate_renorm_count();
    const std::vector<double> probs{0.0, 0.0, 1.0};
    const std::vector<std::uint8_t> mask{1, 1, 0};
    const std::vector<double> out = mask_renormalize(probs, mask);
    CHECK(out == std::vector<double>{0.5, 0.5, 0.0});
    CHECK(degenerate_renorm_count() == 1);
  }
}

TEST_CASE("objective gradient matches central finite differences") {
  // >= 50 instances spanning architectures, masks, truncation, and lambda.
  std::size_t instances = 0;
  std::size_t coords_checked = 0;
  for (std::uint64_t rep = 0; rep < 54; ++rep) {
    const bool mlp = rep % 2 == 1;
    const bool masked = rep % 3 != 0;
    const double lambda = (rep % 3 == 0) ? 0.0 : (rep % 3 == 1) ? 0.1 : 1.0;
    const std::size_t horizon = 1 + rep % 2;
    const Dataset ds = random_instance(5, horizon, 2, 3, derive_seed(1000, rep));
    const EligibleMask masks = random_masks(ds, derive_seed(2000, rep));
    const PolicyParams params = random_params(
        mlp ? PolicyArch::MlpSoftmax : PolicyArch::LinearSoftmax, 2, 3, 6,
        derive_seed(3000, rep), 0.7);

    // Pick M so that truncation is active on some instances but no weight
    // sits within finite-difference reach of the cap.
    double truncation = kInf;
    if (rep % 4 == 2) {
      const WeightTable w =
          policy_weights(params, masked ? &masks : nullptr, ds, kInf);
      std::vector<double> sorted = w.traj_weights;
      std::sort(sorted.begin(), sorted.end());
      const double mid = sorted[sorted.size() / 2];
      truncation = mid * 1.01 + 1e-3;
      bool too_close = false;
      for (double tw : sorted)
        if (std::abs(tw - truncation) < 1e-3) too_close = true;
      if (too_close) truncation = kInf;
    }

    const ObjectiveResult res = objective_gradient(params, ds, masked ? &masks : nullptr,
                                                   truncation, lambda);
    PolicyParams probe = params;
    const double step = 1e-5;
    for (std::size_t j = 0; j < params.values.size(); ++j) {
      probe.values[j] = params.values[j] + step;
      const double up =
          objective_value(probe, ds, masked ? &masks : nullptr, truncation, lambda).objective;
      probe.values[j] = params.values[j] - step;
      const double down =
          objective_value(probe, ds, masked ? &masks : nullptr, truncation, lambda).objective;
      probe.values[j] = params.values[j];
      const double fd = (up - down) / (2.0 * step);
      const double got = res.gradient[j];
      const double tol = 1e-4 * std::max({1.0, std::abs(fd), std::abs(got)});
      CHECK(std::abs(fd - got) <= tol);
      ++coords_checked;
    }
    ++instances;
  }
  CHECK(instances >= 50);
  CHECK(coords_checked > 500);
}

TEST_CASE("objective gradient edge cases") {
  SUBCASE("stationary symmetric instance has zero gradient") {
    // Uniform policy, all returns equal, lambda = 0: the objective is
    // constant in theta, so the gradient vanishes.
    std::vector<Trajectory> ts;
    for (int i = 0; i < 4; ++i) {
      Trajectory t;
      t.contexts = {{1.0}};
      t.actions = {i % 2};
      t.rewards = {0.5};
      t.behavior_probs = {0.5};
      ts.push_back(std::move(t));
    }
    const Dataset ds(std::move(ts), 1, 2, 1.0, 1, "");
    PolicyParams p = init_policy(PolicyArch::LinearSoftmax, 1, 2, 0, 4);
    std::fill(p.values.begin(), p.values.end(), 0.0);
    const ObjectiveResult res = objective_gradient(p, ds, nullptr, kInf, 0.0);
    for (double g : res.gradient) CHECK(std::abs(g) < 1e-14);
    CHECK(res.value == 0.5);
  }
  SUBCASE("all weights above the cap give an exactly zero gradient") {
    const Dataset ds = random_instance(4, 1, 2, 3, 5050);
    const PolicyParams p = random_params(PolicyArch::LinearSoftmax, 2, 3, 0, 5051, 0.5);
    const WeightTable w = policy_weights(p, nullptr, ds, kInf);
    double min_w = kInf;
    for (double tw : w.traj_weights) min_w = std::min(min_w, tw);
    REQUIRE(min_w > 0.0);
    const ObjectiveResult res = objective_gradient(p, ds, nullptr, min_w * 0.5, 1.0);
    for (double g : res.gradient) CHECK(g == 0.0);
  }
  SUBCASE("objective equals the independent estimators recomputation") {
    const Dataset ds = random_instance(8, 2, 2, 3, 6060);
    const EligibleMask masks = random_masks(ds, 6061);
    const PolicyParams p = random_params(PolicyArch::MlpSoftmax, 2, 3, 5, 6062, 0.8);
    const double lambda = 0.7, M = 3.0;
    const ObjectiveResult res = objective_gradient(p, ds, &masks, M, lambda);
    const WeightTable w = policy_weights(p, &masks, ds, M);
    const Estimate e = sntis_value(w, ds);
    const double expected = e.value - lambda * std::sqrt(sntis_variance(w, ds, e.value));
    CHECK(res.objective == doctest::Approx(expected).epsilon(1e-10));
    CHECK(res.value == doctest::Approx(e.value).epsilon(1e-12));
  }
}

TEST_CASE("masked policies put exact zeros outside the mask") {
  const Dataset ds = random_instance(20, 2, 3, 4, 7001);
  const NeighborIndex index(ds);
  const EligibleMaskSource source(index, 0.0);
  const PolicyParams p = random_params(PolicyArch::MlpSoftmax, 3, 4, 6, 7002, 1.0);
  const MaskedPolicy policy{&p, &source};
  for (const Trajectory& t : ds.trajectories()) {
    for (std::size_t h = 0; h < t.horizon(); ++h) {
      const std::vector<std::uint8_t> mask = source.mask_at(t.contexts[h]);
      const std::vector<double> probs = policy.probs(t.contexts[h]);
      double sum = 0.0;
      for (int a = 0; a < 4; ++a) {
        if (!mask[a]) CHECK(probs[a] == 0.0);
        sum += probs[a];
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("lipschitz bounds") {
  SUBCASE("zero parameters give a zero bound") {
    PolicyParams p = init_policy(PolicyArch::LinearSoftmax, 3, 4, 0, 8);
    std::fill(p.values.begin(), p.values.end(), 0.0);
    const auto bound = lipschitz_bound(p);
    REQUIRE(bound.has_value());
    CHECK(*bound == 0.0);
  }
  SUBCASE("sampling certification over 1e5 random pairs") {
    const PolicyParams p = random_params(PolicyArch::LinearSoftmax, 3, 4, 0, 9, 1.2);
    const double L = *lipschitz_bound(p);
    Rng rng(10);
    double worst = 0.0;
    for (int rep = 0; rep < 100000; ++rep) {
      std::vector<double> x(3), y(3);
      for (int j = 0; j < 3; ++j) {
        x[j] = rng.next_uniform(-3.0, 3.0);
        y[j] = x[j] + rng.next_uniform(-0.5, 0.5);
      }
      const double dist = std::sqrt(squared_distance(x, y));
      if (dist == 0.0) continue;
      const std::vector<double> px = action_probs(p, x);
      const std::vector<double> py = action_probs(p, y);
      for (int a = 0; a < 4; ++a) worst = std::max(worst, std::abs(px[a] - py[a]) / dist);
    }
    CHECK(worst <= L + 1e-9);
  }
  SUBCASE("scaling parameters by c >= 1 scales the bound by exactly c") {
    PolicyParams p = random_params(PolicyArch::LinearSoftmax, 2, 3, 0, 11, 0.9);
    const double L1 = *lipschitz_bound(p);
    for (double c : {1.0, 2.0, 5.0}) {
      PolicyParams scaled = p;
      for (double& v : scaled.values) v *= c;
      CHECK(*lipschitz_bound(scaled) == doctest::Approx(c * L1).epsilon(1e-12));
    }
  }
  SUBCASE("mlp has no certified bound but a finite heuristic one") {
    const PolicyParams p = random_params(PolicyArch::MlpSoftmax, 3, 4, 6, 12, 0.8);
    CHECK(!lipschitz_bound(p).has_value());
    CHECK(lipschitz_heuristic_bound(p) > 0.0);
  }
}

TEST_CASE("policy checkpoint serialization round-trips") {
  const PolicyParams p = random_params(PolicyArch::MlpSoftmax, 3, 4, 6, 13, 0.8);
  PolicyConstraint c;
  c.type = PolicyConstraint::Type::Eligible;
  c.delta = 0.25;
  c.train_fingerprint = 12345;
  const std::string path = "poela_test_ckpt.policy";
  save_policy(p, c, path, R"({"step": 7})");
  const LoadedPolicy lp = load_policy(path);
  CHECK(lp.params.arch == PolicyArch::MlpSoftmax);
  CHECK(lp.params.values == p.values);
  CHECK(lp.params.hidden == p.hidden);
  CHECK(lp.constraint.type == PolicyConstraint::Type::Eligible);
  CHECK(lp.constraint.delta == 0.25);
  CHECK(lp.constraint.train_fingerprint == 12345);
  std::remove(path.c_str());
}
