#include <cmath>

#include "doctest.h"
#include "poela/behavior.hpp"
#include "poela/envs.hpp"

using namespace poela;

namespace {

Dataset planar_dataset(const std::vector<std::vector<double>>& pts, const std::vector<int>& actions,
                       int action_count) {
  std::vector<Trajectory> ts;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    Trajectory t;
    t.contexts = {pts[i]};
    t.actions = {actions[i]};
    t.rewards = {0.0};
    t.behavior_probs = {1.0 / action_count};
    ts.push_back(std::move(t));
  }
  return Dataset(std::move(ts), pts[0].size(), action_count, 1.0, 1, "planar");
}

// Clustered logging policy: context near center c uses distribution mu[c].
Dataset clustered_dataset(const std::vector<std::vector<double>>& centers,
                          const std::vector<std::vector<double>>& mu, std::size_t n,
                          std::uint64_t seed, double noise) {
  Rng rng(seed);
  std::vector<Trajectory> ts;
  const int a_n = static_cast<int>(mu[0].size());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = rng.next_below(centers.size());
    std::vector<double> x = centers[c];
    for (double& v : x) v += noise * rng.next_normal();
    const auto a = static_cast<int>(rng.next_categorical(mu[c]));
    Trajectory t;
    t.contexts = {std::move(x)};
    t.actions = {a};
    t.rewards = {0.0};
    t.behavior_probs = {mu[c][a]};
    ts.push_back(std::move(t));
  }
  return Dataset(std::move(ts), centers[0].size(), a_n, 1.0, 1, "clustered");
}

}  // namespace

TEST_CASE("knn behavior oracles") {
  SUBCASE("k = total sample count gives the global action frequency everywhere") {
    const Dataset ds =
        planar_dataset({{0.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}, {2.0, 2.0}}, {0, 0, 1, 2}, 3);
    const BehaviorEstimate b = knn_behavior(ds, 4);
    for (const auto& q : {std::vector<double>{0.0, 0.0}, std::vector<double>{5.0, -3.0}}) {
      const std::vector<double> mu = b.probs(q);
      CHECK(mu[0] == 0.5);
      CHECK(mu[1] == 0.25);
      CHECK(mu[2] == 0.25);
    }
  }
  SUBCASE("k = 1 is one-hot on the nearest sample's action") {
    const Dataset ds = planar_dataset({{0.0, 0.0}, {1.0, 0.0}}, {2, 0}, 3);
    const BehaviorEstimate b = knn_behavior(ds, 1);
    CHECK(b.probs(std::vector<double>{0.1, 0.0}) == std::vector<double>{0.0, 0.0, 1.0});
    CHECK(b.probs(std::vector<double>{0.9, 0.0}) == std::vector<double>{1.0, 0.0, 0.0});
  }
  SUBCASE("6-point planar dataset, k=3, fixed query matches a brute-force oracle") {
    const std::vector<std::vector<double>> pts{{0.0, 0.0}, {0.1, 0.0}, {0.2, 0.0},
                                               {1.0, 1.0}, {1.1, 1.0}, {1.2, 1.0}};
    const std::vector<int> acts{0, 1, 0, 2, 2, 1};
    const Dataset ds = planar_dataset(pts, acts, 3);
    const BehaviorEstimate b = knn_behavior(ds, 3);
    const std::vector<double> q{0.05, 0.0};
    // Brute force: the 3 nearest are points 0, 1, 2 -> actions {0, 1, 0}.
    const std::vector<double> mu = b.probs(q);
    CHECK(mu[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(mu[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(mu[2] == 0.0);
  }
  SUBCASE("k larger than the pooled sample count errors") {
    const Dataset ds = planar_dataset({{0.0, 0.0}}, {0}, 2);
    CHECK_THROWS_AS(knn_behavior(ds, 2), ValidationError);
  }
  SUBCASE("muhat sums to one") {
    const Dataset ds = clustered_dataset({{0.0, 0.0}, {4.0, 4.0}},
                                         {{0.7, 0.2, 0.1}, {0.2, 0.3, 0.5}}, 500, 42, 0.2);
    const BehaviorEstimate b = knn_behavior(ds, 100);
    Rng rng(43);
    for (int rep = 0; rep < 50; ++rep) {
      const std::vector<double> q{rng.next_uniform(-1.0, 5.0), rng.next_uniform(-1.0, 5.0)};
      const std::vector<double> mu = b.probs(q);
      double sum = 0.0;
      for (double v : mu) sum += v;
      CHECK(sum == 1.0);
    }
  }
}

TEST_CASE("knn consistency at cluster centers") {
  const std::vector<std::vector<double>> centers{{0.0, 0.0}, {10.0, 0.0}, {0.0, 10.0}};
  const std::vector<std::vector<double>> mu{{0.8, 0.15, 0.05}, {0.1, 0.8, 0.1}, {0.05, 0.15, 0.8}};
  const Dataset ds = clustered_dataset(centers, mu, 10000, 515, 0.05);
  const BehaviorEstimate b = knn_behavior(ds, 100);
  double worst = 0.0;
  for (std::size_t c = 0; c < centers.size(); ++c) {
    const std::vector<double> got = b.probs(centers[c]);
    for (std::size_t a = 0; a < 3; ++a) worst = std::max(worst, std::abs(got[a] - mu[c][a]));
  }
  CHECK(worst < 0.05);
}

TEST_CASE("overlap masks") {
  const std::vector<std::vector<double>> pts{{0.0, 0.0}, {0.5, 0.0}, {10.0, 10.0}, {10.5, 10.0}};
  const std::vector<int> acts{0, 1, 2, 2};
  const Dataset ds = planar_dataset(pts, acts, 3);
  const BehaviorEstimate b = knn_behavior(ds, 2);

  SUBCASE("floor 0 keeps the kNN support, united with the logged action") {
    const EligibleMask m = overlap_mask(b, ds, 0.0);
    // Near (0,0): neighbors are points 0 and 1 -> actions {0,1} have mass.
    CHECK(m.masks[0][0] == std::vector<std::uint8_t>{1, 1, 0});
    CHECK(m.masks[2][0] == std::vector<std::uint8_t>{0, 0, 1});
  }
  SUBCASE("floor 1 collapses to the logged actions") {
    const EligibleMask m = overlap_mask(b, ds, 1.0);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      for (int a = 0; a < 3; ++a)
        CHECK(m.masks[i][0][a] == (a == ds.traj(i).actions[0] ? 1 : 0));
    }
  }
  SUBCASE("monotone in the floor") {
    const Dataset big = clustered_dataset({{0.0, 0.0}, {5.0, 5.0}},
                                          {{0.6, 0.3, 0.1}, {0.1, 0.3, 0.6}}, 400, 99, 0.3);
    const BehaviorEstimate bb = knn_behavior(big, 50);
    const EligibleMask lo = overlap_mask(bb, big, 0.05);
    const EligibleMask hi = overlap_mask(bb, big, 0.25);
    for (std::size_t i = 0; i < big.size(); ++i)
      for (int a = 0; a < 3; ++a)
        if (hi.masks[i][0][a]) CHECK(lo.masks[i][0][a] == 1);
  }
}

TEST_CASE("uniform logs with b below 1/|A| give all-true threshold masks") {
  // The PO-mu failure mode: exact uniform behavior cannot exclude unobserved
  // actions for any threshold below 1/|A|, unlike the delta = 0 eligible rule.
  const auto env = make_env(EnvSpec{.tag = "example1", .contexts = 4, .actions = 4});
  const int a_n = env->action_count();
  const BehaviorEstimate exact = BehaviorEstimate::exact(
      [a_n](std::span<const double>) { return std::vector<double>(a_n, 1.0 / a_n); }, a_n);
  const Dataset ds = generate_logged_data(*env, BehaviorTag::Uniform, 60, 7);
  const EligibleMask m = overlap_mask(exact, ds, 0.2);
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (int a = 0; a < a_n; ++a) CHECK(m.masks[i][0][a] == 1);

  // b above the maximum collapses to logged actions only.
  const EligibleMask tight = overlap_mask(exact, ds, 0.3);
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (int a = 0; a < a_n; ++a)
      CHECK(tight.masks[i][0][a] == (a == ds.traj(i).actions[0] ? 1 : 0));
}

TEST_CASE("behavior table evaluates muhat at logged samples") {
  const Dataset ds = planar_dataset({{0.0, 0.0}, {0.2, 0.0}}, {0, 1}, 2);
  const BehaviorEstimate b = knn_behavior(ds, 2);
  const auto table = behavior_table(b, ds);
  CHECK(table[0][0] == 0.5);
  CHECK(table[1][0] == 0.5);
}
