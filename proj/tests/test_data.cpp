#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "poela/data.hpp"

using namespace poela;

namespace {

Trajectory make_traj(std::vector<std::vector<double>> ctx, std::vector<int> actions,
                     std::vector<double> rewards, std::vector<double> probs) {
  Trajectory t;
  t.contexts = std::move(ctx);
  t.actions = std::move(actions);
  t.rewards = std::move(rewards);
  t.behavior_probs = std::move(probs);
  return t;
}

Dataset tiny_dataset() {
  std::vector<Trajectory> ts;
  ts.push_back(make_traj({{0.5, 1.0}, {0.25, -1.0}}, {0, 1}, {1.0, 0.5}, {0.5, 0.25}));
  ts.push_back(make_traj({{1.0, 0.0}}, {1}, {-2.0}, {1.0}));
  return Dataset(std::move(ts), 2, 3, 5.0, 4, "tiny");
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("dataset invariants are enforced at construction") {
  // behavior_prob = 0
  std::vector<Trajectory> bad1;
  bad1.push_back(make_traj({{0.0, 0.0}}, {0}, {0.0}, {0.0}));
  CHECK_THROWS_WITH_AS(Dataset(std::move(bad1), 2, 2, 1.0, 2, ""),
                       doctest::Contains("behavior_probs must be > 0"), ValidationError);

  // mismatched lengths: 3 contexts, 2 actions
  std::vector<Trajectory> bad2;
  bad2.push_back(make_traj({{0.0}, {1.0}, {2.0}}, {0, 1}, {0.0, 0.0}, {0.5, 0.5}));
  CHECK_THROWS_WITH_AS(Dataset(std::move(bad2), 1, 2, 1.0, 4, ""),
                       doctest::Contains("trajectory 0"), ValidationError);

  // action index out of range
  std::vector<Trajectory> bad3;
  bad3.push_back(make_traj({{0.0}}, {5}, {0.0}, {0.5}));
  CHECK_THROWS_AS(Dataset(std::move(bad3), 1, 2, 1.0, 2, ""), ValidationError);

  // reward above r_max
  std::vector<Trajectory> bad4;
  bad4.push_back(make_traj({{0.0}}, {0}, {2.5}, {0.5}));
  CHECK_THROWS_AS(Dataset(std::move(bad4), 1, 2, 1.0, 2, ""), ValidationError);
}

TEST_CASE("save/load round-trip is byte-identical") {
  const Dataset ds = tiny_dataset();
  const std::string p1 = temp_path("poela_rt1.ds.jsonl");
  const std::string p2 = temp_path("poela_rt2.ds.jsonl");
  save_dataset(ds, p1);
  const Dataset loaded = load_dataset(p1);
  CHECK(loaded.size() == 2);
  CHECK(loaded.feature_dim() == 2);
  CHECK(loaded.action_count() == 3);
  CHECK(loaded.fingerprint() == ds.fingerprint());
  save_dataset(loaded, p2);
  CHECK(slurp(p1) == slurp(p2));
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("load reports parse errors with line numbers") {
  const std::string p = temp_path("poela_bad.ds.jsonl");
  {
    std::ofstream out(p);
    out << R"({"action_count":2,"feature_dim":1,"h_max":2,"provenance":"","r_max":1.0})" << "\n";
    out << R"({"contexts":[[0.0]],"actions":[0],"rewards":[0.0],"behavior_probs":[0.5]})" << "\n";
    out << "{not json}\n";
  }
  CHECK_THROWS_WITH_AS(load_dataset(p), doctest::Contains("line 3"), ParseError);
  std::remove(p.c_str());
}

TEST_CASE("split sizes follow the floor-remainder rule and are deterministic") {
  std::vector<Trajectory> ts;
  for (int i = 0; i < 10; ++i)
    ts.push_back(make_traj({{static_cast<double>(i)}}, {0}, {0.0}, {0.5}));
  const Dataset ds(std::move(ts), 1, 2, 1.0, 1, "");

  const SplitResult a = split(ds, SplitSpec{0.6, 0.2, 0.2, 7});
  CHECK(a.train.size() == 6);
  CHECK(a.val.size() == 2);
  CHECK(a.test.size() == 2);
  const SplitResult b = split(ds, SplitSpec{0.6, 0.2, 0.2, 7});
  CHECK(a.train.fingerprint() == b.train.fingerprint());
  CHECK(a.val.fingerprint() == b.val.fingerprint());
  CHECK(a.test.fingerprint() == b.test.fingerprint());

  const SplitResult all = split(ds, SplitSpec{1.0, 0.0, 0.0, 3});
  CHECK(all.train.size() == 10);
  CHECK(all.val.size() == 0);
  CHECK(all.test.size() == 0);
}

TEST_CASE("split is a partition of the dataset") {
  std::vector<Trajectory> ts;
  for (int i = 0; i < 23; ++i)
    ts.push_back(make_traj({{static_cast<double>(i)}}, {0}, {0.0}, {0.5}));
  const Dataset ds(std::move(ts), 1, 2, 1.0, 1, "");
  const SplitResult parts = split(ds, SplitSpec{0.5, 0.3, 0.2, 11});

  std::vector<int> seen;
  auto collect = [&](const Dataset& d) {
    for (const Trajectory& t : d.trajectories()) seen.push_back(static_cast<int>(t.contexts[0][0]));
  };
  collect(parts.train);
  collect(parts.val);
  collect(parts.test);
  std::sort(seen.begin(), seen.end());
  REQUIRE(seen.size() == 23);
  for (int i = 0; i < 23; ++i) CHECK(seen[i] == i);
}

TEST_CASE("floor split arithmetic at n=14971") {
  // 14971 * 0.2 floors to 2994 for val and test; train takes the remainder.
  const auto n = static_cast<std::size_t>(14971);
  const auto n_val = static_cast<std::size_t>(std::floor(n * 0.2));
  const auto n_test = static_cast<std::size_t>(std::floor(n * 0.2));
  CHECK(n_val == 2994);
  CHECK(n_test == 2994);
  CHECK(n - n_val - n_test == 8983);
}

TEST_CASE("summarize reports histograms and propensity range") {
  SUBCASE("empty dataset") {
    const Dataset empty(std::vector<Trajectory>{}, 1, 2, 1.0, 1, "");
    const DatasetSummary s = summarize(empty);
    CHECK(s.n == 0);
    CHECK(s.horizon_histogram.empty());
    CHECK(s.return_histogram.empty());
  }
  SUBCASE("single one-step trajectory with reward 1") {
    std::vector<Trajectory> ts;
    ts.push_back(make_traj({{0.0}}, {0}, {1.0}, {0.5}));
    const DatasetSummary s = summarize(Dataset(std::move(ts), 1, 2, 1.0, 1, ""));
    CHECK(s.n == 1);
    REQUIRE(s.return_histogram.count(1.0) == 1);
    CHECK(s.return_histogram.at(1.0) == 1);
    CHECK(s.min_behavior_prob == 0.5);
    CHECK(s.max_behavior_prob == 0.5);
  }
}
