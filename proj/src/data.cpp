#include "poela/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace poela {

using nlohmann::json;

double Trajectory::total_return() const {
  double s = 0.0;
  for (double r : rewards) s += r;
  return s;
}

namespace {

void check_trajectory(const Trajectory& t, std::size_t index, std::size_t feature_dim,
                      int action_count, double r_max, std::size_t h_max) {
  const std::string where = "trajectory " + std::to_string(index) + ": ";
  const std::size_t h = t.actions.size();
  if (h == 0) throw ValidationError(where + "horizon must be positive");
  if (t.contexts.size() != h || t.rewards.size() != h || t.behavior_probs.size() != h)
    throw ValidationError(where + "contexts, actions, rewards, behavior_probs must have equal length");
  if (h > h_max) throw ValidationError(where + "horizon exceeds h_max");
  for (std::size_t i = 0; i < h; ++i) {
    if (t.contexts[i].size() != feature_dim)
      throw ValidationError(where + "context dimension mismatch at step " + std::to_string(i));
    if (t.actions[i] < 0 || t.actions[i] >= action_count)
      throw ValidationError(where + "action index out of range at step " + std::to_string(i));
    if (!(t.behavior_probs[i] > 0.0) || t.behavior_probs[i] > 1.0)
      throw ValidationError(where + "behavior_probs must be > 0 and <= 1 (step " + std::to_string(i) + ")");
    if (!std::isfinite(t.rewards[i]) || std::abs(t.rewards[i]) > r_max)
      throw ValidationError(where + "reward outside [-r_max, r_max] at step " + std::to_string(i));
    for (double v : t.contexts[i])
      if (!std::isfinite(v)) throw ValidationError(where + "non-finite context value");
  }
}

}  // namespace

Dataset::Dataset(std::vector<Trajectory> trajectories, std::size_t feature_dim, int action_count,
                 double r_max, std::size_t h_max, std::string provenance)
    : trajectories_(std::move(trajectories)),
      feature_dim_(feature_dim),
      action_count_(action_count),
      r_max_(r_max),
      h_max_(h_max),
      provenance_(std::move(provenance)) {
  if (feature_dim_ == 0) throw ValidationError("feature_dim must be positive");
  if (action_count_ <= 0) throw ValidationError("action_count must be positive");
  if (!(r_max_ > 0.0)) throw ValidationError("r_max must be positive");
  if (h_max_ == 0) throw ValidationError("h_max must be positive");
  Fnv1a hash;
  hash.add(feature_dim_);
  hash.add(static_cast<std::uint64_t>(action_count_));
  hash.add(r_max_);
  hash.add(h_max_);
  for (std::size_t i = 0; i < trajectories_.size(); ++i) {
    const Trajectory& t = trajectories_[i];
    check_trajectory(t, i, feature_dim_, action_count_, r_max_, h_max_);
    step_count_ += t.horizon();
    hash.add(t.horizon());
    for (std::size_t h = 0; h < t.horizon(); ++h) {
      for (double v : t.contexts[h]) hash.add(v);
      hash.add(t.actions[h]);
      hash.add(t.rewards[h]);
      hash.add(t.behavior_probs[h]);
    }
  }
  fingerprint_ = hash.value();
}

namespace {

json trajectory_to_json(const Trajectory& t) {
  json rec;
  rec["contexts"] = t.contexts;
  rec["actions"] = t.actions;
  rec["rewards"] = t.rewards;
  rec["behavior_probs"] = t.behavior_probs;
  if (!t.meta.empty()) rec["meta"] = t.meta;
  return rec;
}

Trajectory trajectory_from_json(const json& rec, std::size_t line) {
  Trajectory t;
  try {
    t.contexts = rec.at("contexts").get<std::vector<std::vector<double>>>();
    t.actions = rec.at("actions").get<std::vector<int>>();
    t.rewards = rec.at("rewards").get<std::vector<double>>();
    t.behavior_probs = rec.at("behavior_probs").get<std::vector<double>>();
    if (rec.contains("meta")) t.meta = rec.at("meta").get<std::string>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad record: ") + e.what(), line);
  }
  return t;
}

}  // namespace

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open dataset file: " + path);

  std::string line;
  std::size_t line_no = 0;

  if (!std::getline(in, line)) throw ParseError("empty dataset file", 1);
  ++line_no;
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw ParseError(std::string("invalid header: ") + e.what(), line_no);
  }
  if (!header.contains("feature_dim"))
    throw ParseError("first line must be a header record with feature_dim, action_count, r_max, h_max", line_no);
  std::size_t feature_dim, h_max;
  int action_count;
  double r_max;
  std::string provenance;
  try {
    feature_dim = header.at("feature_dim").get<std::size_t>();
    action_count = header.at("action_count").get<int>();
    r_max = header.at("r_max").get<double>();
    h_max = header.at("h_max").get<std::size_t>();
    provenance = header.value("provenance", std::string());
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad header: ") + e.what(), line_no);
  }

  std::vector<Trajectory> trajectories;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(std::string("invalid record: ") + e.what(), line_no);
    }
    trajectories.push_back(trajectory_from_json(rec, line_no));
  }
  return Dataset(std::move(trajectories), feature_dim, action_count, r_max, h_max, provenance);
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write dataset file: " + path);
  json header;
  header["feature_dim"] = ds.feature_dim();
  header["action_count"] = ds.action_count();
  header["r_max"] = ds.r_max();
  header["h_max"] = ds.h_max();
  header["provenance"] = ds.provenance();
  out << header.dump() << "\n";
  for (const Trajectory& t : ds.trajectories()) out << trajectory_to_json(t).dump() << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

SplitResult split(const Dataset& ds, const SplitSpec& spec) {
  if (ds.size() == 0) throw ValidationError("cannot split an empty dataset");
  if (spec.train_fraction < 0 || spec.val_fraction < 0 || spec.test_fraction < 0)
    throw ValidationError("split fractions must be nonnegative");
  const double total = spec.train_fraction + spec.val_fraction + spec.test_fraction;
  if (std::abs(total - 1.0) > 1e-9) throw ValidationError("split fractions must sum to 1");

  const std::size_t n = ds.size();
  const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * spec.val_fraction));
  const auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * spec.test_fraction));
  const std::size_t n_train = n - n_val - n_test;

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(spec.seed);
  rng.shuffle(order);

  auto take = [&](std::size_t begin, std::size_t count, const char* tag) {
    std::vector<std::size_t> idx(order.begin() + begin, order.begin() + begin + count);
    std::sort(idx.begin(), idx.end());  // keep original file order within each split
    std::vector<Trajectory> out;
    out.reserve(count);
    for (std::size_t i : idx) out.push_back(ds.traj(i));
    return Dataset(std::move(out), ds.feature_dim(), ds.action_count(), ds.r_max(), ds.h_max(),
                   ds.provenance() + " [" + tag + " split, seed=" + std::to_string(spec.seed) + "]");
  };

  return SplitResult{take(0, n_train, "train"), take(n_train, n_val, "val"),
                     take(n_train + n_val, n_test, "test")};
}

DatasetSummary summarize(const Dataset& ds) {
  DatasetSummary s;
  s.n = ds.size();
  s.feature_dim = ds.feature_dim();
  s.action_count = ds.action_count();
  bool first = true;
  for (const Trajectory& t : ds.trajectories()) {
    ++s.horizon_histogram[t.horizon()];
    ++s.return_histogram[t.total_return()];
    for (std::size_t h = 0; h < t.horizon(); ++h) {
      ++s.action_histogram[t.actions[h]];
      if (first) {
        s.min_behavior_prob = s.max_behavior_prob = t.behavior_probs[h];
        first = false;
      } else {
        s.min_behavior_prob = std::min(s.min_behavior_prob, t.behavior_probs[h]);
        s.max_behavior_prob = std::max(s.max_behavior_prob, t.behavior_probs[h]);
      }
    }
  }
  return s;
}

}  // namespace poela
