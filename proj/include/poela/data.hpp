#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "poela/common.hpp"

namespace poela {

// One logged episode: per-step contexts, the logged action, the realized
// reward, and the behavior propensity mu(a_h | x_h) of the logged action.
struct Trajectory {
  std::vector<std::vector<double>> contexts;
  std::vector<int> actions;
  std::vector<double> rewards;
  std::vector<double> behavior_probs;
  std::string meta;

  std::size_t horizon() const { return actions.size(); }
  double total_return() const;
};

// Immutable collection of trajectories sharing a feature dimension and
// action space. All downstream computation reads from here.
class Dataset {
 public:
  Dataset(std::vector<Trajectory> trajectories, std::size_t feature_dim, int action_count,
          double r_max, std::size_t h_max, std::string provenance);

  const std::vector<Trajectory>& trajectories() const { return trajectories_; }
  const Trajectory& traj(std::size_t i) const { return trajectories_[i]; }
  std::size_t size() const { return trajectories_.size(); }
  std::size_t feature_dim() const { return feature_dim_; }
  int action_count() const { return action_count_; }
  double r_max() const { return r_max_; }
  std::size_t h_max() const { return h_max_; }
  const std::string& provenance() const { return provenance_; }

  // Number of (context, action) samples pooled across steps.
  std::size_t step_count() const { return step_count_; }

  std::uint64_t fingerprint() const { return fingerprint_; }

 private:
  std::vector<Trajectory> trajectories_;
  std::size_t feature_dim_;
  int action_count_;
  double r_max_;
  std::size_t h_max_;
  std::string provenance_;
  std::size_t step_count_ = 0;
  std::uint64_t fingerprint_ = 0;
};

struct SplitSpec {
  double train_fraction = 0.6;
  double val_fraction = 0.2;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
};

struct DatasetSummary {
  std::size_t n = 0;
  std::size_t feature_dim = 0;
  int action_count = 0;
  std::map<std::size_t, std::size_t> horizon_histogram;
  std::map<double, std::size_t> return_histogram;
  std::map<int, std::size_t> action_histogram;
  double min_behavior_prob = 0.0;
  double max_behavior_prob = 0.0;
};

Dataset load_dataset(const std::string& path);
void save_dataset(const Dataset& ds, const std::string& path);

struct SplitResult {
  Dataset train;
  Dataset val;
  Dataset test;
};

// Trajectory-level partition: val and test get floor(n * fraction)
// trajectories each, the remainder goes to train. Deterministic in the seed.
SplitResult split(const Dataset& ds, const SplitSpec& spec);

DatasetSummary summarize(const Dataset& ds);

}  // namespace poela
