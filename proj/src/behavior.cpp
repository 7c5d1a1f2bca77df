#include "poela/behavior.hpp"

namespace poela {

BehaviorEstimate BehaviorEstimate::knn(std::shared_ptr<const NeighborIndex> index, std::size_t k) {
  if (!index) throw ValidationError("knn behavior requires an index");
  if (k == 0) throw ValidationError("k must be positive");
  if (k > index->size())
    throw ValidationError("k (" + std::to_string(k) + ") exceeds the pooled sample count (" +
                          std::to_string(index->size()) + ")");
  BehaviorEstimate b;
  b.method_ = "knn";
  b.k_ = k;
  b.action_count_ = index->action_count();
  b.fingerprint_ = index->dataset_fingerprint();
  b.index_ = std::move(index);
  return b;
}

BehaviorEstimate BehaviorEstimate::exact(PolicyFn mu, int action_count, std::uint64_t fingerprint) {
  if (!mu) throw ValidationError("exact behavior requires a policy function");
  BehaviorEstimate b;
  b.method_ = "exact";
  b.action_count_ = action_count;
  b.fingerprint_ = fingerprint;
  b.exact_ = std::move(mu);
  return b;
}

std::vector<double> BehaviorEstimate::probs(std::span<const double> x) const {
  if (exact_) return exact_(x);
  std::vector<std::size_t> nn = index_->knn_query(x, k_);
  std::vector<double> counts(action_count_, 0.0);
  for (std::size_t id : nn) counts[index_->entry(id).action] += 1.0;
  for (double& c : counts) c /= static_cast<double>(k_);
  return counts;
}

BehaviorEstimate knn_behavior(const Dataset& ds, std::size_t k) {
  return BehaviorEstimate::knn(std::make_shared<NeighborIndex>(ds), k);
}

BehaviorEstimate knn_behavior(std::shared_ptr<const NeighborIndex> index, std::size_t k) {
  return BehaviorEstimate::knn(std::move(index), k);
}

EligibleMask overlap_mask(const BehaviorEstimate& behavior, const Dataset& ds, double floor) {
  if (floor < 0.0) throw ValidationError("overlap floor must be nonnegative");
  EligibleMask table;
  table.delta = -1.0;
  table.dataset_fingerprint = ds.fingerprint();
  table.action_count = ds.action_count();
  table.masks.resize(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Trajectory& t = ds.traj(i);
    table.masks[i].resize(t.horizon());
    for (std::size_t h = 0; h < t.horizon(); ++h) {
      const std::vector<double> mu = behavior.probs(t.contexts[h]);
      std::vector<std::uint8_t> m(ds.action_count(), 0);
      for (int a = 0; a < ds.action_count(); ++a) m[a] = mu[a] > floor ? 1 : 0;
      m[t.actions[h]] = 1;
      table.masks[i][h] = std::move(m);
    }
  }
  return table;
}

std::vector<std::uint8_t> BehaviorMaskSource::mask_at(std::span<const double> x) const {
  const std::vector<double> mu = behavior_->probs(x);
  std::vector<std::uint8_t> m(mu.size(), 0);
  bool any = false;
  for (std::size_t a = 0; a < mu.size(); ++a) {
    m[a] = mu[a] > threshold_ ? 1 : 0;
    any = any || m[a];
  }
  if (!any) return std::vector<std::uint8_t>(mu.size(), 1);
  return m;
}

std::vector<std::vector<double>> behavior_table(const BehaviorEstimate& behavior, const Dataset& ds) {
  std::vector<std::vector<double>> table(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Trajectory& t = ds.traj(i);
    table[i].resize(t.horizon());
    for (std::size_t h = 0; h < t.horizon(); ++h)
      table[i][h] = behavior.probs(t.contexts[h])[t.actions[h]];
  }
  return table;
}

}  // namespace poela
