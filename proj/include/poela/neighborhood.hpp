#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "poela/data.hpp"

namespace poela {

// One pooled (context, action) sample with its origin.
struct IndexEntry {
  std::vector<double> context;
  int action = 0;
  std::size_t traj = 0;
  std::size_t step = 0;
};

// Exact radius / k-nearest-neighbor search over all (context, action) pairs
// of a dataset, pooled across time steps. Backed by a kd-tree; results are
// identical to a linear scan (approximate search is deliberately absent, the
// weight lower-bound checks need exact sets).
class NeighborIndex {
 public:
  explicit NeighborIndex(const Dataset& ds);

  std::size_t size() const { return entries_.size(); }
  std::size_t feature_dim() const { return feature_dim_; }
  int action_count() const { return action_count_; }
  std::uint64_t dataset_fingerprint() const { return dataset_fingerprint_; }
  const IndexEntry& entry(std::size_t i) const { return entries_[i]; }

  // Indices of all entries with dist(x, entry) <= radius (closed ball),
  // in insertion (dataset) order.
  std::vector<std::size_t> radius_query(std::span<const double> x, double radius) const;

  // Indices of the k nearest entries; ties at the k-th distance are broken
  // by insertion order. Returned sorted by (distance, insertion order).
  std::vector<std::size_t> knn_query(std::span<const double> x, std::size_t k) const;

  // Distinct actions logged within distance delta of x, ascending.
  std::vector<int> eligible_actions(std::span<const double> x, double delta) const;

  // Same set as a membership mask of length action_count().
  std::vector<std::uint8_t> eligible_mask(std::span<const double> x, double delta) const;

 private:
  struct Node {
    std::size_t begin, end;  // range into order_
    std::size_t split_dim = 0;
    double split_val = 0.0;
    int left = -1, right = -1;
    std::vector<double> lo, hi;  // bounding box
  };

  int build(std::size_t begin, std::size_t end);
  void radius_search(int node, std::span<const double> x, double r2, std::vector<std::size_t>& out) const;

  std::vector<IndexEntry> entries_;
  std::vector<std::size_t> order_;  // permutation of entry ids, grouped by leaf
  std::vector<Node> nodes_;
  int root_ = -1;
  std::size_t feature_dim_ = 0;
  int action_count_ = 0;
  std::uint64_t dataset_fingerprint_ = 0;

  static constexpr std::size_t kLeafSize = 16;
};

// Per-(trajectory, step) boolean action masks, precomputed from the
// delta-neighborhood index. The logged action is always included
// (self-inclusion at distance zero), so every mask is nonempty.
struct EligibleMask {
  std::vector<std::vector<std::vector<std::uint8_t>>> masks;  // [traj][step][action]
  double delta = 0.0;
  std::uint64_t dataset_fingerprint = 0;
  int action_count = 0;

  std::span<const std::uint8_t> at(std::size_t traj, std::size_t step) const {
    return masks[traj][step];
  }
};

EligibleMask precompute_masks(const NeighborIndex& index, const Dataset& ds, double delta);

void save_mask(const EligibleMask& mask, const std::string& path);
EligibleMask load_mask(const std::string& path);

// Test oracle: the same queries by brute-force linear scan.
std::vector<std::size_t> linear_radius_query(const Dataset& ds, std::span<const double> x, double radius);
std::vector<int> linear_eligible_actions(const Dataset& ds, std::span<const double> x, double delta);

struct CoverageRow {
  std::size_t n = 0;
  double coverage = 0.0;          // fraction of supported (context, action) pairs eligible
  std::size_t spurious = 0;       // unsupported pairs that became eligible
};

struct CoverageReport {
  std::vector<CoverageRow> rows;
};

// Empirical check of the asymptotic coverage of eligible sets: for each n in
// the grid, generate a dataset, and measure which supported (context, action)
// pairs appear in the eligible set of their context.
CoverageReport coverage_check(
    const std::function<Dataset(std::size_t n, std::uint64_t seed)>& generate,
    const std::vector<std::pair<std::vector<double>, std::vector<int>>>& supported_pairs,
    double delta, std::span<const std::size_t> n_grid, std::uint64_t seed);

}  // namespace poela
