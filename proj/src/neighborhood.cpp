#include "poela/neighborhood.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <queue>

#include "json.hpp"

namespace poela {

using nlohmann::json;

NeighborIndex::NeighborIndex(const Dataset& ds)
    : feature_dim_(ds.feature_dim()),
      action_count_(ds.action_count()),
      dataset_fingerprint_(ds.fingerprint()) {
  if (ds.size() == 0) throw ValidationError("cannot index an empty dataset");
  entries_.reserve(ds.step_count());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Trajectory& t = ds.traj(i);
    for (std::size_t h = 0; h < t.horizon(); ++h)
      entries_.push_back(IndexEntry{t.contexts[h], t.actions[h], i, h});
  }
  order_.resize(entries_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  root_ = build(0, order_.size());
}

int NeighborIndex::build(std::size_t begin, std::size_t end) {
  Node node;
  node.begin = begin;
  node.end = end;
  node.lo.assign(feature_dim_, std::numeric_limits<double>::infinity());
  node.hi.assign(feature_dim_, -std::numeric_limits<double>::infinity());
  for (std::size_t i = begin; i < end; ++i) {
    const auto& ctx = entries_[order_[i]].context;
    for (std::size_t d = 0; d < feature_dim_; ++d) {
      node.lo[d] = std::min(node.lo[d], ctx[d]);
      node.hi[d] = std::max(node.hi[d], ctx[d]);
    }
  }
  if (end - begin > kLeafSize) {
    std::size_t dim = 0;
    double extent = -1.0;
    for (std::size_t d = 0; d < feature_dim_; ++d) {
      if (node.hi[d] - node.lo[d] > extent) {
        extent = node.hi[d] - node.lo[d];
        dim = d;
      }
    }
    if (extent > 0.0) {
      node.split_dim = dim;
      const std::size_t mid = begin + (end - begin) / 2;
      std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                       [&](std::size_t a, std::size_t b) {
                         return entries_[a].context[dim] < entries_[b].context[dim];
                       });
      node.split_val = entries_[order_[mid]].context[dim];
      const int id = static_cast<int>(nodes_.size());
      nodes_.push_back(node);
      const int left = build(begin, mid);
      const int right = build(mid, end);
      nodes_[id].left = left;
      nodes_[id].right = right;
      return id;
    }
  }
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(node);  // leaf
  return id;
}

namespace {

double box_distance2(std::span<const double> x, const std::vector<double>& lo,
                     const std::vector<double>& hi) {
  double s = 0.0;
  for (std::size_t d = 0; d < x.size(); ++d) {
    double v = 0.0;
    if (x[d] < lo[d]) v = lo[d] - x[d];
    else if (x[d] > hi[d]) v = x[d] - hi[d];
    s += v * v;
  }
  return s;
}

}  // namespace

void NeighborIndex::radius_search(int node_id, std::span<const double> x, double r2,
                                  std::vector<std::size_t>& out) const {
  const Node& node = nodes_[node_id];
  if (box_distance2(x, node.lo, node.hi) > r2) return;
  if (node.left < 0) {
    for (std::size_t i = node.begin; i < node.end; ++i) {
      const std::size_t id = order_[i];
      if (squared_distance(x, entries_[id].context) <= r2) out.push_back(id);
    }
    return;
  }
  radius_search(node.left, x, r2, out);
  radius_search(node.right, x, r2, out);
}

std::vector<std::size_t> NeighborIndex::radius_query(std::span<const double> x, double radius) const {
  if (x.size() != feature_dim_) throw ValidationError("query dimension mismatch");
  if (radius < 0.0) throw ValidationError("radius must be nonnegative");
  std::vector<std::size_t> out;
  const double r2 = std::isinf(radius) ? radius : radius * radius;
  radius_search(root_, x, r2, out);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::size_t> NeighborIndex::knn_query(std::span<const double> x, std::size_t k) const {
  if (x.size() != feature_dim_) throw ValidationError("query dimension mismatch");
  if (k == 0) return {};
  if (k > entries_.size())
    throw ValidationError("k exceeds the number of pooled samples (" +
                          std::to_string(entries_.size()) + ")");

  using Cand = std::pair<double, std::size_t>;  // (distance^2, insertion id)
  std::priority_queue<Cand> heap;               // max-heap, worst candidate on top

  // Recursive search with bounding-box pruning. Equal distances must still be
  // explored because a smaller insertion id wins ties.
  auto visit = [&](auto&& self, int node_id) -> void {
    const Node& node = nodes_[node_id];
    if (heap.size() == k && box_distance2(x, node.lo, node.hi) > heap.top().first) return;
    if (node.left < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const std::size_t id = order_[i];
        Cand cand{squared_distance(x, entries_[id].context), id};
        if (heap.size() < k) heap.push(cand);
        else if (cand < heap.top()) {
          heap.pop();
          heap.push(cand);
        }
      }
      return;
    }
    // Descend into the nearer child first.
    const int near = x[node.split_dim] <= node.split_val ? node.left : node.right;
    const int far = near == node.left ? node.right : node.left;
    self(self, near);
    self(self, far);
  };
  visit(visit, root_);

  std::vector<Cand> result;
  result.reserve(heap.size());
  while (!heap.empty()) {
    result.push_back(heap.top());
    heap.pop();
  }
  std::sort(result.begin(), result.end());
  std::vector<std::size_t> out;
  out.reserve(result.size());
  for (const Cand& c : result) out.push_back(c.second);
  return out;
}

std::vector<int> NeighborIndex::eligible_actions(std::span<const double> x, double delta) const {
  std::vector<std::uint8_t> mask = eligible_mask(x, delta);
  std::vector<int> out;
  for (int a = 0; a < action_count_; ++a)
    if (mask[a]) out.push_back(a);
  return out;
}

std::vector<std::uint8_t> NeighborIndex::eligible_mask(std::span<const double> x, double delta) const {
  std::vector<std::uint8_t> mask(action_count_, 0);
  for (std::size_t id : radius_query(x, delta)) mask[entries_[id].action] = 1;
  return mask;
}

EligibleMask precompute_masks(const NeighborIndex& index, const Dataset& ds, double delta) {
  if (index.dataset_fingerprint() != ds.fingerprint())
    throw ValidationError("index was built from a different dataset");
  EligibleMask result;
  result.delta = delta;
  result.dataset_fingerprint = ds.fingerprint();
  result.action_count = ds.action_count();
  result.masks.resize(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Trajectory& t = ds.traj(i);
    result.masks[i].resize(t.horizon());
    for (std::size_t h = 0; h < t.horizon(); ++h) {
      result.masks[i][h] = index.eligible_mask(t.contexts[h], delta);
      result.masks[i][h][t.actions[h]] = 1;  // self-inclusion, also under delta=0
    }
  }
  return result;
}

void save_mask(const EligibleMask& mask, const std::string& path) {
  json j;
  j["delta"] = mask.delta;
  j["dataset_fingerprint"] = mask.dataset_fingerprint;
  j["action_count"] = mask.action_count;
  json rows = json::array();
  for (const auto& traj : mask.masks) {
    json steps = json::array();
    for (const auto& m : traj) {
      std::uint64_t bits = 0;
      for (std::size_t a = 0; a < m.size(); ++a)
        if (m[a]) bits |= (1ULL << a);
      steps.push_back(bits);
    }
    rows.push_back(std::move(steps));
  }
  j["masks"] = std::move(rows);
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write mask file: " + path);
  out << j.dump() << "\n";
}

EligibleMask load_mask(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open mask file: " + path);
  json j;
  in >> j;
  EligibleMask mask;
  mask.delta = j.at("delta").get<double>();
  mask.dataset_fingerprint = j.at("dataset_fingerprint").get<std::uint64_t>();
  mask.action_count = j.at("action_count").get<int>();
  if (mask.action_count > 64) throw UnsupportedError("mask sidecar supports at most 64 actions");
  for (const auto& traj : j.at("masks")) {
    std::vector<std::vector<std::uint8_t>> steps;
    for (const auto& bits_j : traj) {
      const auto bits = bits_j.get<std::uint64_t>();
      std::vector<std::uint8_t> m(mask.action_count, 0);
      for (int a = 0; a < mask.action_count; ++a) m[a] = (bits >> a) & 1;
      steps.push_back(std::move(m));
    }
    mask.masks.push_back(std::move(steps));
  }
  return mask;
}

std::vector<std::size_t> linear_radius_query(const Dataset& ds, std::span<const double> x, double radius) {
  std::vector<std::size_t> out;
  const double r2 = std::isinf(radius) ? radius : radius * radius;
  std::size_t id = 0;
  for (const Trajectory& t : ds.trajectories())
    for (std::size_t h = 0; h < t.horizon(); ++h, ++id)
      if (squared_distance(x, t.contexts[h]) <= r2) out.push_back(id);
  return out;
}

std::vector<int> linear_eligible_actions(const Dataset& ds, std::span<const double> x, double delta) {
  std::vector<std::uint8_t> mask(ds.action_count(), 0);
  const double r2 = std::isinf(delta) ? delta : delta * delta;
  for (const Trajectory& t : ds.trajectories())
    for (std::size_t h = 0; h < t.horizon(); ++h)
      if (squared_distance(x, t.contexts[h]) <= r2) mask[t.actions[h]] = 1;
  std::vector<int> out;
  for (int a = 0; a < ds.action_count(); ++a)
    if (mask[a]) out.push_back(a);
  return out;
}

CoverageReport coverage_check(
    const std::function<Dataset(std::size_t n, std::uint64_t seed)>& generate,
    const std::vector<std::pair<std::vector<double>, std::vector<int>>>& supported_pairs,
    double delta, std::span<const std::size_t> n_grid, std::uint64_t seed) {
  std::size_t total_supported = 0;
  for (const auto& [ctx, actions] : supported_pairs) total_supported += actions.size();
  if (total_supported == 0) throw ValidationError("supported pair list is empty");

  CoverageReport report;
  for (std::size_t gi = 0; gi < n_grid.size(); ++gi) {
    const std::size_t n = n_grid[gi];
    Dataset ds = generate(n, derive_seed(seed, gi));
    NeighborIndex index(ds);
    CoverageRow row;
    row.n = n;
    std::size_t covered = 0;
    for (const auto& [ctx, actions] : supported_pairs) {
      const auto mask = index.eligible_mask(ctx, delta);
      std::vector<std::uint8_t> supported(mask.size(), 0);
      for (int a : actions) {
        supported[a] = 1;
        if (mask[a]) ++covered;
      }
      for (std::size_t a = 0; a < mask.size(); ++a)
        if (mask[a] && !supported[a]) ++row.spurious;
    }
    row.coverage = static_cast<double>(covered) / static_cast<double>(total_supported);
    report.rows.push_back(row);
  }
  return report;
}

}  // namespace poela
