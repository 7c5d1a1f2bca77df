#pragma once

#include <memory>
#include <string>

#include "poela/neighborhood.hpp"
#include "poela/policy.hpp"

namespace poela {

// An estimate of the behavior policy as a full action distribution per
// context. Built by kNN over the pooled (context, action) samples, or
// wrapped around an exact behavior policy for synthetic environments.
class BehaviorEstimate {
 public:
  static BehaviorEstimate knn(std::shared_ptr<const NeighborIndex> index, std::size_t k);
  static BehaviorEstimate exact(PolicyFn mu, int action_count, std::uint64_t fingerprint = 0);

  std::vector<double> probs(std::span<const double> x) const;
  const std::string& method() const { return method_; }
  std::size_t k() const { return k_; }
  int action_count() const { return action_count_; }
  std::uint64_t source_fingerprint() const { return fingerprint_; }

 private:
  BehaviorEstimate() = default;
  std::string method_;
  std::size_t k_ = 0;
  int action_count_ = 0;
  std::uint64_t fingerprint_ = 0;
  std::shared_ptr<const NeighborIndex> index_;
  PolicyFn exact_;
};

// muhat(a|x) = (count of a among the k nearest logged contexts) / k,
// Euclidean distance, ties at the k-th distance broken by dataset order.
BehaviorEstimate knn_behavior(const Dataset& ds, std::size_t k);
BehaviorEstimate knn_behavior(std::shared_ptr<const NeighborIndex> index, std::size_t k);

// Mask true where muhat(a|x) > floor, united with the logged action so that
// every mask is nonempty.
EligibleMask overlap_mask(const BehaviorEstimate& behavior, const Dataset& ds, double floor);

// Deployed-policy mask rule: {a : muhat(a|x) > threshold}, falling back to
// all-true when the thresholded set is empty.
class BehaviorMaskSource : public MaskSource {
 public:
  BehaviorMaskSource(const BehaviorEstimate& behavior, double threshold)
      : behavior_(&behavior), threshold_(threshold) {}
  std::vector<std::uint8_t> mask_at(std::span<const double> x) const override;
  double threshold() const { return threshold_; }

 private:
  const BehaviorEstimate* behavior_;
  double threshold_;
};

// muhat evaluated at every logged (trajectory, step) sample; used when the
// estimated behavior policy replaces the logged propensities in weights.
std::vector<std::vector<double>> behavior_table(const BehaviorEstimate& behavior, const Dataset& ds);

}  // namespace poela
