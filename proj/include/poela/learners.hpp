#pragma once

#include <optional>
#include <string>
#include <vector>

#include "poela/behavior.hpp"
#include "poela/policy.hpp"

namespace poela {

enum class LearnerTag { Poela, PoCrm, PoMu };

std::string to_string(LearnerTag tag);
LearnerTag learner_tag_from_string(const std::string& s);

struct TrainConfig {
  LearnerTag tag = LearnerTag::Poela;
  double delta = 0.0;         // POELA eligible-action radius
  double mu_threshold = 0.0;  // PO-mu behavior threshold b
  double lambda = 0.0;        // CRM variance coefficient
  double truncation = 1000.0; // M
  double learning_rate = 0.05;
  std::size_t max_steps = 500;
  std::size_t checkpoint_every = 10;
  std::uint64_t seed = 0;
  PolicyArch arch = PolicyArch::MlpSoftmax;
  std::size_t hidden = 32;

  void validate() const;
};

struct Checkpoint {
  PolicyParams params;
  std::size_t step = 0;
  double train_objective = 0.0;
  // Empty when the validation weights had no overlap (treated as ESS 0).
  std::optional<Estimate> val_estimate;
};

// Full-batch gradient ascent on the CRM objective with the mask tables
// supplied by the specific learner. Checkpoints every checkpoint_every steps
// plus the final step. Deterministic given config.seed. train_masks /
// val_masks may be null (unmasked); mu tables are the optional estimated
// behavior denominators.
std::vector<Checkpoint> train_loop(const TrainConfig& config, const Dataset& train,
                                   const Dataset& val, const EligibleMask* train_masks,
                                   const EligibleMask* val_masks,
                                   const std::vector<std::vector<double>>* train_mu = nullptr,
                                   const std::vector<std::vector<double>>* val_mu = nullptr);

// POELA (eligible-action constraints at radius delta). Builds the
// neighborhood index over the training data internally.
std::vector<Checkpoint> train_poela(const TrainConfig& config, const Dataset& train, const Dataset& val);

// CRM baseline without eligibility constraints; when a behavior estimate is
// given, its support at overlap_floor is used as an overlap mask.
std::vector<Checkpoint> train_pocrm(const TrainConfig& config, const Dataset& train, const Dataset& val,
                                    const BehaviorEstimate* behavior = nullptr,
                                    double overlap_floor = 0.0);

// Behavior-threshold baseline: actions with muhat(a|x) > b, united with the
// logged action on the training set.
std::vector<Checkpoint> train_pomu(const TrainConfig& config, const Dataset& train, const Dataset& val,
                                   const BehaviorEstimate& behavior);

// Among checkpoints with validation ESS >= ess_threshold, the one with the
// highest validation value; ties broken by earliest step. Null if none pass.
const Checkpoint* select_checkpoint(const std::vector<Checkpoint>& checkpoints, double ess_threshold);

}  // namespace poela
