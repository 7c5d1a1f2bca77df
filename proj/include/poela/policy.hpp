#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "poela/data.hpp"
#include "poela/estimators.hpp"
#include "poela/neighborhood.hpp"

namespace poela {

enum class PolicyArch { LinearSoftmax, MlpSoftmax };

std::string to_string(PolicyArch arch);
PolicyArch policy_arch_from_string(const std::string& s);

// Parameterized stochastic policy: softmax over linear logits, or over a
// one-hidden-layer tanh network. Parameters are stored flat.
//
// Layouts: linear  = theta[A][d] row-major, bias[A]
//          mlp     = w1[hidden][d], b1[hidden], w2[A][hidden], b2[A]
struct PolicyParams {
  PolicyArch arch = PolicyArch::LinearSoftmax;
  std::size_t feature_dim = 0;
  int action_count = 0;
  std::size_t hidden = 0;  // 0 for linear
  std::vector<double> values;
  std::uint64_t init_seed = 0;

  std::size_t param_count() const;
};

// Uniform logits in [-0.01, 0.01]: a near-uniform start maximizes initial ESS.
PolicyParams init_policy(PolicyArch arch, std::size_t feature_dim, int action_count,
                         std::size_t hidden, std::uint64_t seed);

std::vector<double> action_probs(const PolicyParams& params, std::span<const double> x);

// Zero out masked actions and renormalize the rest. If the allowed mass
// underflows to zero, falls back to uniform over the mask and bumps
// degenerate_renorm_count(). An all-true mask returns probs unchanged.
std::vector<double> mask_renormalize(std::span<const double> probs, std::span<const std::uint8_t> mask);

std::uint64_t degenerate_renorm_count();
void reset_degenerate_renorm_count();

// Certified Lipschitz bound on x -> pi(.|x) for linear-softmax policies:
// L = (1/2) max_{a,a'} ||theta_a - theta_a'||_2. No certified bound exists
// for the MLP (nullopt); see lipschitz_heuristic_bound.
std::optional<double> lipschitz_bound(const PolicyParams& params);

// Product-of-norms bound for the MLP (reported, not certified):
// (1/2) max_{a,a'} ||w2_a - w2_a'||_2 * ||w1||_F.
double lipschitz_heuristic_bound(const PolicyParams& params);

struct PolicyConstraint {
  enum class Type { None, Eligible, MuThreshold };
  Type type = Type::None;
  double delta = 0.0;
  double mu_threshold = 0.0;
  std::size_t knn_k = 0;
  std::uint64_t train_fingerprint = 0;
};

// Produces the deployed action mask for an arbitrary query context.
class MaskSource {
 public:
  virtual ~MaskSource() = default;
  virtual std::vector<std::uint8_t> mask_at(std::span<const double> x) const = 0;
};

// Eligible-action rule: actions logged within delta of x in the reference
// (training) data. Off-data queries with an empty eligible set fall back to
// the unconstrained policy (all-true mask).
class EligibleMaskSource : public MaskSource {
 public:
  EligibleMaskSource(const NeighborIndex& index, double delta) : index_(&index), delta_(delta) {}
  std::vector<std::uint8_t> mask_at(std::span<const double> x) const override;
  double delta() const { return delta_; }

 private:
  const NeighborIndex* index_;
  double delta_;
};

// Materialize deployed masks for every sample of a dataset (no logged-action
// union; this is the policy as it would act at those contexts).
EligibleMask masks_for_dataset(const MaskSource& source, const Dataset& ds);

// A policy combined with a mask rule, evaluated at arbitrary contexts.
struct MaskedPolicy {
  const PolicyParams* params = nullptr;
  const MaskSource* source = nullptr;  // null: unmasked

  std::vector<double> probs(std::span<const double> x) const;
  PolicyFn as_fn() const;
};

// Importance weights of the masked policy against the dataset's logged
// propensities (or mu_override, when weighting by an estimated behavior
// policy). masks may be null (unmasked policy).
WeightTable policy_weights(const PolicyParams& params, const EligibleMask* masks, const Dataset& ds,
                           double truncation,
                           const std::vector<std::vector<double>>* mu_override = nullptr);

struct ObjectiveResult {
  double objective = 0.0;  // sntis - lambda * sqrt(variance)
  double value = 0.0;
  double variance = 0.0;
  double ess = 0.0;
  std::vector<double> gradient;
};

// Value and exact analytic gradient of the CRM objective
//   J(theta) = v_SNTIS(masked policy) - lambda * sqrt(Var(v_SNTIS)),
// differentiated through the mask renormalization. Truncated trajectory
// weights use the stop-gradient subgradient: d min{W,M}/dtheta = 0 when
// W >= M. Zero-weight trajectories contribute no gradient.
ObjectiveResult objective_gradient(const PolicyParams& params, const Dataset& ds,
                                   const EligibleMask* masks, double truncation, double lambda,
                                   const std::vector<std::vector<double>>* mu_override = nullptr);

// Objective only (used for checkpoint bookkeeping).
ObjectiveResult objective_value(const PolicyParams& params, const Dataset& ds,
                                const EligibleMask* masks, double truncation, double lambda,
                                const std::vector<std::vector<double>>* mu_override = nullptr);

void save_policy(const PolicyParams& params, const PolicyConstraint& constraint,
                 const std::string& path, const std::string& metadata_json = "{}");

struct LoadedPolicy {
  PolicyParams params;
  PolicyConstraint constraint;
  std::string metadata_json;
};

LoadedPolicy load_policy(const std::string& path);

}  // namespace poela
