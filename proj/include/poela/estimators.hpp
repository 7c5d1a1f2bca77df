#pragma once

#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "poela/data.hpp"

namespace poela {

// Per-trajectory importance weights of a target policy against the logged
// behavior propensities: step ratios, cumulative products, the full
// trajectory weight W, and the truncated weight min{W, M}.
struct WeightTable {
  std::vector<std::vector<double>> step_weights;  // [i][h]
  std::vector<std::vector<double>> cum_weights;   // [i][h], prefix products
  std::vector<double> traj_weights;               // W^(i)
  std::vector<double> truncated;                  // min{W^(i), M}
  double truncation = std::numeric_limits<double>::infinity();

  std::size_t size() const { return traj_weights.size(); }
};

enum class EstimatorTag { IS, SNIS, SNTIS };

std::string to_string(EstimatorTag tag);

struct Estimate {
  double value = 0.0;
  double variance = 0.0;
  double ess = 0.0;
  std::size_t n = 0;
  double truncation = std::numeric_limits<double>::infinity();
  EstimatorTag tag = EstimatorTag::SNTIS;
};

// pi(a_h^(i) | x_h^(i)) for the logged action of trajectory i at step h.
using LoggedProbFn = std::function<double(std::size_t traj, std::size_t step)>;

// Build the weight table for a policy given through its probabilities on the
// logged actions. Throws if a probability falls outside [0, 1] or a weight
// is non-finite.
WeightTable compute_weights(const Dataset& ds, const LoggedProbFn& pi, double truncation);

// Same, but with an explicit per-step denominator (e.g. an estimated
// behavior probability) in place of the logged propensities.
WeightTable compute_weights(const Dataset& ds, const LoggedProbFn& pi, const LoggedProbFn& mu,
                            double truncation);

// Plain importance sampling: (1/n) sum_i r^(i) W^(i), untruncated weights.
Estimate is_value(const WeightTable& weights, const Dataset& ds);

// Self-normalized IS (no truncation): sum_i r_i W_i / sum_i W_i.
Estimate snis_value(const WeightTable& weights, const Dataset& ds);

// Self-normalized truncated IS: sum_i r_i min{W_i,M} / sum_i min{W_i,M}.
// Throws NoOverlapError when every truncated weight is zero.
Estimate sntis_value(const WeightTable& weights, const Dataset& ds);

// Normal-approximation variance of the SNTIS estimate:
// sum_i (r_i - v)^2 w_i^2 / (sum_i w_i)^2 with w_i = min{W_i, M}.
double sntis_variance(const WeightTable& weights, const Dataset& ds, double value);

// Effective sample size (sum w)^2 / sum w^2 over truncated weights;
// 0 when all weights are zero.
double ess(const WeightTable& weights);

// Terms of the SNIS decomposition over discrete initial contexts:
//   snis = empirical_v + context_shift + per_context_error
// where empirical_v = E_phat[v_pi(x)], context_shift = sum_x (W(x)-phat(x)) v_pi(x)
// and per_context_error is the weighted per-context IS residual.
struct Decomposition {
  double empirical_v = 0.0;
  double context_shift = 0.0;
  double per_context_error = 0.0;
  double snis = 0.0;

  double sum() const { return empirical_v + context_shift + per_context_error; }
};

using ContextValueFn = std::function<double(std::span<const double> context)>;

// Requires an oracle v_pi(x) for each distinct initial context; intended for
// synthetic environments where contexts repeat exactly.
Decomposition decompose(const WeightTable& weights, const Dataset& ds, const ContextValueFn& oracle_v);

// Fraction of truncated weight mass on trajectories with return <= threshold.
double low_reward_weight_mass(const WeightTable& weights, const Dataset& ds, double reward_threshold);

}  // namespace poela
