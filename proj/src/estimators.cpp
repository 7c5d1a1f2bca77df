#include "poela/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace poela {

std::string to_string(EstimatorTag tag) {
  switch (tag) {
    case EstimatorTag::IS: return "IS";
    case EstimatorTag::SNIS: return "SNIS";
    case EstimatorTag::SNTIS: return "SNTIS";
  }
  return "?";
}

WeightTable compute_weights(const Dataset& ds, const LoggedProbFn& pi, const LoggedProbFn& mu,
                            double truncation) {
  if (!(truncation > 0.0)) throw ValidationError("truncation level must be positive");
  WeightTable table;
  table.truncation = truncation;
  const std::size_t n = ds.size();
  table.step_weights.resize(n);
  table.cum_weights.resize(n);
  table.traj_weights.resize(n);
  table.truncated.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Trajectory& t = ds.traj(i);
    const std::size_t h_n = t.horizon();
    table.step_weights[i].resize(h_n);
    table.cum_weights[i].resize(h_n);
    double cum = 1.0;
    for (std::size_t h = 0; h < h_n; ++h) {
      const double p = pi(i, h);
      if (!std::isfinite(p) || p < 0.0 || p > 1.0 + 1e-12)
        throw ValidationError("policy probability outside [0,1] at trajectory " + std::to_string(i) +
                              ", step " + std::to_string(h));
      const double m = mu(i, h);
      if (!(m > 0.0)) throw ValidationError("behavior probability must be positive");
      const double w = p / m;
      if (!std::isfinite(w)) throw ValidationError("non-finite importance weight");
      table.step_weights[i][h] = w;
      cum *= w;
      table.cum_weights[i][h] = cum;
    }
    table.traj_weights[i] = cum;
    table.truncated[i] = std::min(cum, truncation);
  }
  return table;
}

WeightTable compute_weights(const Dataset& ds, const LoggedProbFn& pi, double truncation) {
  return compute_weights(
      ds, pi, [&](std::size_t i, std::size_t h) { return ds.traj(i).behavior_probs[h]; }, truncation);
}

namespace {

void check_sizes(const WeightTable& weights, const Dataset& ds) {
  if (weights.size() != ds.size())
    throw ValidationError("weight table size does not match dataset size");
}

}  // namespace

Estimate is_value(const WeightTable& weights, const Dataset& ds) {
  check_sizes(weights, ds);
  const std::size_t n = ds.size();
  Estimate e;
  e.tag = EstimatorTag::IS;
  e.n = n;
  e.truncation = std::numeric_limits<double>::infinity();
  if (n == 0) return e;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += ds.traj(i).total_return() * weights.traj_weights[i];
  e.value = sum / static_cast<double>(n);
  double ss = 0.0, wsum = 0.0, wsq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = ds.traj(i).total_return() * weights.traj_weights[i] - e.value;
    ss += d * d;
    wsum += weights.traj_weights[i];
    wsq += weights.traj_weights[i] * weights.traj_weights[i];
  }
  e.variance = ss / (static_cast<double>(n) * static_cast<double>(n));
  e.ess = wsq > 0.0 ? wsum * wsum / wsq : 0.0;
  return e;
}

namespace {

Estimate self_normalized(std::span<const double> w, const Dataset& ds, double truncation,
                         EstimatorTag tag) {
  Estimate e;
  e.tag = tag;
  e.n = ds.size();
  e.truncation = truncation;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    num += ds.traj(i).total_return() * w[i];
    den += w[i];
  }
  if (!(den > 0.0))
    throw NoOverlapError("all truncated weights are zero: no overlap between policy and data");
  e.value = num / den;
  double ss = 0.0, wsq = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double d = ds.traj(i).total_return() - e.value;
    ss += d * d * w[i] * w[i];
    wsq += w[i] * w[i];
  }
  e.variance = ss / (den * den);
  e.ess = den * den / wsq;
  return e;
}

}  // namespace

Estimate snis_value(const WeightTable& weights, const Dataset& ds) {
  check_sizes(weights, ds);
  return self_normalized(weights.traj_weights, ds, std::numeric_limits<double>::infinity(),
                         EstimatorTag::SNIS);
}

Estimate sntis_value(const WeightTable& weights, const Dataset& ds) {
  check_sizes(weights, ds);
  return self_normalized(weights.truncated, ds, weights.truncation, EstimatorTag::SNTIS);
}

double sntis_variance(const WeightTable& weights, const Dataset& ds, double value) {
  check_sizes(weights, ds);
  double den = 0.0, ss = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double w = weights.truncated[i];
    const double d = ds.traj(i).total_return() - value;
    ss += d * d * w * w;
    den += w;
  }
  if (!(den > 0.0)) throw NoOverlapError("all truncated weights are zero");
  return ss / (den * den);
}

double ess(const WeightTable& weights) {
  double sum = 0.0, sq = 0.0;
  for (double w : weights.truncated) {
    sum += w;
    sq += w * w;
  }
  return sq > 0.0 ? sum * sum / sq : 0.0;
}

Decomposition decompose(const WeightTable& weights, const Dataset& ds, const ContextValueFn& oracle_v) {
  check_sizes(weights, ds);
  if (!oracle_v)
    throw UnsupportedError("decomposition requires a per-context value oracle (continuous contexts unsupported)");
  if (ds.size() == 0) throw ValidationError("decomposition requires a nonempty dataset");

  // Group trajectories by exact initial context.
  std::map<std::vector<double>, std::vector<std::size_t>> by_context;
  for (std::size_t i = 0; i < ds.size(); ++i) by_context[ds.traj(i).contexts[0]].push_back(i);

  double total_w = 0.0;
  for (double w : weights.traj_weights) total_w += w;
  if (!(total_w > 0.0)) throw NoOverlapError("all weights are zero: SNIS decomposition undefined");

  const double n = static_cast<double>(ds.size());
  Decomposition d;
  for (const auto& [ctx, idx] : by_context) {
    const double v_ctx = oracle_v(ctx);
    const double p_hat = static_cast<double>(idx.size()) / n;
    double w_ctx = 0.0;  // W(x) = sum_{i in x} W_i / W
    double wr_ctx = 0.0;
    for (std::size_t i : idx) {
      w_ctx += weights.traj_weights[i];
      wr_ctx += weights.traj_weights[i] * ds.traj(i).total_return();
    }
    w_ctx /= total_w;
    wr_ctx /= total_w;
    d.empirical_v += p_hat * v_ctx;
    d.context_shift += (w_ctx - p_hat) * v_ctx;
    d.per_context_error += wr_ctx - w_ctx * v_ctx;
  }
  d.snis = snis_value(weights, ds).value;
  return d;
}

double low_reward_weight_mass(const WeightTable& weights, const Dataset& ds, double reward_threshold) {
  check_sizes(weights, ds);
  double low = 0.0, total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    total += weights.truncated[i];
    if (ds.traj(i).total_return() <= reward_threshold) low += weights.truncated[i];
  }
  if (!(total > 0.0)) throw NoOverlapError("all truncated weights are zero");
  return low / total;
}

}  // namespace poela
