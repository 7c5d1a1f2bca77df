#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "poela/data.hpp"
#include "poela/estimators.hpp"

namespace poela {

// Standard normal quantile (inverse CDF), accurate to ~1e-15 (Acklam's
// rational approximation plus one Halley refinement).
double normal_quantile(double p);
double normal_cdf(double x);

struct BcaResult {
  double point = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  std::size_t resamples = 0;  // B
  double alpha = 0.0;
  double z0 = 0.0;
  double accel = 0.0;
  std::uint64_t seed = 0;
  std::size_t dropped = 0;    // degenerate resamples (estimator errored)
  bool degenerate = false;    // all bootstrap statistics equal, or clamped z0
};

// Statistic over a resampled index multiset; nullopt marks a degenerate
// resample (e.g. zero overlap), which is dropped and counted.
using ResampleStat = std::function<std::optional<double>(std::span<const std::size_t>)>;

// Bias-corrected and accelerated bootstrap over units 0..n-1:
//  - B resamples of n indices with replacement,
//  - z0 from the fraction of bootstrap statistics below the point estimate
//    (ties counted half, so an all-equal distribution gives z0 = 0),
//  - a from the jackknife skewness over leave-one-out statistics,
//  - bounds at the adjusted (alpha, 1-alpha) percentiles.
// Errors if more than half of the resamples are degenerate.
BcaResult bca_interval(std::size_t n, const ResampleStat& stat, std::size_t B, double alpha,
                       std::uint64_t seed);

// Percentile machinery shared with tests: bounds from sorted bootstrap
// statistics with explicit z0 and acceleration (z0 = a = 0 reduces to the
// plain percentile interval).
std::pair<double, double> bca_adjusted_bounds(std::span<const double> sorted_stats, double z0,
                                              double accel, double alpha);

// Trajectory-level BCa interval for the SNTIS value of a fixed policy whose
// weights are already computed.
BcaResult bca_sntis(const Dataset& ds, const WeightTable& weights, std::size_t B, double alpha,
                    std::uint64_t seed);

}  // namespace poela
