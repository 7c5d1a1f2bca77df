#include "poela/bootstrap.hpp"

#include <algorithm>
#include <cmath>

namespace poela {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_quantile(double p) {
  if (!(p > 0.0) || !(p < 1.0)) throw ValidationError("normal_quantile requires p in (0,1)");

  // Acklam's rational approximation.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                             1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                             6.680131188771972e+01, -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                             -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                             3.754408661907416e+00};
  const double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }

  // One Halley step against the exact CDF.
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
  x = x - u / (1.0 + x * u / 2.0);
  return x;
}

std::pair<double, double> bca_adjusted_bounds(std::span<const double> sorted_stats, double z0,
                                              double accel, double alpha) {
  if (sorted_stats.empty()) throw ValidationError("no bootstrap statistics");
  auto adjusted = [&](double q) {
    const double zq = normal_quantile(q);
    const double denom = 1.0 - accel * (z0 + zq);
    if (denom <= 0.0) return zq < 0.0 ? 0.0 : 1.0;  // acceleration blow-up guard
    return normal_cdf(z0 + (z0 + zq) / denom);
  };
  auto order_stat = [&](double q) {
    const auto m = sorted_stats.size();
    auto idx = static_cast<std::ptrdiff_t>(std::floor(q * static_cast<double>(m)));
    idx = std::clamp<std::ptrdiff_t>(idx, 0, static_cast<std::ptrdiff_t>(m) - 1);
    return sorted_stats[static_cast<std::size_t>(idx)];
  };
  return {order_stat(adjusted(alpha)), order_stat(adjusted(1.0 - alpha))};
}

BcaResult bca_interval(std::size_t n, const ResampleStat& stat, std::size_t B, double alpha,
                       std::uint64_t seed) {
  if (n == 0) throw ValidationError("bootstrap requires at least one unit");
  if (B < 100) throw ValidationError("bootstrap requires B >= 100");
  if (!(alpha > 0.0 && alpha < 0.5)) throw ValidationError("alpha must be in (0, 0.5)");

  std::vector<std::size_t> full(n);
  for (std::size_t i = 0; i < n; ++i) full[i] = i;
  const std::optional<double> point = stat(full);
  if (!point) throw NoOverlapError("estimator fails on the full dataset");

  BcaResult result;
  result.point = *point;
  result.resamples = B;
  result.alpha = alpha;
  result.seed = seed;

  std::vector<double> stats;
  stats.reserve(B);
  std::vector<std::size_t> idx(n);
  for (std::size_t b = 0; b < B; ++b) {
    // Per-resample generator derived from the master seed, so evaluation
    // order cannot change the result.
    Rng rng(derive_seed(seed, b));
    for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<std::size_t>(rng.next_below(n));
    const std::optional<double> s = stat(idx);
    if (s) stats.push_back(*s);
    else ++result.dropped;
  }
  if (result.dropped * 2 > B)
    throw NoOverlapError("bootstrap unstable, insufficient overlap (" +
                         std::to_string(result.dropped) + "/" + std::to_string(B) +
                         " degenerate resamples)");

  std::sort(stats.begin(), stats.end());
  const auto kept = stats.size();

  // Bias correction: fraction of bootstrap statistics below the point
  // estimate, ties counted half.
  std::size_t below = 0, equal = 0;
  for (double s : stats) {
    if (s < result.point) ++below;
    else if (s == result.point) ++equal;
  }
  double frac = (static_cast<double>(below) + 0.5 * static_cast<double>(equal)) /
                static_cast<double>(kept);
  if (frac <= 0.0 || frac >= 1.0) {
    frac = std::clamp(frac, 1.0 / (static_cast<double>(kept) + 1.0),
                      static_cast<double>(kept) / (static_cast<double>(kept) + 1.0));
    result.degenerate = true;
  }
  result.z0 = normal_quantile(frac);

  // Acceleration from the jackknife skewness.
  std::vector<double> jack;
  jack.reserve(n);
  std::vector<std::size_t> loo;
  loo.reserve(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    loo.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) loo.push_back(j);
    if (loo.empty()) break;
    const std::optional<double> s = stat(loo);
    if (s) jack.push_back(*s);
  }
  if (jack.size() >= 2) {
    double mean = 0.0;
    for (double v : jack) mean += v;
    mean /= static_cast<double>(jack.size());
    double num = 0.0, den = 0.0;
    for (double v : jack) {
      const double d = mean - v;
      num += d * d * d;
      den += d * d;
    }
    if (den > 0.0) result.accel = num / (6.0 * std::pow(den, 1.5));
  }

  if (stats.front() == stats.back()) result.degenerate = true;
  const auto [lo, hi] = bca_adjusted_bounds(stats, result.z0, result.accel, alpha);
  result.lower = lo;
  result.upper = hi;
  return result;
}

BcaResult bca_sntis(const Dataset& ds, const WeightTable& weights, std::size_t B, double alpha,
                    std::uint64_t seed) {
  if (weights.size() != ds.size()) throw ValidationError("weight table size mismatch");
  std::vector<double> returns(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) returns[i] = ds.traj(i).total_return();
  auto stat = [&](std::span<const std::size_t> idx) -> std::optional<double> {
    double num = 0.0, den = 0.0;
    for (std::size_t i : idx) {
      num += returns[i] * weights.truncated[i];
      den += weights.truncated[i];
    }
    if (!(den > 0.0)) return std::nullopt;
    return num / den;
  };
  return bca_interval(ds.size(), stat, B, alpha, seed);
}

}  // namespace poela
