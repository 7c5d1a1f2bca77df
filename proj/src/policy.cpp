#include "poela/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace poela {

using nlohmann::json;

namespace {

std::atomic<std::uint64_t> g_degenerate_renorms{0};

}  // namespace

std::string to_string(PolicyArch arch) {
  return arch == PolicyArch::LinearSoftmax ? "linear-softmax" : "mlp-softmax";
}

PolicyArch policy_arch_from_string(const std::string& s) {
  if (s == "linear-softmax" || s == "linear") return PolicyArch::LinearSoftmax;
  if (s == "mlp-softmax" || s == "mlp") return PolicyArch::MlpSoftmax;
  throw ValidationError("unknown policy architecture: " + s);
}

std::size_t PolicyParams::param_count() const {
  const auto a = static_cast<std::size_t>(action_count);
  if (arch == PolicyArch::LinearSoftmax) return a * feature_dim + a;
  return hidden * feature_dim + hidden + a * hidden + a;
}

PolicyParams init_policy(PolicyArch arch, std::size_t feature_dim, int action_count,
                         std::size_t hidden, std::uint64_t seed) {
  if (feature_dim == 0 || action_count <= 0) throw ValidationError("bad policy dimensions");
  if (arch == PolicyArch::MlpSoftmax && hidden == 0)
    throw ValidationError("mlp-softmax requires a positive hidden width");
  PolicyParams p;
  p.arch = arch;
  p.feature_dim = feature_dim;
  p.action_count = action_count;
  p.hidden = arch == PolicyArch::LinearSoftmax ? 0 : hidden;
  p.init_seed = seed;
  p.values.resize(p.param_count());
  Rng rng(seed);
  for (double& v : p.values) v = rng.next_uniform(-0.01, 0.01);
  return p;
}

namespace {

void softmax_inplace(std::vector<double>& logits) {
  double mx = logits[0];
  for (double z : logits) mx = std::max(mx, z);
  if (!std::isfinite(mx)) throw ValidationError("non-finite policy logits");
  double sum = 0.0;
  for (double& z : logits) {
    z = std::exp(z - mx);
    sum += z;
  }
  for (double& z : logits) z /= sum;
}

struct Forward {
  std::vector<double> hidden_act;  // tanh activations (mlp only)
  std::vector<double> probs;       // unmasked softmax
};

Forward forward_policy(const PolicyParams& p, std::span<const double> x) {
  Forward f;
  const auto a_n = static_cast<std::size_t>(p.action_count);
  std::vector<double> logits(a_n, 0.0);
  if (p.arch == PolicyArch::LinearSoftmax) {
    const double* theta = p.values.data();
    const double* bias = theta + a_n * p.feature_dim;
    for (std::size_t a = 0; a < a_n; ++a) {
      double z = bias[a];
      const double* row = theta + a * p.feature_dim;
      for (std::size_t j = 0; j < p.feature_dim; ++j) z += row[j] * x[j];
      logits[a] = z;
    }
  } else {
    const double* w1 = p.values.data();
    const double* b1 = w1 + p.hidden * p.feature_dim;
    const double* w2 = b1 + p.hidden;
    const double* b2 = w2 + a_n * p.hidden;
    f.hidden_act.resize(p.hidden);
    for (std::size_t k = 0; k < p.hidden; ++k) {
      double z = b1[k];
      const double* row = w1 + k * p.feature_dim;
      for (std::size_t j = 0; j < p.feature_dim; ++j) z += row[j] * x[j];
      f.hidden_act[k] = std::tanh(z);
    }
    for (std::size_t a = 0; a < a_n; ++a) {
      double z = b2[a];
      const double* row = w2 + a * p.hidden;
      for (std::size_t k = 0; k < p.hidden; ++k) z += row[k] * f.hidden_act[k];
      logits[a] = z;
    }
  }
  softmax_inplace(logits);
  f.probs = std::move(logits);
  return f;
}

// Accumulate d(objective)/d(logits) into the flat parameter gradient.
void backward_policy(const PolicyParams& p, std::span<const double> x, const Forward& f,
                     std::span<const double> dlogits, std::vector<double>& grad) {
  const auto a_n = static_cast<std::size_t>(p.action_count);
  if (p.arch == PolicyArch::LinearSoftmax) {
    double* dtheta = grad.data();
    double* dbias = dtheta + a_n * p.feature_dim;
    for (std::size_t a = 0; a < a_n; ++a) {
      const double g = dlogits[a];
      if (g == 0.0) continue;
      double* row = dtheta + a * p.feature_dim;
      for (std::size_t j = 0; j < p.feature_dim; ++j) row[j] += g * x[j];
      dbias[a] += g;
    }
  } else {
    const double* w2 = p.values.data() + p.hidden * p.feature_dim + p.hidden;
    double* dw1 = grad.data();
    double* db1 = dw1 + p.hidden * p.feature_dim;
    double* dw2 = db1 + p.hidden;
    double* db2 = dw2 + a_n * p.hidden;
    std::vector<double> dhidden(p.hidden, 0.0);
    for (std::size_t a = 0; a < a_n; ++a) {
      const double g = dlogits[a];
      if (g == 0.0) continue;
      double* row = dw2 + a * p.hidden;
      const double* w2row = w2 + a * p.hidden;
      for (std::size_t k = 0; k < p.hidden; ++k) {
        row[k] += g * f.hidden_act[k];
        dhidden[k] += g * w2row[k];
      }
      db2[a] += g;
    }
    for (std::size_t k = 0; k < p.hidden; ++k) {
      const double dpre = dhidden[k] * (1.0 - f.hidden_act[k] * f.hidden_act[k]);
      if (dpre == 0.0) continue;
      double* row = dw1 + k * p.feature_dim;
      for (std::size_t j = 0; j < p.feature_dim; ++j) row[j] += dpre * x[j];
      db1[k] += dpre;
    }
  }
}

}  // namespace

std::vector<double> action_probs(const PolicyParams& params, std::span<const double> x) {
  if (x.size() != params.feature_dim) throw ValidationError("context dimension mismatch");
  return forward_policy(params, x).probs;
}

std::vector<double> mask_renormalize(std::span<const double> probs, std::span<const std::uint8_t> mask) {
  if (probs.size() != mask.size()) throw ValidationError("mask length mismatch");
  bool all_true = true;
  std::size_t allowed = 0;
  for (std::uint8_t m : mask) {
    if (m) ++allowed;
    else all_true = false;
  }
  if (allowed == 0) throw ValidationError("mask_renormalize: all actions masked out");
  if (all_true) return std::vector<double>(probs.begin(), probs.end());

  double mass = 0.0;
  for (std::size_t a = 0; a < probs.size(); ++a)
    if (mask[a]) mass += probs[a];
  std::vector<double> out(probs.size(), 0.0);
  if (mass <= 0.0) {
    // Allowed mass underflowed; keep training iterable with a uniform fallback.
    g_degenerate_renorms.fetch_add(1, std::memory_order_relaxed);
    const double u = 1.0 / static_cast<double>(allowed);
    for (std::size_t a = 0; a < probs.size(); ++a)
      if (mask[a]) out[a] = u;
    return out;
  }
  for (std::size_t a = 0; a < probs.size(); ++a)
    if (mask[a]) out[a] = probs[a] / mass;
  return out;
}

std::uint64_t degenerate_renorm_count() { return g_degenerate_renorms.load(std::memory_order_relaxed); }
void reset_degenerate_renorm_count() { g_degenerate_renorms.store(0, std::memory_order_relaxed); }

std::optional<double> lipschitz_bound(const PolicyParams& params) {
  if (params.arch != PolicyArch::LinearSoftmax) return std::nullopt;
  const auto a_n = static_cast<std::size_t>(params.action_count);
  const double* theta = params.values.data();
  double max_pair = 0.0;
  for (std::size_t a = 0; a < a_n; ++a) {
    for (std::size_t b = a + 1; b < a_n; ++b) {
      double s = 0.0;
      for (std::size_t j = 0; j < params.feature_dim; ++j) {
        const double d = theta[a * params.feature_dim + j] - theta[b * params.feature_dim + j];
        s += d * d;
      }
      max_pair = std::max(max_pair, std::sqrt(s));
    }
  }
  return 0.5 * max_pair;
}

double lipschitz_heuristic_bound(const PolicyParams& params) {
  if (params.arch == PolicyArch::LinearSoftmax) return *lipschitz_bound(params);
  const auto a_n = static_cast<std::size_t>(params.action_count);
  const double* w1 = params.values.data();
  const double* w2 = w1 + params.hidden * params.feature_dim + params.hidden;
  double w1_frob = 0.0;
  for (std::size_t i = 0; i < params.hidden * params.feature_dim; ++i) w1_frob += w1[i] * w1[i];
  w1_frob = std::sqrt(w1_frob);
  double max_pair = 0.0;
  for (std::size_t a = 0; a < a_n; ++a) {
    for (std::size_t b = a + 1; b < a_n; ++b) {
      double s = 0.0;
      for (std::size_t k = 0; k < params.hidden; ++k) {
        const double d = w2[a * params.hidden + k] - w2[b * params.hidden + k];
        s += d * d;
      }
      max_pair = std::max(max_pair, std::sqrt(s));
    }
  }
  return 0.5 * max_pair * w1_frob;
}

std::vector<std::uint8_t> EligibleMaskSource::mask_at(std::span<const double> x) const {
  std::vector<std::uint8_t> mask = index_->eligible_mask(x, delta_);
  if (std::find(mask.begin(), mask.end(), std::uint8_t{1}) == mask.end())
    return std::vector<std::uint8_t>(mask.size(), 1);  // off-data query: unconstrained
  return mask;
}

EligibleMask masks_for_dataset(const MaskSource& source, const Dataset& ds) {
  EligibleMask table;
  table.delta = -1.0;
  table.dataset_fingerprint = ds.fingerprint();
  table.action_count = ds.action_count();
  table.masks.resize(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Trajectory& t = ds.traj(i);
    table.masks[i].resize(t.horizon());
    for (std::size_t h = 0; h < t.horizon(); ++h) table.masks[i][h] = source.mask_at(t.contexts[h]);
  }
  return table;
}

std::vector<double> MaskedPolicy::probs(std::span<const double> x) const {
  std::vector<double> p = action_probs(*params, x);
  if (!source) return p;
  return mask_renormalize(p, source->mask_at(x));
}

PolicyFn MaskedPolicy::as_fn() const {
  MaskedPolicy copy = *this;
  return [copy](std::span<const double> x) { return copy.probs(x); };
}

WeightTable policy_weights(const PolicyParams& params, const EligibleMask* masks, const Dataset& ds,
                           double truncation, const std::vector<std::vector<double>>* mu_override) {
  if (masks && masks->dataset_fingerprint != ds.fingerprint())
    throw ValidationError("mask table was built from a different dataset");
  auto prob = [&](std::size_t i, std::size_t h) {
    const Trajectory& t = ds.traj(i);
    std::vector<double> p = action_probs(params, t.contexts[h]);
    if (masks) p = mask_renormalize(p, masks->at(i, h));
    return p[t.actions[h]];
  };
  if (!mu_override) return compute_weights(ds, prob, truncation);
  return compute_weights(
      ds, prob, [&](std::size_t i, std::size_t h) { return (*mu_override)[i][h]; }, truncation);
}

namespace {

ObjectiveResult objective_impl(const PolicyParams& params, const Dataset& ds,
                               const EligibleMask* masks, double truncation, double lambda,
                               const std::vector<std::vector<double>>* mu_override,
                               bool want_gradient) {
  if (masks && masks->dataset_fingerprint != ds.fingerprint())
    throw ValidationError("mask table was built from a different dataset");
  if (lambda < 0.0) throw ValidationError("lambda must be nonnegative");
  const std::size_t n = ds.size();
  if (n == 0) throw ValidationError("empty dataset");

  // Forward pass: masked probabilities and trajectory weights.
  std::vector<std::vector<Forward>> fwd(n);
  std::vector<std::vector<std::vector<double>>> masked_probs(n);
  std::vector<double> traj_w(n), trunc_w(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Trajectory& t = ds.traj(i);
    fwd[i].reserve(t.horizon());
    masked_probs[i].reserve(t.horizon());
    double w = 1.0;
    for (std::size_t h = 0; h < t.horizon(); ++h) {
      fwd[i].push_back(forward_policy(params, t.contexts[h]));
      const Forward& f = fwd[i].back();
      std::vector<double> mp = masks ? mask_renormalize(f.probs, masks->at(i, h)) : f.probs;
      const double mu = mu_override ? (*mu_override)[i][h] : t.behavior_probs[h];
      if (!(mu > 0.0)) throw ValidationError("behavior probability must be positive");
      w *= mp[t.actions[h]] / mu;
      masked_probs[i].push_back(std::move(mp));
    }
    if (!std::isfinite(w)) throw ValidationError("non-finite trajectory weight");
    traj_w[i] = w;
    trunc_w[i] = std::min(w, truncation);
  }

  double den = 0.0, num = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    den += trunc_w[i];
    num += ds.traj(i).total_return() * trunc_w[i];
  }
  if (!(den > 0.0)) throw NoOverlapError("all truncated weights are zero at current parameters");
  const double value = num / den;

  double s2 = 0.0, s1 = 0.0, wsq = 0.0;  // sum (r-v)^2 w^2, sum (r-v) w^2, sum w^2
  for (std::size_t i = 0; i < n; ++i) {
    const double d = ds.traj(i).total_return() - value;
    const double w = trunc_w[i];
    s2 += d * d * w * w;
    s1 += d * w * w;
    wsq += w * w;
  }
  const double variance = s2 / (den * den);
  const double penalty = std::sqrt(variance);

  ObjectiveResult result;
  result.value = value;
  result.variance = variance;
  result.objective = value - lambda * penalty;
  result.ess = wsq > 0.0 ? den * den / wsq : 0.0;
  if (!want_gradient) return result;

  result.gradient.assign(params.values.size(), 0.0);
  std::vector<double> dlogits(params.action_count);
  for (std::size_t i = 0; i < n; ++i) {
    // Stop-gradient at the truncation cap, and no gradient through
    // zero-weight trajectories.
    if (traj_w[i] >= truncation || traj_w[i] <= 0.0) continue;
    const double r_c = ds.traj(i).total_return() - value;
    const double dv_dw = r_c / den;
    double dj_dw = dv_dw;
    if (lambda > 0.0 && penalty > 0.0) {
      const double ds_dw = 2.0 * r_c * r_c * trunc_w[i] - 2.0 * dv_dw * s1;
      const double dvar_dw = ds_dw / (den * den) - 2.0 * s2 / (den * den * den);
      dj_dw -= lambda * dvar_dw / (2.0 * penalty);
    }
    const double coeff = dj_dw * traj_w[i];
    if (coeff == 0.0) continue;
    const Trajectory& t = ds.traj(i);
    for (std::size_t h = 0; h < t.horizon(); ++h) {
      // d log pihat(a|x) / d logits = e_a - pihat(.|x)
      const std::vector<double>& mp = masked_probs[i][h];
      for (int a = 0; a < params.action_count; ++a) dlogits[a] = -coeff * mp[a];
      dlogits[t.actions[h]] += coeff;
      backward_policy(params, t.contexts[h], fwd[i][h], dlogits, result.gradient);
    }
  }
  return result;
}

}  // namespace

ObjectiveResult objective_gradient(const PolicyParams& params, const Dataset& ds,
                                   const EligibleMask* masks, double truncation, double lambda,
                                   const std::vector<std::vector<double>>* mu_override) {
  return objective_impl(params, ds, masks, truncation, lambda, mu_override, true);
}

ObjectiveResult objective_value(const PolicyParams& params, const Dataset& ds,
                                const EligibleMask* masks, double truncation, double lambda,
                                const std::vector<std::vector<double>>* mu_override) {
  return objective_impl(params, ds, masks, truncation, lambda, mu_override, false);
}

void save_policy(const PolicyParams& params, const PolicyConstraint& constraint,
                 const std::string& path, const std::string& metadata_json) {
  json j;
  j["format"] = "poela-policy-v1";
  j["arch"] = to_string(params.arch);
  j["feature_dim"] = params.feature_dim;
  j["action_count"] = params.action_count;
  j["hidden"] = params.hidden;
  j["params"] = params.values;
  j["init_seed"] = params.init_seed;
  json c;
  switch (constraint.type) {
    case PolicyConstraint::Type::None: c["type"] = "none"; break;
    case PolicyConstraint::Type::Eligible: c["type"] = "eligible"; break;
    case PolicyConstraint::Type::MuThreshold: c["type"] = "mu-threshold"; break;
  }
  c["delta"] = constraint.delta;
  c["mu_threshold"] = constraint.mu_threshold;
  c["knn_k"] = constraint.knn_k;
  c["train_fingerprint"] = constraint.train_fingerprint;
  j["constraint"] = c;
  j["meta"] = json::parse(metadata_json);
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write policy file: " + path);
  out << j.dump() << "\n";
}

LoadedPolicy load_policy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open policy file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("bad policy file " + path + ": " + e.what());
  }
  if (j.value("format", "") != "poela-policy-v1")
    throw ValidationError("unsupported policy file format in " + path);
  LoadedPolicy lp;
  lp.params.arch = policy_arch_from_string(j.at("arch").get<std::string>());
  lp.params.feature_dim = j.at("feature_dim").get<std::size_t>();
  lp.params.action_count = j.at("action_count").get<int>();
  lp.params.hidden = j.at("hidden").get<std::size_t>();
  lp.params.values = j.at("params").get<std::vector<double>>();
  lp.params.init_seed = j.at("init_seed").get<std::uint64_t>();
  if (lp.params.values.size() != lp.params.param_count())
    throw ValidationError("policy parameter vector has wrong length in " + path);
  const json& c = j.at("constraint");
  const std::string type = c.at("type").get<std::string>();
  if (type == "none") lp.constraint.type = PolicyConstraint::Type::None;
  else if (type == "eligible") lp.constraint.type = PolicyConstraint::Type::Eligible;
  else if (type == "mu-threshold") lp.constraint.type = PolicyConstraint::Type::MuThreshold;
  else throw ValidationError("unknown constraint type: " + type);
  lp.constraint.delta = c.at("delta").get<double>();
  lp.constraint.mu_threshold = c.at("mu_threshold").get<double>();
  lp.constraint.knn_k = c.at("knn_k").get<std::size_t>();
  lp.constraint.train_fingerprint = c.at("train_fingerprint").get<std::uint64_t>();
  lp.metadata_json = j.value("meta", json::object()).dump();
  return lp;
}

}  // namespace poela
