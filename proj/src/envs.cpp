#include "poela/envs.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace poela {

using nlohmann::json;

BehaviorTag behavior_tag_from_string(const std::string& s) {
  if (s == "uniform") return BehaviorTag::Uniform;
  if (s == "mixture") return BehaviorTag::Mixture;
  throw ValidationError("unknown behavior tag: " + s);
}

std::string to_string(BehaviorTag tag) {
  return tag == BehaviorTag::Uniform ? "uniform" : "mixture";
}

EnvSpec env_spec_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad env spec: ") + e.what());
  }
  EnvSpec spec;
  spec.tag = j.value("tag", spec.tag);
  spec.contexts = j.value("contexts", spec.contexts);
  spec.actions = j.value("actions", spec.actions);
  spec.horizon = j.value("horizon", spec.horizon);
  spec.chain_reward = j.value("chain_reward", spec.chain_reward);
  spec.dim = j.value("dim", spec.dim);
  spec.clusters = j.value("clusters", spec.clusters);
  spec.env_seed = j.value("env_seed", spec.env_seed);
  return spec;
}

std::string env_spec_to_json(const EnvSpec& spec) {
  json j;
  j["tag"] = spec.tag;
  j["contexts"] = spec.contexts;
  j["actions"] = spec.actions;
  j["horizon"] = spec.horizon;
  j["chain_reward"] = spec.chain_reward;
  j["dim"] = spec.dim;
  j["clusters"] = spec.clusters;
  j["env_seed"] = spec.env_seed;
  return j.dump();
}

std::vector<double> Env::behavior_probs(BehaviorTag tag, std::size_t step) const {
  const int a_n = action_count();
  std::vector<double> p(a_n, 1.0 / a_n);
  if (tag == BehaviorTag::Mixture) {
    const double uniform_part = 0.3 / a_n;
    for (double& v : p) v = uniform_part;
    p[(step - 1) % a_n] += 0.7;
  }
  return p;
}

double Env::context_value(std::span<const double>, const PolicyFn&) const {
  throw UnsupportedError("exact per-context values are unavailable for this environment");
}

namespace {

// ---------------------------------------------------------------- example 1

class Example1Episode : public Episode {
 public:
  Example1Episode(std::vector<double> ctx, int context_id, const class Example1Env* env)
      : ctx_(std::move(ctx)), context_id_(context_id), env_(env) {}
  const std::vector<double>& context() const override { return ctx_; }
  std::pair<double, bool> apply(int action, Rng& rng) override;

 private:
  std::vector<double> ctx_;
  int context_id_;
  const class Example1Env* env_;
};

class Example1Env : public Env {
 public:
  explicit Example1Env(const EnvSpec& spec) : spec_(spec) {
    if (spec_.actions == 0) spec_.actions = 10;
    if (spec_.contexts < 2 || spec_.contexts % 2 != 0)
      throw ValidationError("example1 requires an even number of contexts >= 2");
    if (spec_.actions < 2 || spec_.actions % 2 != 0)
      throw ValidationError("example1 requires an even number of actions >= 2");
  }

  std::size_t feature_dim() const override { return static_cast<std::size_t>(spec_.contexts); }
  int action_count() const override { return spec_.actions; }
  std::size_t h_max() const override { return 1; }
  double r_max() const override { return 5.0; }
  bool finite() const override { return true; }
  const EnvSpec& spec() const override { return spec_; }

  double reward(int context_id, int action) const {
    if (context_id < spec_.contexts / 2) return action == rewarded_action(context_id) ? 1.0 : 0.0;
    return action < spec_.actions / 2 ? -1.0 : -5.0;
  }

  int rewarded_action(int context_id) const { return context_id % spec_.actions; }

  std::vector<double> context_vector(int context_id) const {
    std::vector<double> x(spec_.contexts, 0.0);
    x[context_id] = 1.0;
    return x;
  }

  int context_id(std::span<const double> x) const {
    for (int c = 0; c < spec_.contexts; ++c)
      if (x[c] == 1.0) return c;
    throw ValidationError("not an example1 context");
  }

  std::unique_ptr<Episode> start(Rng& rng) const override {
    const int c = static_cast<int>(rng.next_below(spec_.contexts));
    return std::make_unique<Example1Episode>(context_vector(c), c, this);
  }

  std::vector<std::pair<std::vector<double>, double>> initial_contexts() const override {
    std::vector<std::pair<std::vector<double>, double>> out;
    for (int c = 0; c < spec_.contexts; ++c)
      out.emplace_back(context_vector(c), 1.0 / spec_.contexts);
    return out;
  }

  double context_value(std::span<const double> x, const PolicyFn& pi) const override {
    const int c = context_id(x);
    const std::vector<double> p = pi(x);
    double v = 0.0;
    for (int a = 0; a < spec_.actions; ++a) v += p[a] * reward(c, a);
    return v;
  }

 private:
  EnvSpec spec_;
};

std::pair<double, bool> Example1Episode::apply(int action, Rng&) {
  return {env_->reward(context_id_, action), true};
}

// ------------------------------------------------------------- example 2/3

// Contexts are (step, code): root (1, 0), chain node at step h >= 2 carries
// the base-|A| code of the chain actions taken so far, the example-3 aliased
// state is (2, -1).
class TreeEnv;

class TreeEpisode : public Episode {
 public:
  TreeEpisode(const TreeEnv* env) : env_(env) {}
  const std::vector<double>& context() const override { return ctx_; }
  std::pair<double, bool> apply(int action, Rng& rng) override;

 private:
  friend class TreeEnv;
  enum class Phase { Root, Chain, Alias };
  const TreeEnv* env_;
  std::vector<double> ctx_{1.0, 0.0};
  Phase phase_ = Phase::Root;
  std::size_t step_ = 1;
  double code_ = 0.0;
  double code_scale_ = 1.0;
  int root_action_ = -1;
};

class TreeEnv : public Env {
 public:
  TreeEnv(const EnvSpec& spec, bool with_alias) : spec_(spec), with_alias_(with_alias) {
    if (spec_.actions == 0) spec_.actions = with_alias_ ? 3 : 2;
    const int need = with_alias_ ? 3 : 2;
    if (spec_.actions != need)
      throw ValidationError(std::string(with_alias_ ? "example3" : "example2") + " requires exactly " +
                            std::to_string(need) + " actions");
    if (spec_.horizon < 2) throw ValidationError("tree environments require horizon >= 2");
    if (!(spec_.chain_reward < 0.0)) throw ValidationError("chain_reward must be negative");
  }

  std::size_t feature_dim() const override { return 2; }
  int action_count() const override { return spec_.actions; }
  std::size_t h_max() const override { return static_cast<std::size_t>(spec_.horizon); }
  double r_max() const override { return std::max(5.0, -spec_.chain_reward); }
  bool finite() const override { return true; }
  const EnvSpec& spec() const override { return spec_; }
  bool with_alias() const { return with_alias_; }
  double chain_reward() const { return spec_.chain_reward; }
  int horizon() const { return spec_.horizon; }

  std::unique_ptr<Episode> start(Rng&) const override { return std::make_unique<TreeEpisode>(this); }

  std::vector<std::pair<std::vector<double>, double>> initial_contexts() const override {
    return {{std::vector<double>{1.0, 0.0}, 1.0}};
  }

  double context_value(std::span<const double> x, const PolicyFn& pi) const override {
    if (!(x[0] == 1.0 && x[1] == 0.0)) throw ValidationError("not the root context");
    const std::vector<double> p = pi(x);
    // Every chain continuation terminates with chain_reward, so the bad
    // branch is worth exactly chain_reward under any policy.
    const double branch = 0.5 * 1.0 + 0.5 * spec_.chain_reward;
    double v = p[0] * 0.0 + p[1] * branch;
    if (with_alias_) v += p[2] * (-5.0);
    return v;
  }

 private:
  EnvSpec spec_;
  bool with_alias_;
};

std::pair<double, bool> TreeEpisode::apply(int action, Rng& rng) {
  switch (phase_) {
    case Phase::Root: {
      root_action_ = action;
      if (action == 1) {
        if (rng.next_double() < 0.5) return {1.0, true};
        phase_ = Phase::Chain;
        step_ = 2;
        ctx_ = {2.0, 0.0};
        code_ = 0.0;
        code_scale_ = 1.0 / env_->action_count();
        return {0.0, env_->horizon() == 1};
      }
      if (env_->with_alias()) {
        // Actions 0 and 2 reach the identical next context; the step-2
        // reward depends on which one was taken.
        phase_ = Phase::Alias;
        ctx_ = {2.0, -1.0};
        return {0.0, false};
      }
      return {rng.next_double() < 0.5 ? 1.0 : -1.0, true};
    }
    case Phase::Alias: {
      if (root_action_ == 0) return {rng.next_double() < 0.5 ? 1.0 : -1.0, true};
      return {-5.0, true};
    }
    case Phase::Chain: {
      if (static_cast<int>(step_) == env_->horizon()) return {env_->chain_reward(), true};
      code_ += action * code_scale_;
      code_scale_ /= env_->action_count();
      ++step_;
      ctx_ = {static_cast<double>(step_), code_};
      return {0.0, false};
    }
  }
  throw std::logic_error("unreachable");
}

// -------------------------------------------------------------- synthetic

class SyntheticEnv;

class SyntheticEpisode : public Episode {
 public:
  SyntheticEpisode(const SyntheticEnv* env, std::vector<double> ctx)
      : env_(env), ctx_(std::move(ctx)) {}
  const std::vector<double>& context() const override { return ctx_; }
  std::pair<double, bool> apply(int action, Rng& rng) override;

 private:
  const SyntheticEnv* env_;
  std::vector<double> ctx_;
  std::size_t step_ = 1;
  int prev_action_ = -1;
};

class SyntheticEnv : public Env {
 public:
  explicit SyntheticEnv(const EnvSpec& spec) : spec_(spec) {
    if (spec_.actions == 0) spec_.actions = 4;
    if (spec_.dim < 1 || spec_.actions < 2 || spec_.horizon < 1 || spec_.clusters < 1)
      throw ValidationError("bad synthetic env parameters");
    Rng rng(derive_seed(spec_.env_seed, 17));
    const auto d = static_cast<std::size_t>(spec_.dim);
    trans_.resize(spec_.actions);
    reward_dir_.resize(spec_.actions);
    for (int a = 0; a < spec_.actions; ++a) {
      trans_[a].resize(d * d);
      for (double& v : trans_[a]) v = rng.next_normal() / std::sqrt(static_cast<double>(d));
      reward_dir_[a].resize(d);
      for (double& v : reward_dir_[a]) v = rng.next_normal() / std::sqrt(static_cast<double>(d));
    }
    centers_.resize(spec_.clusters);
    for (auto& c : centers_) {
      c.resize(d);
      for (double& v : c) v = rng.next_uniform(-2.0, 2.0);
    }
  }

  std::size_t feature_dim() const override { return static_cast<std::size_t>(spec_.dim); }
  int action_count() const override { return spec_.actions; }
  std::size_t h_max() const override { return static_cast<std::size_t>(spec_.horizon); }
  double r_max() const override { return 2.0; }
  const EnvSpec& spec() const override { return spec_; }

  std::unique_ptr<Episode> start(Rng& rng) const override {
    const auto c = rng.next_below(centers_.size());
    std::vector<double> x = centers_[c];
    for (double& v : x) v += 0.3 * rng.next_normal();
    return std::make_unique<SyntheticEpisode>(this, std::move(x));
  }

  // Reward depends on the previous action, which is not part of the context:
  // the process is deliberately non-Markov in the observed features.
  double reward(std::span<const double> x, int action, int prev_action) const {
    double r = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) r += reward_dir_[action][j] * x[j];
    if (prev_action == action) r += 0.3;
    return std::clamp(r, -2.0, 2.0);
  }

  std::vector<double> transition(std::span<const double> x, int action, Rng& rng) const {
    const auto d = x.size();
    std::vector<double> out(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
      double z = 0.0;
      for (std::size_t j = 0; j < d; ++j) z += trans_[action][i * d + j] * x[j];
      out[i] = std::tanh(z) + 0.1 * rng.next_normal();
    }
    return out;
  }

 private:
  EnvSpec spec_;
  std::vector<std::vector<double>> trans_;
  std::vector<std::vector<double>> reward_dir_;
  std::vector<std::vector<double>> centers_;
};

std::pair<double, bool> SyntheticEpisode::apply(int action, Rng& rng) {
  const double r = env_->reward(ctx_, action, prev_action_);
  prev_action_ = action;
  const bool done = step_ >= env_->h_max();
  if (!done) {
    ctx_ = env_->transition(ctx_, action, rng);
    ++step_;
  }
  return {r, done};
}

}  // namespace

std::unique_ptr<Env> make_env(const EnvSpec& spec) {
  if (spec.tag == "example1") return std::make_unique<Example1Env>(spec);
  if (spec.tag == "example2") return std::make_unique<TreeEnv>(spec, false);
  if (spec.tag == "example3") return std::make_unique<TreeEnv>(spec, true);
  if (spec.tag == "synthetic") return std::make_unique<SyntheticEnv>(spec);
  throw ValidationError("unknown environment tag: " + spec.tag);
}

Dataset generate_logged_data(const Env& env, BehaviorTag behavior, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ValidationError("n must be positive");
  Rng rng(seed);
  std::vector<Trajectory> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Trajectory t;
    auto episode = env.start(rng);
    for (std::size_t h = 1; h <= env.h_max(); ++h) {
      const std::vector<double> mu = env.behavior_probs(behavior, h);
      const auto a = static_cast<int>(rng.next_categorical(mu));
      t.contexts.push_back(episode->context());
      const auto [r, done] = episode->apply(a, rng);
      t.actions.push_back(a);
      t.rewards.push_back(r);
      t.behavior_probs.push_back(mu[a]);
      if (done) break;
    }
    out.push_back(std::move(t));
  }
  return Dataset(std::move(out), env.feature_dim(), env.action_count(), env.r_max(), env.h_max(),
                 env_spec_to_json(env.spec()) + " behavior=" + to_string(behavior) +
                     " n=" + std::to_string(n) + " seed=" + std::to_string(seed));
}

McValue mc_value(const Env& env, const PolicyFn& policy, std::size_t n_rollouts, std::uint64_t seed) {
  if (n_rollouts == 0) throw ValidationError("n_rollouts must be positive");
  Rng rng(seed);
  double sum = 0.0, sumsq = 0.0;
  for (std::size_t i = 0; i < n_rollouts; ++i) {
    auto episode = env.start(rng);
    double ret = 0.0;
    for (std::size_t h = 1; h <= env.h_max(); ++h) {
      const std::vector<double> p = policy(episode->context());
      const auto a = static_cast<int>(rng.next_categorical(p));
      const auto [r, done] = episode->apply(a, rng);
      ret += r;
      if (done) break;
    }
    sum += ret;
    sumsq += ret * ret;
  }
  McValue v;
  v.rollouts = n_rollouts;
  v.mean = sum / static_cast<double>(n_rollouts);
  if (n_rollouts > 1) {
    const double var =
        std::max(0.0, (sumsq - sum * sum / static_cast<double>(n_rollouts)) /
                          static_cast<double>(n_rollouts - 1));
    v.std_error = std::sqrt(var / static_cast<double>(n_rollouts));
  }
  return v;
}

double OracleValue::lookup(std::span<const double> x) const {
  for (const auto& [ctx, v] : per_context) {
    if (ctx.size() != x.size()) continue;
    if (std::equal(ctx.begin(), ctx.end(), x.begin())) return v;
  }
  throw ValidationError("context not found in oracle table");
}

ContextValueFn OracleValue::as_fn() const {
  OracleValue copy = *this;
  return [copy](std::span<const double> x) { return copy.lookup(x); };
}

OracleValue oracle_context_value(const Env& env, const PolicyFn& pi) {
  if (!env.finite())
    throw UnsupportedError("oracle values require a finite (enumerable) environment");
  OracleValue out;
  for (const auto& [ctx, prob] : env.initial_contexts()) {
    const double v = env.context_value(ctx, pi);
    out.per_context.emplace_back(ctx, v);
    out.context_probs.push_back(prob);
    out.overall += prob * v;
  }
  return out;
}

double optimal_value(const Env& env) {
  if (!env.finite()) throw UnsupportedError("optimal value requires a finite environment");
  const int a_n = env.action_count();
  double total = 0.0;
  for (const auto& [ctx, prob] : env.initial_contexts()) {
    double best = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < a_n; ++a) {
      PolicyFn det = [a, a_n](std::span<const double>) {
        std::vector<double> p(a_n, 0.0);
        p[a] = 1.0;
        return p;
      };
      best = std::max(best, env.context_value(ctx, det));
    }
    total += prob * best;
  }
  return total;
}

}  // namespace poela
