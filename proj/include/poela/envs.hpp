#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "poela/data.hpp"
#include "poela/estimators.hpp"

namespace poela {

// Synthetic finite-horizon contextual decision processes.
//
//   example1   one-step bandit with |X| one-hot contexts. For the first half
//              of the contexts one action pays 1 and the rest 0; for the
//              other half, half the actions pay -1 and half pay -5.
//   example2   2-action tree with horizon H. Contexts are (step, path code).
//              Action 0 at the root pays +1/-1 with equal probability and
//              terminates. Action 1 pays +1 and terminates half the time,
//              otherwise enters an (H-1)-step binary chain whose every path
//              ends with chain_reward (intermediate rewards are 0).
//   example3   example2 with a third root action. Root actions 0 and 2 both
//              lead to the identical aliased context; the follow-up reward
//              is +1/-1 after action 0 but -5 after action 2, so the reward
//              depends on history and state aliasing misleads model/value
//              methods. Action 1 is the chain branch.
//   synthetic  seeded non-Markov CDP with continuous clustered contexts;
//              pipeline plumbing, not a paper construction.
struct EnvSpec {
  std::string tag = "example1";
  int contexts = 10;           // example1 |X|, even
  int actions = 0;             // |A|; defaults: 10 / 2 / 3 / 4 by tag
  int horizon = 10;            // example2/3 and synthetic H
  double chain_reward = -4.0;  // example2/3 bad-branch terminal reward
  int dim = 3;                 // synthetic feature dimension
  int clusters = 4;            // synthetic initial-context clusters
  std::uint64_t env_seed = 0;  // synthetic dynamics parameters
};

EnvSpec env_spec_from_json(const std::string& json_text);
std::string env_spec_to_json(const EnvSpec& spec);

enum class BehaviorTag { Uniform, Mixture };

BehaviorTag behavior_tag_from_string(const std::string& s);
std::string to_string(BehaviorTag tag);

class Episode {
 public:
  virtual ~Episode() = default;
  virtual const std::vector<double>& context() const = 0;
  virtual std::pair<double, bool> apply(int action, Rng& rng) = 0;  // (reward, done)
};

class Env {
 public:
  virtual ~Env() = default;
  virtual std::size_t feature_dim() const = 0;
  virtual int action_count() const = 0;
  virtual std::size_t h_max() const = 0;
  virtual double r_max() const = 0;
  virtual std::unique_ptr<Episode> start(Rng& rng) const = 0;

  // Exact behavior distribution at 1-based step h. Uniform, or the
  // simulator-style mixture: 70% a fixed schedule ((h-1) mod |A|), 30%
  // uniform over all actions.
  std::vector<double> behavior_probs(BehaviorTag tag, std::size_t step) const;

  // Finite environments expose their initial contexts for exact evaluation.
  virtual bool finite() const { return false; }
  virtual std::vector<std::pair<std::vector<double>, double>> initial_contexts() const { return {}; }
  // Exact v_pi(x) for an initial context (finite envs only).
  virtual double context_value(std::span<const double> x, const PolicyFn& pi) const;

  virtual const EnvSpec& spec() const = 0;
};

std::unique_ptr<Env> make_env(const EnvSpec& spec);

// Roll out n episodes under the behavior policy, recording its exact
// propensities. Deterministic given the seed.
Dataset generate_logged_data(const Env& env, BehaviorTag behavior, std::size_t n, std::uint64_t seed);

struct McValue {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t rollouts = 0;
};

McValue mc_value(const Env& env, const PolicyFn& policy, std::size_t n_rollouts, std::uint64_t seed);

// Exact per-initial-context values of a policy, by enumeration of the finite
// outcome tree. Throws UnsupportedError for the synthetic environment.
struct OracleValue {
  std::vector<std::pair<std::vector<double>, double>> per_context;  // (x, v_pi(x))
  std::vector<double> context_probs;                                // p(x)
  double overall = 0.0;

  double lookup(std::span<const double> x) const;
  ContextValueFn as_fn() const;
};

OracleValue oracle_context_value(const Env& env, const PolicyFn& pi);

// True optimal value max_pi v(pi) of a finite environment, by per-context
// maximization over deterministic action choices.
double optimal_value(const Env& env);

}  // namespace poela
