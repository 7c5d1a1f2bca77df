#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>

#include "CLI11.hpp"
#include "json.hpp"
#include "poela/behavior.hpp"
#include "poela/bootstrap.hpp"
#include "poela/harness.hpp"

using namespace poela;
using nlohmann::json;

namespace {

EnvSpec env_spec_from_cli(const std::string& tag, int contexts, int actions, int horizon,
                          double chain_reward, int dim, int clusters, std::uint64_t env_seed) {
  EnvSpec spec;
  spec.tag = tag;
  spec.contexts = contexts;
  spec.actions = actions;
  spec.horizon = horizon;
  spec.chain_reward = chain_reward;
  spec.dim = dim;
  spec.clusters = clusters;
  spec.env_seed = env_seed;
  return spec;
}

void print_estimate(const Estimate& e) {
  std::cout << to_string(e.tag) << " value " << e.value << "  variance " << e.variance << "  ess "
            << e.ess << "  n " << e.n << "\n";
}

int run_cli(int argc, char** argv) {
  CLI::App app{"offline policy optimization with eligible-action constraints"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate logged data from a synthetic environment");
  std::string g_env = "example1", g_behavior = "uniform", g_out;
  int g_contexts = 10, g_actions = 0, g_horizon = 10, g_dim = 3, g_clusters = 4;
  double g_chain_reward = -4.0;
  std::uint64_t g_env_seed = 0, g_seed = 0;
  std::size_t g_n = 1000;
  gen->add_option("--env", g_env, "example1|example2|example3|synthetic");
  gen->add_option("--contexts", g_contexts, "example1 context count");
  gen->add_option("--actions", g_actions, "action count (0 = env default)");
  gen->add_option("--horizon", g_horizon, "horizon for example2/3 and synthetic");
  gen->add_option("--chain-reward", g_chain_reward, "example2/3 bad-branch terminal reward");
  gen->add_option("--dim", g_dim, "synthetic feature dimension");
  gen->add_option("--clusters", g_clusters, "synthetic context clusters");
  gen->add_option("--env-seed", g_env_seed, "synthetic dynamics seed");
  gen->add_option("--behavior", g_behavior, "uniform|mixture");
  gen->add_option("--n", g_n, "number of trajectories")->required();
  gen->add_option("--seed", g_seed, "generation seed");
  gen->add_option("--out", g_out, "output .ds.jsonl path")->required();

  // split
  auto* sp = app.add_subcommand("split", "split a dataset into train/val/test files");
  std::string s_data, s_prefix;
  double s_train = 0.6, s_val = 0.2, s_test = 0.2;
  std::uint64_t s_seed = 0;
  sp->add_option("--data", s_data)->required();
  sp->add_option("--train", s_train);
  sp->add_option("--val", s_val);
  sp->add_option("--test", s_test);
  sp->add_option("--seed", s_seed);
  sp->add_option("--out-prefix", s_prefix)->required();

  // summary
  auto* sm = app.add_subcommand("summary", "print dataset statistics");
  std::string m_data;
  sm->add_option("--data", m_data)->required();

  // train
  auto* tr = app.add_subcommand("train", "run a full experiment from a config file");
  std::string t_config;
  std::size_t t_jobs = 0;
  std::string t_out;
  tr->add_option("--config", t_config)->required();
  tr->add_option("--jobs", t_jobs, "override config.jobs");
  tr->add_option("--out-dir", t_out, "override config.out_dir");

  // select
  auto* se = app.add_subcommand("select", "re-run checkpoint selection on a run directory");
  std::string e_dir;
  double e_ess = 0.0;
  std::string e_mode = "";
  se->add_option("--run-dir", e_dir)->required();
  se->add_option("--ess-min", e_ess)->required();
  se->add_option("--mode", e_mode, "final|best-checkpoint (default: report setting)");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "evaluate a stored policy on a dataset");
  std::string v_policy, v_data, v_train_data, v_env;
  double v_M = 1000.0, v_alpha = 0.05;
  std::size_t v_B = 2000, v_rollouts = 0;
  std::uint64_t v_seed = 0;
  int v_actions = 0, v_contexts = 10, v_horizon = 10, v_dim = 3, v_clusters = 4;
  double v_chain_reward = -4.0;
  std::uint64_t v_env_seed = 0;
  ev->add_option("--policy", v_policy)->required();
  ev->add_option("--data", v_data)->required();
  ev->add_option("--constraint-data", v_train_data,
                 "training dataset for rebuilding the policy's mask rule");
  ev->add_option("--M", v_M, "SNTIS truncation");
  ev->add_option("--B", v_B, "bootstrap resamples");
  ev->add_option("--alpha", v_alpha, "BCa percentile level");
  ev->add_option("--seed", v_seed);
  ev->add_option("--env", v_env, "environment tag for Monte Carlo evaluation");
  ev->add_option("--rollouts", v_rollouts, "Monte Carlo rollouts (0 = skip)");
  ev->add_option("--contexts", v_contexts);
  ev->add_option("--actions", v_actions);
  ev->add_option("--horizon", v_horizon);
  ev->add_option("--chain-reward", v_chain_reward);
  ev->add_option("--dim", v_dim);
  ev->add_option("--clusters", v_clusters);
  ev->add_option("--env-seed", v_env_seed);

  // diagnose
  auto* dg = app.add_subcommand("diagnose", "diagnostics: delta-sweep, masks, low-reward, decompose");
  std::string d_mode, d_config, d_data, d_policy, d_train_data, d_out_csv;
  std::vector<double> d_deltas;
  double d_b = 0.05, d_delta = 0.0, d_threshold = 0.0, d_M = 1000.0;
  std::size_t d_k = 100;
  dg->add_option("--mode", d_mode, "delta-sweep|masks|low-reward|decompose")->required();
  dg->add_option("--config", d_config, "experiment config (delta-sweep)");
  dg->add_option("--deltas", d_deltas, "delta grid (delta-sweep)");
  dg->add_option("--data", d_data, "dataset (masks / low-reward / decompose)");
  dg->add_option("--policy", d_policy, "policy file (low-reward / decompose)");
  dg->add_option("--constraint-data", d_train_data, "training data for the policy's mask rule");
  dg->add_option("--delta", d_delta, "eligible radius (masks)");
  dg->add_option("--k", d_k, "kNN neighbors (masks)");
  dg->add_option("--b", d_b, "behavior threshold (masks)");
  dg->add_option("--threshold", d_threshold, "low-reward return threshold");
  dg->add_option("--M", d_M, "SNTIS truncation (low-reward)");
  dg->add_option("--out-csv", d_out_csv, "write table as CSV");

  // verify
  auto* vf = app.add_subcommand("verify", "recompute and check all numbers in a run directory");
  std::string f_dir;
  vf->add_option("--run-dir", f_dir)->required();

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) {
    const EnvSpec spec = env_spec_from_cli(g_env, g_contexts, g_actions, g_horizon, g_chain_reward,
                                           g_dim, g_clusters, g_env_seed);
    const auto env = make_env(spec);
    const Dataset ds = generate_logged_data(*env, behavior_tag_from_string(g_behavior), g_n, g_seed);
    save_dataset(ds, g_out);
    std::cout << "wrote " << ds.size() << " trajectories to " << g_out << "\n";
    return 0;
  }

  if (sp->parsed()) {
    const Dataset ds = load_dataset(s_data);
    const SplitResult parts = split(ds, SplitSpec{s_train, s_val, s_test, s_seed});
    save_dataset(parts.train, s_prefix + ".train.ds.jsonl");
    save_dataset(parts.val, s_prefix + ".val.ds.jsonl");
    save_dataset(parts.test, s_prefix + ".test.ds.jsonl");
    std::cout << "split " << ds.size() << " -> " << parts.train.size() << "/" << parts.val.size()
              << "/" << parts.test.size() << "\n";
    return 0;
  }

  if (sm->parsed()) {
    const DatasetSummary s = summarize(load_dataset(m_data));
    std::cout << "n " << s.n << "  d " << s.feature_dim << "  actions " << s.action_count << "\n";
    std::cout << "behavior_prob range [" << s.min_behavior_prob << ", " << s.max_behavior_prob << "]\n";
    std::cout << "horizons:";
    for (const auto& [h, c] : s.horizon_histogram) std::cout << " " << h << ":" << c;
    std::cout << "\nreturns (" << s.return_histogram.size() << " distinct):";
    std::size_t shown = 0;
    for (const auto& [r, c] : s.return_histogram) {
      if (++shown > 12) {
        std::cout << " ...";
        break;
      }
      std::cout << " " << r << ":" << c;
    }
    std::cout << "\n";
    return 0;
  }

  if (tr->parsed()) {
    ExperimentConfig config = load_experiment_config(t_config);
    if (t_jobs > 0) config.jobs = t_jobs;
    if (!t_out.empty()) config.out_dir = t_out;
    const Report report = run_experiment(config);
    std::cout << summarize_report_text(report);
    return 0;
  }

  if (se->parsed()) {
    const Report report = report_from_json_file(e_dir + "/report.json");
    const std::string mode = e_mode.empty() ? report.selection_mode : e_mode;
    for (const auto& learner_sel : reselect(report, e_ess, mode)) std::cout << learner_sel << "\n";
    return 0;
  }

  if (ev->parsed()) {
    const LoadedPolicy lp = load_policy(v_policy);
    const Dataset ds = load_dataset(v_data);

    std::unique_ptr<Dataset> train;
    std::unique_ptr<NeighborIndex> index;
    std::optional<BehaviorEstimate> behavior;
    std::unique_ptr<MaskSource> source;
    if (lp.constraint.type != PolicyConstraint::Type::None) {
      if (v_train_data.empty())
        throw ValidationError("this policy carries a mask rule; pass --constraint-data");
      train = std::make_unique<Dataset>(load_dataset(v_train_data));
      if (train->fingerprint() != lp.constraint.train_fingerprint)
        throw ValidationError("--constraint-data does not match the policy's training fingerprint");
      if (lp.constraint.type == PolicyConstraint::Type::Eligible) {
        index = std::make_unique<NeighborIndex>(*train);
        source = std::make_unique<EligibleMaskSource>(*index, lp.constraint.delta);
      } else {
        behavior = knn_behavior(*train, lp.constraint.knn_k);
        source = std::make_unique<BehaviorMaskSource>(*behavior, lp.constraint.mu_threshold);
      }
    }

    std::optional<EligibleMask> masks;
    if (source) masks = masks_for_dataset(*source, ds);
    const WeightTable w = policy_weights(lp.params, masks ? &*masks : nullptr, ds, v_M);
    const Estimate est = sntis_value(w, ds);
    print_estimate(est);
    const BcaResult bca = bca_sntis(ds, w, v_B, v_alpha, v_seed);
    std::cout << "BCa(" << v_alpha << ") [" << bca.lower << ", " << bca.upper << "]  dropped "
              << bca.dropped << "\n";
    if (!v_env.empty() && v_rollouts > 0) {
      const EnvSpec spec = env_spec_from_cli(v_env, v_contexts, v_actions, v_horizon, v_chain_reward,
                                             v_dim, v_clusters, v_env_seed);
      const auto env = make_env(spec);
      const MaskedPolicy policy{&lp.params, source.get()};
      const McValue mc = mc_value(*env, policy.as_fn(), v_rollouts, derive_seed(v_seed, 1));
      std::cout << "MC value " << mc.mean << " +- " << mc.std_error << " (" << mc.rollouts
                << " rollouts)\n";
      std::cout << "overfit gap (SNTIS - MC) " << est.value - mc.mean << "\n";
    }
    return 0;
  }

  if (dg->parsed()) {
    if (d_mode == "delta-sweep") {
      if (d_config.empty() || d_deltas.empty())
        throw ValidationError("delta-sweep requires --config and --deltas");
      ExperimentConfig config = load_experiment_config(d_config);
      const std::vector<DeltaSweepRow> rows = delta_sweep_from_config(config, d_deltas);
      const std::string csv = delta_sweep_csv(rows);
      std::cout << csv;
      if (!d_out_csv.empty()) {
        std::ofstream out(d_out_csv);
        out << csv;
      }
      return 0;
    }
    if (d_mode == "masks") {
      if (d_data.empty()) throw ValidationError("masks mode requires --data");
      const Dataset ds = load_dataset(d_data);
      const BehaviorEstimate behavior = knn_behavior(ds, d_k);
      const MaskComparison cmp = diagnose_masks(ds, d_delta, behavior, d_b);
      std::cout << "samples " << cmp.samples << "\n"
                << "mean eligible set size " << cmp.mean_eligible_size << "\n"
                << "mean threshold set size " << cmp.mean_threshold_size << "\n"
                << "mean jaccard " << cmp.mean_jaccard << "\n"
                << "delta-rule strictly more conservative " << cmp.eligible_strictly_smaller << "\n"
                << "threshold strictly more conservative " << cmp.threshold_strictly_smaller << "\n"
                << "equal sets " << cmp.equal_sets << "\n";
      return 0;
    }
    if (d_mode == "low-reward" || d_mode == "decompose") {
      if (d_data.empty() || d_policy.empty())
        throw ValidationError(d_mode + " mode requires --data and --policy");
      const Dataset ds = load_dataset(d_data);
      const LoadedPolicy lp = load_policy(d_policy);
      std::unique_ptr<Dataset> train;
      std::unique_ptr<NeighborIndex> index;
      std::optional<BehaviorEstimate> behavior;
      std::unique_ptr<MaskSource> source;
      if (lp.constraint.type == PolicyConstraint::Type::Eligible) {
        if (d_train_data.empty()) throw ValidationError("pass --constraint-data for this policy");
        train = std::make_unique<Dataset>(load_dataset(d_train_data));
        index = std::make_unique<NeighborIndex>(*train);
        source = std::make_unique<EligibleMaskSource>(*index, lp.constraint.delta);
      } else if (lp.constraint.type == PolicyConstraint::Type::MuThreshold) {
        if (d_train_data.empty()) throw ValidationError("pass --constraint-data for this policy");
        train = std::make_unique<Dataset>(load_dataset(d_train_data));
        behavior = knn_behavior(*train, lp.constraint.knn_k);
        source = std::make_unique<BehaviorMaskSource>(*behavior, lp.constraint.mu_threshold);
      }
      std::optional<EligibleMask> masks;
      if (source) masks = masks_for_dataset(*source, ds);
      if (d_mode == "low-reward") {
        const WeightTable w = policy_weights(lp.params, masks ? &*masks : nullptr, ds, d_M);
        std::cout << "low-reward weight mass (return <= " << d_threshold
                  << "): " << low_reward_weight_mass(w, ds, d_threshold) << "\n";
      } else {
        // Decomposition needs the per-context oracle; available for the
        // bundled finite environments via provenance round-trip.
        const EnvSpec spec = env_spec_from_json(ds.provenance().substr(0, ds.provenance().find(" behavior=")));
        const auto env = make_env(spec);
        const MaskedPolicy policy{&lp.params, source.get()};
        const OracleValue oracle = oracle_context_value(*env, policy.as_fn());
        const WeightTable w = policy_weights(lp.params, masks ? &*masks : nullptr, ds,
                                             std::numeric_limits<double>::infinity());
        const Decomposition dec = decompose(w, ds, oracle.as_fn());
        std::cout << "empirical_v " << dec.empirical_v << "\ncontext_shift " << dec.context_shift
                  << "\nper_context_error " << dec.per_context_error << "\nsnis " << dec.snis << "\n";
      }
      return 0;
    }
    throw ValidationError("unknown diagnose mode: " + d_mode);
  }

  if (vf->parsed()) {
    const VerifyResult result = verify_report(f_dir);
    if (result.pass) {
      std::cout << "verify: pass\n";
      return 0;
    }
    std::cout << "verify: FAIL\n";
    for (const auto& p : result.problems) std::cout << "  " << p << "\n";
    return 2;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
}
