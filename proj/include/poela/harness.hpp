#pragma once

#include <optional>
#include <string>
#include <vector>

#include "poela/bootstrap.hpp"
#include "poela/envs.hpp"
#include "poela/learners.hpp"

namespace poela {

struct BehaviorConfig {
  std::string method = "logged";  // "logged" | "knn"
  std::size_t k = 100;
  double overlap_floor = 0.0;     // overlap mask floor for pocrm when knn
  bool use_in_weights = false;    // weight against muhat instead of logged propensities
};

struct LearnerGridConfig {
  LearnerTag tag = LearnerTag::Poela;
  std::vector<double> delta{0.0};         // poela grid
  std::vector<double> mu_threshold{0.0};  // pomu grid
  std::vector<double> lambda{0.0};
  double truncation = 1000.0;
  double learning_rate = 0.05;
  std::size_t max_steps = 500;
  std::size_t checkpoint_every = 10;
  std::size_t restarts = 1;
  PolicyArch arch = PolicyArch::MlpSoftmax;
  std::size_t hidden = 32;
};

struct DataConfig {
  std::string source = "env";  // "env" | "file"
  // env source
  EnvSpec env;
  std::string behavior = "uniform";
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  std::size_t n_test = 0;
  // file source
  std::string path;
  SplitSpec split;
};

struct ExperimentConfig {
  std::uint64_t master_seed = 0;
  std::string out_dir;
  DataConfig data;
  BehaviorConfig behavior;
  std::vector<LearnerGridConfig> learners;
  double ess_threshold = 0.0;
  std::string selection_mode = "final";  // "final" | "best-checkpoint"
  std::string test_mode = "sntis";       // "sntis" | "mc"
  std::size_t mc_rollouts = 1000;
  std::size_t bootstrap_b = 2000;
  double bootstrap_alpha = 0.05;
  std::optional<double> low_reward_threshold;
  bool decompose = false;
  std::size_t jobs = 1;
};

ExperimentConfig experiment_config_from_json(const std::string& json_text);
std::string experiment_config_to_json(const ExperimentConfig& config);
ExperimentConfig load_experiment_config(const std::string& path);

struct CheckpointMetric {
  std::size_t step = 0;
  double train_objective = 0.0;
  std::optional<Estimate> val;
  std::string file;
};

struct CellReport {
  std::size_t cell_index = 0;
  std::size_t learner_index = 0;
  LearnerTag tag = LearnerTag::Poela;
  double delta = 0.0;
  double mu_threshold = 0.0;
  double lambda = 0.0;
  std::size_t restart = 0;
  std::uint64_t seed = 0;
  std::string status;  // "ok" or "failed: <reason>"
  std::vector<CheckpointMetric> checkpoints;
};

struct SelectionReport {
  std::size_t learner_index = 0;
  LearnerTag tag = LearnerTag::Poela;
  bool selected = false;
  std::size_t cell_index = 0;
  std::size_t step = 0;
  double val_value = 0.0;
  double val_ess = 0.0;
  std::optional<Estimate> test_estimate;
  std::optional<BcaResult> bca;
  std::optional<McValue> mc;
  std::uint64_t mc_seed = 0;
  std::optional<double> overfit_gap;       // validation SNTIS - MC value
  std::optional<double> low_reward_mass;   // on the training set
  std::optional<Decomposition> decomposition;
};

struct Report {
  std::uint64_t master_seed = 0;
  std::string selection_mode;
  double ess_threshold = 0.0;
  std::uint64_t train_fingerprint = 0;
  std::uint64_t val_fingerprint = 0;
  std::uint64_t test_fingerprint = 0;
  std::vector<CellReport> cells;
  std::vector<SelectionReport> selections;
};

std::string report_to_json(const Report& report);
Report report_from_json(const std::string& json_text);
Report report_from_json_file(const std::string& path);
std::string summarize_report_text(const Report& report);

// Re-run checkpoint selection over a finished report with a different ESS
// threshold or mode; returns one summary line per learner.
std::vector<std::string> reselect(const Report& report, double ess_threshold,
                                  const std::string& selection_mode);

// Run the full pipeline: materialize data, train every grid cell, select per
// learner with the ESS filter, evaluate selected policies on the test split
// (SNTIS + BCa and, for env-backed configs, Monte Carlo), and write all
// artifacts under config.out_dir. Cell failures are recorded per cell; only
// all-cells-failed aborts. Deterministic given the master seed.
Report run_experiment(const ExperimentConfig& config);

struct VerifyResult {
  bool pass = true;
  std::vector<std::string> problems;
};

// Recompute every number in a run directory's report from the stored
// datasets and checkpoints; mismatches beyond 1e-9 and missing artifacts
// fail the check.
VerifyResult verify_report(const std::string& run_dir);

struct DeltaSweepRow {
  double delta = 0.0;
  bool selected = false;
  double train_value = 0.0;
  double train_ess = 0.0;
  double test_value = 0.0;
  double test_ess = 0.0;
};

// Train POELA across a delta grid (same seed per cell) and tabulate
// training/test value and ESS of the selected policy.
std::vector<DeltaSweepRow> delta_sweep(const TrainConfig& base, std::span<const double> deltas,
                                       const Dataset& train, const Dataset& val, const Dataset& test,
                                       double ess_threshold, const std::string& selection_mode,
                                       const Env* env, std::size_t mc_rollouts, std::uint64_t mc_seed);

std::string delta_sweep_csv(const std::vector<DeltaSweepRow>& rows);

// Delta sweep driven by an experiment config: materializes the config's
// datasets and uses its first poela learner entry as the base cell.
std::vector<DeltaSweepRow> delta_sweep_from_config(const ExperimentConfig& config,
                                                   std::span<const double> deltas);

struct MaskComparison {
  std::size_t samples = 0;
  double mean_eligible_size = 0.0;
  double mean_threshold_size = 0.0;
  double mean_jaccard = 0.0;
  std::size_t eligible_strictly_smaller = 0;   // delta-rule more conservative
  std::size_t threshold_strictly_smaller = 0;  // muhat-threshold more conservative
  std::size_t equal_sets = 0;
};

// Per-sample comparison of the delta-neighborhood eligible sets against the
// muhat > b threshold rule.
MaskComparison diagnose_masks(const Dataset& ds, double delta, const BehaviorEstimate& behavior,
                              double b);

}  // namespace poela
