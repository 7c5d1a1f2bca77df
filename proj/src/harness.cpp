#include "poela/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <sstream>

#include "json.hpp"

namespace poela {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Seed streams hanging off the master seed.
constexpr std::uint64_t kStreamTrain = 101, kStreamVal = 102, kStreamTest = 103;
constexpr std::uint64_t kStreamCells = 200, kStreamBca = 300, kStreamMc = 400;

json estimate_to_json(const Estimate& e) {
  json j;
  j["value"] = e.value;
  j["variance"] = e.variance;
  j["ess"] = e.ess;
  j["n"] = e.n;
  j["M"] = std::isinf(e.truncation) ? json() : json(e.truncation);
  j["tag"] = to_string(e.tag);
  return j;
}

Estimate estimate_from_json(const json& j) {
  Estimate e;
  e.value = j.at("value").get<double>();
  e.variance = j.at("variance").get<double>();
  e.ess = j.at("ess").get<double>();
  e.n = j.at("n").get<std::size_t>();
  e.truncation = j.at("M").is_null() ? std::numeric_limits<double>::infinity()
                                     : j.at("M").get<double>();
  const std::string tag = j.at("tag").get<std::string>();
  e.tag = tag == "IS" ? EstimatorTag::IS : tag == "SNIS" ? EstimatorTag::SNIS : EstimatorTag::SNTIS;
  return e;
}

json bca_to_json(const BcaResult& b) {
  json j;
  j["point"] = b.point;
  j["lb"] = b.lower;
  j["ub"] = b.upper;
  j["B"] = b.resamples;
  j["alpha"] = b.alpha;
  j["z0"] = b.z0;
  j["accel"] = b.accel;
  j["seed"] = b.seed;
  j["dropped_resamples"] = b.dropped;
  j["degenerate"] = b.degenerate;
  return j;
}

BcaResult bca_from_json(const json& j) {
  BcaResult b;
  b.point = j.at("point").get<double>();
  b.lower = j.at("lb").get<double>();
  b.upper = j.at("ub").get<double>();
  b.resamples = j.at("B").get<std::size_t>();
  b.alpha = j.at("alpha").get<double>();
  b.z0 = j.at("z0").get<double>();
  b.accel = j.at("accel").get<double>();
  b.seed = j.at("seed").get<std::uint64_t>();
  b.dropped = j.at("dropped_resamples").get<std::size_t>();
  b.degenerate = j.at("degenerate").get<bool>();
  return b;
}

json mc_to_json(const McValue& m) {
  json j;
  j["mean"] = m.mean;
  j["std_error"] = m.std_error;
  j["rollouts"] = m.rollouts;
  return j;
}

McValue mc_from_json(const json& j) {
  McValue m;
  m.mean = j.at("mean").get<double>();
  m.std_error = j.at("std_error").get<double>();
  m.rollouts = j.at("rollouts").get<std::size_t>();
  return m;
}

json decomposition_to_json(const Decomposition& d) {
  json j;
  j["empirical_v"] = d.empirical_v;
  j["context_shift"] = d.context_shift;
  j["per_context_error"] = d.per_context_error;
  j["snis"] = d.snis;
  return j;
}

Decomposition decomposition_from_json(const json& j) {
  Decomposition d;
  d.empirical_v = j.at("empirical_v").get<double>();
  d.context_shift = j.at("context_shift").get<double>();
  d.per_context_error = j.at("per_context_error").get<double>();
  d.snis = j.at("snis").get<double>();
  return d;
}

json learner_grid_to_json(const LearnerGridConfig& g) {
  json j;
  j["tag"] = to_string(g.tag);
  j["delta"] = g.delta;
  j["mu_threshold"] = g.mu_threshold;
  j["lambda"] = g.lambda;
  j["M"] = g.truncation;
  j["learning_rate"] = g.learning_rate;
  j["max_steps"] = g.max_steps;
  j["checkpoint_every"] = g.checkpoint_every;
  j["restarts"] = g.restarts;
  j["arch"] = to_string(g.arch);
  j["hidden"] = g.hidden;
  return j;
}

LearnerGridConfig learner_grid_from_json(const json& j) {
  LearnerGridConfig g;
  g.tag = learner_tag_from_string(j.at("tag").get<std::string>());
  if (j.contains("delta")) g.delta = j.at("delta").get<std::vector<double>>();
  if (j.contains("mu_threshold")) g.mu_threshold = j.at("mu_threshold").get<std::vector<double>>();
  if (j.contains("lambda")) g.lambda = j.at("lambda").get<std::vector<double>>();
  g.truncation = j.value("M", g.truncation);
  g.learning_rate = j.value("learning_rate", g.learning_rate);
  g.max_steps = j.value("max_steps", g.max_steps);
  g.checkpoint_every = j.value("checkpoint_every", g.checkpoint_every);
  g.restarts = j.value("restarts", g.restarts);
  if (j.contains("arch")) g.arch = policy_arch_from_string(j.at("arch").get<std::string>());
  g.hidden = j.value("hidden", g.hidden);
  return g;
}

}  // namespace

ExperimentConfig experiment_config_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad experiment config: ") + e.what());
  }
  ExperimentConfig c;
  c.master_seed = j.value("master_seed", c.master_seed);
  c.out_dir = j.value("out_dir", c.out_dir);
  const json& d = j.at("data");
  c.data.source = d.value("source", c.data.source);
  if (c.data.source == "env") {
    c.data.env = env_spec_from_json(d.at("env").dump());
    c.data.behavior = d.value("behavior", c.data.behavior);
    c.data.n_train = d.at("n_train").get<std::size_t>();
    c.data.n_val = d.at("n_val").get<std::size_t>();
    c.data.n_test = d.value("n_test", std::size_t{0});
  } else if (c.data.source == "file") {
    c.data.path = d.at("path").get<std::string>();
    const json& s = d.at("split");
    c.data.split.train_fraction = s.at("train").get<double>();
    c.data.split.val_fraction = s.at("val").get<double>();
    c.data.split.test_fraction = s.at("test").get<double>();
    c.data.split.seed = s.value("seed", std::uint64_t{0});
  } else {
    throw ValidationError("data.source must be \"env\" or \"file\"");
  }
  if (j.contains("behavior")) {
    const json& b = j.at("behavior");
    c.behavior.method = b.value("method", c.behavior.method);
    c.behavior.k = b.value("k", c.behavior.k);
    c.behavior.overlap_floor = b.value("overlap_floor", c.behavior.overlap_floor);
    c.behavior.use_in_weights = b.value("use_in_weights", c.behavior.use_in_weights);
  }
  for (const json& g : j.at("learners")) c.learners.push_back(learner_grid_from_json(g));
  c.ess_threshold = j.value("ess_threshold", c.ess_threshold);
  c.selection_mode = j.value("selection", c.selection_mode);
  c.test_mode = j.value("test_mode", c.test_mode);
  c.mc_rollouts = j.value("mc_rollouts", c.mc_rollouts);
  if (j.contains("bootstrap")) {
    c.bootstrap_b = j.at("bootstrap").value("B", c.bootstrap_b);
    c.bootstrap_alpha = j.at("bootstrap").value("alpha", c.bootstrap_alpha);
  }
  if (j.contains("low_reward_threshold") && !j.at("low_reward_threshold").is_null())
    c.low_reward_threshold = j.at("low_reward_threshold").get<double>();
  c.decompose = j.value("decompose", c.decompose);
  c.jobs = j.value("jobs", c.jobs);
  return c;
}

std::string experiment_config_to_json(const ExperimentConfig& c) {
  json j;
  j["master_seed"] = c.master_seed;
  j["out_dir"] = c.out_dir;
  json d;
  d["source"] = c.data.source;
  if (c.data.source == "env") {
    d["env"] = json::parse(env_spec_to_json(c.data.env));
    d["behavior"] = c.data.behavior;
    d["n_train"] = c.data.n_train;
    d["n_val"] = c.data.n_val;
    d["n_test"] = c.data.n_test;
  } else {
    d["path"] = c.data.path;
    d["split"] = {{"train", c.data.split.train_fraction},
                  {"val", c.data.split.val_fraction},
                  {"test", c.data.split.test_fraction},
                  {"seed", c.data.split.seed}};
  }
  j["data"] = d;
  j["behavior"] = {{"method", c.behavior.method},
                   {"k", c.behavior.k},
                   {"overlap_floor", c.behavior.overlap_floor},
                   {"use_in_weights", c.behavior.use_in_weights}};
  json learners = json::array();
  for (const auto& g : c.learners) learners.push_back(learner_grid_to_json(g));
  j["learners"] = learners;
  j["ess_threshold"] = c.ess_threshold;
  j["selection"] = c.selection_mode;
  j["test_mode"] = c.test_mode;
  j["mc_rollouts"] = c.mc_rollouts;
  j["bootstrap"] = {{"B", c.bootstrap_b}, {"alpha", c.bootstrap_alpha}};
  j["low_reward_threshold"] = c.low_reward_threshold ? json(*c.low_reward_threshold) : json();
  j["decompose"] = c.decompose;
  j["jobs"] = c.jobs;
  return j.dump(2);
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return experiment_config_from_json(ss.str());
}

namespace {

json checkpoint_metric_to_json(const CheckpointMetric& m) {
  json j;
  j["step"] = m.step;
  j["train_objective"] = m.train_objective;
  j["val"] = m.val ? estimate_to_json(*m.val) : json();
  j["file"] = m.file;
  return j;
}

CheckpointMetric checkpoint_metric_from_json(const json& j) {
  CheckpointMetric m;
  m.step = j.at("step").get<std::size_t>();
  m.train_objective = j.at("train_objective").get<double>();
  if (!j.at("val").is_null()) m.val = estimate_from_json(j.at("val"));
  m.file = j.at("file").get<std::string>();
  return m;
}

json cell_to_json(const CellReport& c) {
  json j;
  j["cell"] = c.cell_index;
  j["learner_index"] = c.learner_index;
  j["tag"] = to_string(c.tag);
  j["delta"] = c.delta;
  j["mu_threshold"] = c.mu_threshold;
  j["lambda"] = c.lambda;
  j["restart"] = c.restart;
  j["seed"] = c.seed;
  j["status"] = c.status;
  json cks = json::array();
  for (const auto& m : c.checkpoints) cks.push_back(checkpoint_metric_to_json(m));
  j["checkpoints"] = cks;
  return j;
}

CellReport cell_from_json(const json& j) {
  CellReport c;
  c.cell_index = j.at("cell").get<std::size_t>();
  c.learner_index = j.at("learner_index").get<std::size_t>();
  c.tag = learner_tag_from_string(j.at("tag").get<std::string>());
  c.delta = j.at("delta").get<double>();
  c.mu_threshold = j.at("mu_threshold").get<double>();
  c.lambda = j.at("lambda").get<double>();
  c.restart = j.at("restart").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.status = j.at("status").get<std::string>();
  for (const json& m : j.at("checkpoints")) c.checkpoints.push_back(checkpoint_metric_from_json(m));
  return c;
}

json selection_to_json(const SelectionReport& s) {
  json j;
  j["learner_index"] = s.learner_index;
  j["tag"] = to_string(s.tag);
  j["selected"] = s.selected;
  if (s.selected) {
    j["cell"] = s.cell_index;
    j["step"] = s.step;
    j["val_value"] = s.val_value;
    j["val_ess"] = s.val_ess;
  }
  j["test"] = s.test_estimate ? estimate_to_json(*s.test_estimate) : json();
  j["bca"] = s.bca ? bca_to_json(*s.bca) : json();
  j["mc"] = s.mc ? mc_to_json(*s.mc) : json();
  j["mc_seed"] = s.mc_seed;
  j["overfit_gap"] = s.overfit_gap ? json(*s.overfit_gap) : json();
  j["low_reward_mass"] = s.low_reward_mass ? json(*s.low_reward_mass) : json();
  j["decomposition"] = s.decomposition ? decomposition_to_json(*s.decomposition) : json();
  return j;
}

SelectionReport selection_from_json(const json& j) {
  SelectionReport s;
  s.learner_index = j.at("learner_index").get<std::size_t>();
  s.tag = learner_tag_from_string(j.at("tag").get<std::string>());
  s.selected = j.at("selected").get<bool>();
  if (s.selected) {
    s.cell_index = j.at("cell").get<std::size_t>();
    s.step = j.at("step").get<std::size_t>();
    s.val_value = j.at("val_value").get<double>();
    s.val_ess = j.at("val_ess").get<double>();
  }
  if (!j.at("test").is_null()) s.test_estimate = estimate_from_json(j.at("test"));
  if (!j.at("bca").is_null()) s.bca = bca_from_json(j.at("bca"));
  if (!j.at("mc").is_null()) s.mc = mc_from_json(j.at("mc"));
  s.mc_seed = j.value("mc_seed", std::uint64_t{0});
  if (!j.at("overfit_gap").is_null()) s.overfit_gap = j.at("overfit_gap").get<double>();
  if (!j.at("low_reward_mass").is_null()) s.low_reward_mass = j.at("low_reward_mass").get<double>();
  if (!j.at("decomposition").is_null()) s.decomposition = decomposition_from_json(j.at("decomposition"));
  return s;
}

}  // namespace

std::string report_to_json(const Report& r) {
  json j;
  j["master_seed"] = r.master_seed;
  j["selection_mode"] = r.selection_mode;
  j["ess_threshold"] = r.ess_threshold;
  j["fingerprints"] = {{"train", r.train_fingerprint},
                       {"val", r.val_fingerprint},
                       {"test", r.test_fingerprint}};
  json cells = json::array();
  for (const auto& c : r.cells) cells.push_back(cell_to_json(c));
  j["cells"] = cells;
  json sels = json::array();
  for (const auto& s : r.selections) sels.push_back(selection_to_json(s));
  j["selections"] = sels;
  return j.dump(2);
}

Report report_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad report: ") + e.what());
  }
  Report r;
  r.master_seed = j.at("master_seed").get<std::uint64_t>();
  r.selection_mode = j.at("selection_mode").get<std::string>();
  r.ess_threshold = j.at("ess_threshold").get<double>();
  r.train_fingerprint = j.at("fingerprints").at("train").get<std::uint64_t>();
  r.val_fingerprint = j.at("fingerprints").at("val").get<std::uint64_t>();
  r.test_fingerprint = j.at("fingerprints").at("test").get<std::uint64_t>();
  for (const json& c : j.at("cells")) r.cells.push_back(cell_from_json(c));
  for (const json& s : j.at("selections")) r.selections.push_back(selection_from_json(s));
  return r;
}

Report report_from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open report: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return report_from_json(ss.str());
}

std::vector<std::string> reselect(const Report& report, double ess_threshold,
                                  const std::string& selection_mode) {
  std::vector<std::string> out;
  std::size_t learner_count = 0;
  for (const auto& c : report.cells) learner_count = std::max(learner_count, c.learner_index + 1);
  for (std::size_t li = 0; li < learner_count; ++li) {
    const CheckpointMetric* best = nullptr;
    std::size_t best_cell = 0;
    LearnerTag tag = LearnerTag::Poela;
    for (const CellReport& cr : report.cells) {
      if (cr.learner_index != li || cr.status != "ok") continue;
      tag = cr.tag;
      const std::size_t first =
          selection_mode == "final" && !cr.checkpoints.empty() ? cr.checkpoints.size() - 1 : 0;
      for (std::size_t ci = first; ci < cr.checkpoints.size(); ++ci) {
        const CheckpointMetric& m = cr.checkpoints[ci];
        if (!m.val || m.val->ess < ess_threshold) continue;
        if (!best || m.val->value > best->val->value) {
          best = &m;
          best_cell = cr.cell_index;
        }
      }
    }
    std::ostringstream os;
    os << "learner " << li << " [" << to_string(tag) << "]: ";
    if (!best) os << "no policy selected";
    else
      os << "cell " << best_cell << " step " << best->step << "  val SNTIS " << best->val->value
         << "  val ESS " << best->val->ess << "  (" << best->file << ")";
    out.push_back(os.str());
  }
  return out;
}

namespace {

struct Cell {
  std::size_t index = 0;
  std::size_t learner_index = 0;
  std::size_t restart = 0;
  TrainConfig config;
};

std::vector<Cell> expand_cells(const ExperimentConfig& config) {
  std::vector<Cell> cells;
  static const std::vector<double> kSingle{0.0};
  for (std::size_t li = 0; li < config.learners.size(); ++li) {
    const LearnerGridConfig& g = config.learners[li];
    const std::vector<double>& first = g.tag == LearnerTag::Poela  ? g.delta
                                       : g.tag == LearnerTag::PoMu ? g.mu_threshold
                                                                   : kSingle;
    const std::vector<double>& first_axis = first.empty() ? kSingle : first;
    for (double f : first_axis) {
      for (double lam : (g.lambda.empty() ? kSingle : g.lambda)) {
        for (std::size_t r = 0; r < std::max<std::size_t>(1, g.restarts); ++r) {
          Cell cell;
          cell.index = cells.size();
          cell.learner_index = li;
          cell.restart = r;
          cell.config.tag = g.tag;
          if (g.tag == LearnerTag::Poela) cell.config.delta = f;
          if (g.tag == LearnerTag::PoMu) cell.config.mu_threshold = f;
          cell.config.lambda = lam;
          cell.config.truncation = g.truncation;
          cell.config.learning_rate = g.learning_rate;
          cell.config.max_steps = g.max_steps;
          cell.config.checkpoint_every = g.checkpoint_every;
          cell.config.arch = g.arch;
          cell.config.hidden = g.hidden;
          cells.push_back(std::move(cell));
        }
      }
    }
  }
  return cells;
}

// Everything immutable the cells and evaluations share.
struct Prepared {
  std::unique_ptr<Env> env;
  std::unique_ptr<Dataset> train, val, test;
  std::optional<BehaviorEstimate> behavior;
  std::shared_ptr<NeighborIndex> train_index;            // for poela cells
  std::map<double, EligibleMask> poela_train_masks;      // by delta
  std::map<double, EligibleMask> poela_val_masks;
  std::map<double, EligibleMask> pomu_train_masks;       // by threshold b
  std::map<double, EligibleMask> pomu_val_masks;
  std::optional<EligibleMask> pocrm_train_masks;         // overlap mask, when behavior given
  std::optional<EligibleMask> pocrm_val_masks;
  std::optional<std::vector<std::vector<double>>> train_mu, val_mu, test_mu;
};

const EligibleMask* train_masks_for(const Prepared& prep, const TrainConfig& c) {
  switch (c.tag) {
    case LearnerTag::Poela: return &prep.poela_train_masks.at(c.delta);
    case LearnerTag::PoMu: return &prep.pomu_train_masks.at(c.mu_threshold);
    case LearnerTag::PoCrm: return prep.pocrm_train_masks ? &*prep.pocrm_train_masks : nullptr;
  }
  return nullptr;
}

const EligibleMask* val_masks_for(const Prepared& prep, const TrainConfig& c) {
  switch (c.tag) {
    case LearnerTag::Poela: {
      auto it = prep.poela_val_masks.find(c.delta);
      return it == prep.poela_val_masks.end() ? nullptr : &it->second;
    }
    case LearnerTag::PoMu: {
      auto it = prep.pomu_val_masks.find(c.mu_threshold);
      return it == prep.pomu_val_masks.end() ? nullptr : &it->second;
    }
    case LearnerTag::PoCrm: return prep.pocrm_val_masks ? &*prep.pocrm_val_masks : nullptr;
  }
  return nullptr;
}

std::unique_ptr<MaskSource> mask_source_for(const Prepared& prep, const TrainConfig& c) {
  switch (c.tag) {
    case LearnerTag::Poela:
      return std::make_unique<EligibleMaskSource>(*prep.train_index, c.delta);
    case LearnerTag::PoMu:
      return std::make_unique<BehaviorMaskSource>(*prep.behavior, c.mu_threshold);
    case LearnerTag::PoCrm:
      if (prep.behavior)
        return std::make_unique<BehaviorMaskSource>(*prep.behavior, 0.0);
      return nullptr;
  }
  return nullptr;
}

PolicyConstraint constraint_for(const Prepared& prep, const TrainConfig& c,
                                std::uint64_t train_fingerprint, std::size_t knn_k) {
  PolicyConstraint pc;
  pc.train_fingerprint = train_fingerprint;
  switch (c.tag) {
    case LearnerTag::Poela:
      pc.type = PolicyConstraint::Type::Eligible;
      pc.delta = c.delta;
      break;
    case LearnerTag::PoMu:
      pc.type = PolicyConstraint::Type::MuThreshold;
      pc.mu_threshold = c.mu_threshold;
      pc.knn_k = knn_k;
      break;
    case LearnerTag::PoCrm:
      pc.type = prep.behavior ? PolicyConstraint::Type::MuThreshold : PolicyConstraint::Type::None;
      pc.mu_threshold = 0.0;
      pc.knn_k = prep.behavior ? knn_k : 0;
      break;
  }
  return pc;
}

Prepared prepare(const ExperimentConfig& config, bool from_stored, const std::string& run_dir,
                 const std::vector<Cell>& cells) {
  Prepared prep;
  if (config.data.source == "env") prep.env = make_env(config.data.env);

  if (from_stored) {
    prep.train = std::make_unique<Dataset>(load_dataset(run_dir + "/data/train.ds.jsonl"));
    prep.val = std::make_unique<Dataset>(load_dataset(run_dir + "/data/val.ds.jsonl"));
    prep.test = std::make_unique<Dataset>(load_dataset(run_dir + "/data/test.ds.jsonl"));
  } else if (config.data.source == "env") {
    const BehaviorTag tag = behavior_tag_from_string(config.data.behavior);
    if (config.data.n_train == 0 || config.data.n_val == 0)
      throw ValidationError("env data source requires n_train > 0 and n_val > 0");
    prep.train = std::make_unique<Dataset>(
        generate_logged_data(*prep.env, tag, config.data.n_train, derive_seed(config.master_seed, kStreamTrain)));
    prep.val = std::make_unique<Dataset>(
        generate_logged_data(*prep.env, tag, config.data.n_val, derive_seed(config.master_seed, kStreamVal)));
    if (config.data.n_test > 0)
      prep.test = std::make_unique<Dataset>(generate_logged_data(
          *prep.env, tag, config.data.n_test, derive_seed(config.master_seed, kStreamTest)));
    else
      prep.test = std::make_unique<Dataset>(std::vector<Trajectory>{}, prep.env->feature_dim(),
                                            prep.env->action_count(), prep.env->r_max(),
                                            prep.env->h_max(), "empty test split");
  } else {
    const Dataset full = load_dataset(config.data.path);
    SplitResult parts = split(full, config.data.split);
    prep.train = std::make_unique<Dataset>(std::move(parts.train));
    prep.val = std::make_unique<Dataset>(std::move(parts.val));
    prep.test = std::make_unique<Dataset>(std::move(parts.test));
  }

  bool any_poela = false, any_pomu = false, any_pocrm = false;
  for (const Cell& c : cells) {
    any_poela |= c.config.tag == LearnerTag::Poela;
    any_pomu |= c.config.tag == LearnerTag::PoMu;
    any_pocrm |= c.config.tag == LearnerTag::PoCrm;
  }

  if (config.behavior.method == "knn") {
    prep.train_index = std::make_shared<NeighborIndex>(*prep.train);
    prep.behavior = knn_behavior(prep.train_index, config.behavior.k);
  } else if (config.behavior.method != "logged") {
    throw ValidationError("behavior.method must be \"logged\" or \"knn\"");
  }
  if (any_pomu && !prep.behavior)
    throw ValidationError("pomu learners require behavior.method = \"knn\"");

  if (any_poela && !prep.train_index) prep.train_index = std::make_shared<NeighborIndex>(*prep.train);

  for (const Cell& c : cells) {
    if (c.config.tag == LearnerTag::Poela) {
      if (!prep.poela_train_masks.count(c.config.delta)) {
        prep.poela_train_masks.emplace(c.config.delta,
                                       precompute_masks(*prep.train_index, *prep.train, c.config.delta));
        const EligibleMaskSource source(*prep.train_index, c.config.delta);
        if (prep.val->size() > 0)
          prep.poela_val_masks.emplace(c.config.delta, masks_for_dataset(source, *prep.val));
      }
    } else if (c.config.tag == LearnerTag::PoMu) {
      if (!prep.pomu_train_masks.count(c.config.mu_threshold)) {
        prep.pomu_train_masks.emplace(c.config.mu_threshold,
                                      overlap_mask(*prep.behavior, *prep.train, c.config.mu_threshold));
        const BehaviorMaskSource source(*prep.behavior, c.config.mu_threshold);
        if (prep.val->size() > 0)
          prep.pomu_val_masks.emplace(c.config.mu_threshold, masks_for_dataset(source, *prep.val));
      }
    }
  }
  if (any_pocrm && prep.behavior) {
    prep.pocrm_train_masks = overlap_mask(*prep.behavior, *prep.train, config.behavior.overlap_floor);
    const BehaviorMaskSource source(*prep.behavior, config.behavior.overlap_floor);
    if (prep.val->size() > 0) prep.pocrm_val_masks = masks_for_dataset(source, *prep.val);
  }

  if (config.behavior.use_in_weights) {
    if (!prep.behavior) throw ValidationError("use_in_weights requires behavior.method = \"knn\"");
    prep.train_mu = behavior_table(*prep.behavior, *prep.train);
    if (prep.val->size() > 0) prep.val_mu = behavior_table(*prep.behavior, *prep.val);
    if (prep.test->size() > 0) prep.test_mu = behavior_table(*prep.behavior, *prep.test);
  }
  return prep;
}

struct SelectionEvaluation {
  std::optional<Estimate> test_estimate;
  std::optional<BcaResult> bca;
  std::optional<McValue> mc;
  std::uint64_t mc_seed = 0;
  std::optional<double> overfit_gap;
  std::optional<double> low_reward_mass;
  std::optional<Decomposition> decomposition;
};

SelectionEvaluation evaluate_selection(const ExperimentConfig& config, const Prepared& prep,
                                       const TrainConfig& cell_config, const PolicyParams& params,
                                       std::size_t learner_index, double val_value) {
  SelectionEvaluation out;
  const std::unique_ptr<MaskSource> source = mask_source_for(prep, cell_config);

  if (prep.test->size() > 0) {
    std::optional<EligibleMask> test_masks;
    if (source) test_masks = masks_for_dataset(*source, *prep.test);
    try {
      const WeightTable w =
          policy_weights(params, test_masks ? &*test_masks : nullptr, *prep.test,
                         cell_config.truncation, prep.test_mu ? &*prep.test_mu : nullptr);
      out.test_estimate = sntis_value(w, *prep.test);
      out.bca = bca_sntis(*prep.test, w, config.bootstrap_b, config.bootstrap_alpha,
                          derive_seed(config.master_seed, kStreamBca + learner_index));
    } catch (const NoOverlapError&) {
      out.test_estimate.reset();
      out.bca.reset();
    }
  }

  if (config.test_mode == "mc" && prep.env) {
    const MaskedPolicy policy{&params, source.get()};
    out.mc_seed = derive_seed(config.master_seed, kStreamMc + learner_index);
    out.mc = mc_value(*prep.env, policy.as_fn(), config.mc_rollouts, out.mc_seed);
    out.overfit_gap = val_value - out.mc->mean;
  }

  if (config.low_reward_threshold) {
    try {
      const WeightTable w =
          policy_weights(params, train_masks_for(prep, cell_config), *prep.train,
                         cell_config.truncation, prep.train_mu ? &*prep.train_mu : nullptr);
      out.low_reward_mass = low_reward_weight_mass(w, *prep.train, *config.low_reward_threshold);
    } catch (const NoOverlapError&) {
    }
  }

  if (config.decompose && prep.env && prep.env->finite()) {
    const MaskedPolicy policy{&params, source.get()};
    const OracleValue oracle = oracle_context_value(*prep.env, policy.as_fn());
    try {
      const WeightTable w = policy_weights(params, train_masks_for(prep, cell_config), *prep.train,
                                           std::numeric_limits<double>::infinity(),
                                           prep.train_mu ? &*prep.train_mu : nullptr);
      out.decomposition = decompose(w, *prep.train, oracle.as_fn());
    } catch (const NoOverlapError&) {
    }
  }
  return out;
}

std::string cell_dir_name(std::size_t index) { return "cell-" + std::to_string(index); }

}  // namespace

std::string summarize_report_text(const Report& report) {
  std::ostringstream os;
  os << "experiment summary (selection mode: " << report.selection_mode
     << ", ESS threshold: " << report.ess_threshold << ")\n";
  for (const auto& s : report.selections) {
    os << "- learner " << s.learner_index << " [" << to_string(s.tag) << "]: ";
    if (!s.selected) {
      os << "no policy selected (all checkpoints below the ESS threshold)\n";
      continue;
    }
    os << "cell " << s.cell_index << " step " << s.step << ", validation SNTIS " << s.val_value
       << " (ESS " << s.val_ess << ")";
    if (s.test_estimate)
      os << ", test SNTIS " << s.test_estimate->value << " (ESS " << s.test_estimate->ess << ")";
    if (s.bca) os << ", BCa [" << s.bca->lower << ", " << s.bca->upper << "]";
    if (s.mc) os << ", MC " << s.mc->mean << " +- " << s.mc->std_error;
    if (s.overfit_gap) os << ", overfit gap " << *s.overfit_gap;
    if (s.low_reward_mass) os << ", low-reward weight mass " << *s.low_reward_mass;
    os << "\n";
  }
  std::size_t failed = 0;
  for (const auto& c : report.cells)
    if (c.status != "ok") ++failed;
  if (failed > 0) os << failed << " cell(s) failed; see report.json\n";
  return os.str();
}

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

Report run_experiment(const ExperimentConfig& config) {
  if (config.learners.empty()) throw ValidationError("experiment requires at least one learner");
  if (config.out_dir.empty()) throw ValidationError("experiment requires an output directory");
  if (config.ess_threshold < 0.0) throw ValidationError("ESS threshold must be nonnegative");
  if (config.selection_mode != "final" && config.selection_mode != "best-checkpoint")
    throw ValidationError("selection mode must be \"final\" or \"best-checkpoint\"");
  if (config.test_mode != "sntis" && config.test_mode != "mc")
    throw ValidationError("test mode must be \"sntis\" or \"mc\"");
  if (config.test_mode == "mc" && config.data.source != "env")
    throw ValidationError("mc test mode requires an env data source");

  const auto t_start = std::chrono::steady_clock::now();
  const std::vector<Cell> cells = expand_cells(config);
  Prepared prep = prepare(config, false, "", cells);

  fs::create_directories(config.out_dir + "/data");
  write_text(config.out_dir + "/config.json", experiment_config_to_json(config) + "\n");
  save_dataset(*prep.train, config.out_dir + "/data/train.ds.jsonl");
  save_dataset(*prep.val, config.out_dir + "/data/val.ds.jsonl");
  save_dataset(*prep.test, config.out_dir + "/data/test.ds.jsonl");

  Report report;
  report.master_seed = config.master_seed;
  report.selection_mode = config.selection_mode;
  report.ess_threshold = config.ess_threshold;
  report.train_fingerprint = prep.train->fingerprint();
  report.val_fingerprint = prep.val->fingerprint();
  report.test_fingerprint = prep.test->fingerprint();

  // Train all cells; failures are isolated per cell.
  struct CellOutcome {
    std::vector<Checkpoint> checkpoints;
    std::string error;
  };
  std::vector<CellOutcome> outcomes(cells.size());
  auto run_cell = [&](std::size_t k) {
    const Cell& cell = cells[k];
    TrainConfig tc = cell.config;
    tc.seed = derive_seed(config.master_seed, kStreamCells + cell.index);
    try {
      outcomes[k].checkpoints =
          train_loop(tc, *prep.train, *prep.val, train_masks_for(prep, tc), val_masks_for(prep, tc),
                     prep.train_mu ? &*prep.train_mu : nullptr, prep.val_mu ? &*prep.val_mu : nullptr);
    } catch (const std::exception& e) {
      outcomes[k].error = e.what();
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, config.jobs);
  for (std::size_t base = 0; base < cells.size(); base += jobs) {
    std::vector<std::future<void>> batch;
    const std::size_t end = std::min(cells.size(), base + jobs);
    for (std::size_t k = base + 1; k < end; ++k)
      batch.push_back(std::async(std::launch::async, run_cell, k));
    run_cell(base);
    for (auto& f : batch) f.get();
  }

  std::size_t ok_cells = 0;
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const Cell& cell = cells[k];
    CellReport cr;
    cr.cell_index = cell.index;
    cr.learner_index = cell.learner_index;
    cr.tag = cell.config.tag;
    cr.delta = cell.config.delta;
    cr.mu_threshold = cell.config.mu_threshold;
    cr.lambda = cell.config.lambda;
    cr.restart = cell.restart;
    cr.seed = derive_seed(config.master_seed, kStreamCells + cell.index);
    if (!outcomes[k].error.empty()) {
      cr.status = "failed: " + outcomes[k].error;
      report.cells.push_back(std::move(cr));
      continue;
    }
    cr.status = "ok";
    ++ok_cells;
    const std::string dir = config.out_dir + "/cells/" + cell_dir_name(cell.index);
    fs::create_directories(dir);
    const PolicyConstraint pc = constraint_for(prep, cell.config, prep.train->fingerprint(),
                                               prep.behavior ? prep.behavior->k() : 0);
    for (const Checkpoint& ckpt : outcomes[k].checkpoints) {
      CheckpointMetric m;
      m.step = ckpt.step;
      m.train_objective = ckpt.train_objective;
      m.val = ckpt.val_estimate;
      m.file = "cells/" + cell_dir_name(cell.index) + "/ckpt-" + std::to_string(ckpt.step) + ".policy";
      json meta;
      meta["learner"] = to_string(cell.config.tag);
      meta["step"] = ckpt.step;
      meta["lambda"] = cell.config.lambda;
      meta["M"] = cell.config.truncation;
      meta["learning_rate"] = cell.config.learning_rate;
      meta["seed"] = cr.seed;
      save_policy(ckpt.params, pc, config.out_dir + "/" + m.file, meta.dump());
      cr.checkpoints.push_back(std::move(m));
    }
    write_text(dir + "/manifest.json", cell_to_json(cr).dump(2) + "\n");
    report.cells.push_back(std::move(cr));
  }
  if (ok_cells == 0) throw std::runtime_error("all experiment cells failed");

  // Selection per learner grid entry, then evaluation of the selected policy.
  for (std::size_t li = 0; li < config.learners.size(); ++li) {
    SelectionReport sel;
    sel.learner_index = li;
    sel.tag = config.learners[li].tag;

    const Checkpoint* best = nullptr;
    std::size_t best_cell = 0;
    for (std::size_t k = 0; k < cells.size(); ++k) {
      if (cells[k].learner_index != li || !outcomes[k].error.empty()) continue;
      const auto& cks = outcomes[k].checkpoints;
      const std::size_t first = config.selection_mode == "final" && !cks.empty() ? cks.size() - 1 : 0;
      for (std::size_t ci = first; ci < cks.size(); ++ci) {
        const Checkpoint& c = cks[ci];
        if (!c.val_estimate || c.val_estimate->ess < config.ess_threshold) continue;
        if (!best || c.val_estimate->value > best->val_estimate->value) {
          best = &c;
          best_cell = k;
        }
      }
    }
    if (best) {
      sel.selected = true;
      sel.cell_index = cells[best_cell].index;
      sel.step = best->step;
      sel.val_value = best->val_estimate->value;
      sel.val_ess = best->val_estimate->ess;
      TrainConfig tc = cells[best_cell].config;
      const SelectionEvaluation ev =
          evaluate_selection(config, prep, tc, best->params, li, sel.val_value);
      sel.test_estimate = ev.test_estimate;
      sel.bca = ev.bca;
      sel.mc = ev.mc;
      sel.mc_seed = ev.mc_seed;
      sel.overfit_gap = ev.overfit_gap;
      sel.low_reward_mass = ev.low_reward_mass;
      sel.decomposition = ev.decomposition;
      save_policy(best->params,
                  constraint_for(prep, tc, prep.train->fingerprint(),
                                 prep.behavior ? prep.behavior->k() : 0),
                  config.out_dir + "/selected-" + std::to_string(li) + ".policy",
                  json{{"learner", to_string(sel.tag)}, {"cell", sel.cell_index}, {"step", sel.step}}
                      .dump());
    }
    report.selections.push_back(std::move(sel));
  }

  write_text(config.out_dir + "/report.json", report_to_json(report) + "\n");
  write_text(config.out_dir + "/report.txt", summarize_report_text(report));
  const auto t_end = std::chrono::steady_clock::now();
  json times;
  times["wall_seconds"] = std::chrono::duration<double>(t_end - t_start).count();
  times["finished_unix_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(
                                  std::chrono::system_clock::now().time_since_epoch())
                                  .count();
  write_text(config.out_dir + "/times.json", times.dump(2) + "\n");
  return report;
}

namespace {

bool close(double a, double b, double tol = 1e-9) {
  if (std::isnan(a) && std::isnan(b)) return true;
  return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

void compare_estimate(const std::optional<Estimate>& got, const std::optional<Estimate>& want,
                      const std::string& what, VerifyResult& result) {
  if (got.has_value() != want.has_value()) {
    result.problems.push_back(what + ": presence mismatch");
    return;
  }
  if (!got) return;
  if (!close(got->value, want->value)) result.problems.push_back(what + ".value mismatch");
  if (!close(got->variance, want->variance)) result.problems.push_back(what + ".variance mismatch");
  if (!close(got->ess, want->ess)) result.problems.push_back(what + ".ess mismatch");
}

}  // namespace

VerifyResult verify_report(const std::string& run_dir) {
  VerifyResult result;
  auto missing = [&](const std::string& path) {
    result.problems.push_back("missing artifact: " + path);
  };

  ExperimentConfig config;
  Report report;
  try {
    config = experiment_config_from_json(read_text(run_dir + "/config.json"));
    report = report_from_json(read_text(run_dir + "/report.json"));
  } catch (const std::exception& e) {
    result.pass = false;
    result.problems.push_back(e.what());
    return result;
  }

  const std::vector<Cell> cells = expand_cells(config);
  Prepared prep;
  try {
    prep = prepare(config, true, run_dir, cells);
  } catch (const std::exception& e) {
    result.pass = false;
    result.problems.push_back(std::string("cannot rebuild experiment state: ") + e.what());
    return result;
  }

  if (prep.train->fingerprint() != report.train_fingerprint)
    result.problems.push_back("train dataset fingerprint mismatch");
  if (prep.val->fingerprint() != report.val_fingerprint)
    result.problems.push_back("val dataset fingerprint mismatch");
  if (prep.test->fingerprint() != report.test_fingerprint)
    result.problems.push_back("test dataset fingerprint mismatch");

  if (report.cells.size() != cells.size())
    result.problems.push_back("report cell count does not match the config grid");

  for (const CellReport& cr : report.cells) {
    if (cr.status != "ok") continue;
    if (cr.cell_index >= cells.size()) {
      result.problems.push_back("cell " + std::to_string(cr.cell_index) + " out of range");
      continue;
    }
    TrainConfig tc = cells[cr.cell_index].config;
    tc.seed = cr.seed;
    const EligibleMask* train_masks = train_masks_for(prep, tc);
    const EligibleMask* val_masks = val_masks_for(prep, tc);
    for (const CheckpointMetric& m : cr.checkpoints) {
      const std::string path = run_dir + "/" + m.file;
      if (!fs::exists(path)) {
        missing(m.file);
        continue;
      }
      LoadedPolicy lp;
      try {
        lp = load_policy(path);
      } catch (const std::exception& e) {
        result.problems.push_back(m.file + ": " + e.what());
        continue;
      }
      const std::string where = "cell " + std::to_string(cr.cell_index) + " step " + std::to_string(m.step);
      try {
        const double obj = objective_value(lp.params, *prep.train, train_masks, tc.truncation,
                                           tc.lambda, prep.train_mu ? &*prep.train_mu : nullptr)
                               .objective;
        if (!close(obj, m.train_objective))
          result.problems.push_back(where + ": train objective mismatch");
      } catch (const std::exception& e) {
        result.problems.push_back(where + ": cannot recompute objective: " + e.what());
      }
      std::optional<Estimate> val;
      if (prep.val->size() > 0) {
        try {
          const WeightTable w = policy_weights(lp.params, val_masks, *prep.val, tc.truncation,
                                               prep.val_mu ? &*prep.val_mu : nullptr);
          val = sntis_value(w, *prep.val);
        } catch (const NoOverlapError&) {
        }
      }
      compare_estimate(val, m.val, where + ": val", result);
    }
  }

  // Re-derive the selection from the reported checkpoint metrics and re-run
  // the selected-policy evaluations.
  for (const SelectionReport& sel : report.selections) {
    const std::string where = "selection " + std::to_string(sel.learner_index);
    const CheckpointMetric* best = nullptr;
    std::size_t best_cell = 0;
    for (const CellReport& cr : report.cells) {
      if (cr.learner_index != sel.learner_index || cr.status != "ok") continue;
      const std::size_t first =
          report.selection_mode == "final" && !cr.checkpoints.empty() ? cr.checkpoints.size() - 1 : 0;
      for (std::size_t ci = first; ci < cr.checkpoints.size(); ++ci) {
        const CheckpointMetric& m = cr.checkpoints[ci];
        if (!m.val || m.val->ess < report.ess_threshold) continue;
        if (!best || m.val->value > best->val->value) {
          best = &m;
          best_cell = cr.cell_index;
        }
      }
    }
    if ((best != nullptr) != sel.selected) {
      result.problems.push_back(where + ": selected flag mismatch");
      continue;
    }
    if (!best) continue;
    if (best_cell != sel.cell_index || best->step != sel.step)
      result.problems.push_back(where + ": selected checkpoint mismatch");
    if (!close(best->val->value, sel.val_value) || !close(best->val->ess, sel.val_ess))
      result.problems.push_back(where + ": selected validation metrics mismatch");

    const std::string path = run_dir + "/" + best->file;
    if (!fs::exists(path)) {
      missing(best->file);
      continue;
    }
    TrainConfig tc = cells[sel.cell_index].config;
    const LoadedPolicy lp = load_policy(path);
    SelectionEvaluation ev;
    try {
      ev = evaluate_selection(config, prep, tc, lp.params, sel.learner_index, sel.val_value);
    } catch (const std::exception& e) {
      result.problems.push_back(where + ": evaluation failed: " + e.what());
      continue;
    }
    compare_estimate(ev.test_estimate, sel.test_estimate, where + ": test", result);
    if (ev.bca.has_value() != sel.bca.has_value())
      result.problems.push_back(where + ": bca presence mismatch");
    else if (ev.bca) {
      if (!close(ev.bca->point, sel.bca->point) || !close(ev.bca->lower, sel.bca->lower) ||
          !close(ev.bca->upper, sel.bca->upper))
        result.problems.push_back(where + ": bca bounds mismatch");
      if (ev.bca->seed != sel.bca->seed) result.problems.push_back(where + ": bca seed mismatch");
    }
    if (ev.mc.has_value() != sel.mc.has_value())
      result.problems.push_back(where + ": mc presence mismatch");
    else if (ev.mc && (!close(ev.mc->mean, sel.mc->mean) || ev.mc_seed != sel.mc_seed))
      result.problems.push_back(where + ": mc value mismatch");
    if (ev.overfit_gap.has_value() != sel.overfit_gap.has_value() ||
        (ev.overfit_gap && !close(*ev.overfit_gap, *sel.overfit_gap)))
      result.problems.push_back(where + ": overfit gap mismatch");
    if (ev.low_reward_mass.has_value() != sel.low_reward_mass.has_value() ||
        (ev.low_reward_mass && !close(*ev.low_reward_mass, *sel.low_reward_mass)))
      result.problems.push_back(where + ": low-reward weight mass mismatch");
    if (ev.decomposition.has_value() != sel.decomposition.has_value())
      result.problems.push_back(where + ": decomposition presence mismatch");
    else if (ev.decomposition) {
      if (!close(ev.decomposition->empirical_v, sel.decomposition->empirical_v) ||
          !close(ev.decomposition->context_shift, sel.decomposition->context_shift) ||
          !close(ev.decomposition->per_context_error, sel.decomposition->per_context_error))
        result.problems.push_back(where + ": decomposition mismatch");
    }
  }

  result.pass = result.problems.empty();
  return result;
}

std::vector<DeltaSweepRow> delta_sweep(const TrainConfig& base, std::span<const double> deltas,
                                       const Dataset& train, const Dataset& val, const Dataset& test,
                                       double ess_threshold, const std::string& selection_mode,
                                       const Env* env, std::size_t mc_rollouts, std::uint64_t mc_seed) {
  if (base.tag != LearnerTag::Poela) throw ValidationError("delta sweep requires a poela config");
  std::vector<DeltaSweepRow> rows;
  NeighborIndex index(train);
  for (double delta : deltas) {
    TrainConfig tc = base;
    tc.delta = delta;
    const EligibleMask train_masks = precompute_masks(index, train, delta);
    const EligibleMaskSource source(index, delta);
    const EligibleMask val_masks = masks_for_dataset(source, val);
    std::vector<Checkpoint> checkpoints =
        train_loop(tc, train, val, &train_masks, &val_masks, nullptr, nullptr);

    DeltaSweepRow row;
    row.delta = delta;
    const Checkpoint* chosen = nullptr;
    if (selection_mode == "final") {
      const Checkpoint& last = checkpoints.back();
      if (last.val_estimate && last.val_estimate->ess >= ess_threshold) chosen = &last;
    } else {
      chosen = select_checkpoint(checkpoints, ess_threshold);
    }
    if (!chosen) {
      rows.push_back(row);
      continue;
    }
    row.selected = true;
    const WeightTable train_w = policy_weights(chosen->params, &train_masks, train, tc.truncation);
    const Estimate train_est = sntis_value(train_w, train);
    row.train_value = train_est.value;
    row.train_ess = train_est.ess;
    if (env) {
      const MaskedPolicy policy{&chosen->params, &source};
      const McValue mc = mc_value(*env, policy.as_fn(), mc_rollouts, mc_seed);
      row.test_value = mc.mean;
      const EligibleMask test_masks = masks_for_dataset(source, test);
      const WeightTable test_w = policy_weights(chosen->params, &test_masks, test, tc.truncation);
      row.test_ess = ess(test_w);
    } else {
      const EligibleMask test_masks = masks_for_dataset(source, test);
      const WeightTable test_w = policy_weights(chosen->params, &test_masks, test, tc.truncation);
      const Estimate test_est = sntis_value(test_w, test);
      row.test_value = test_est.value;
      row.test_ess = test_est.ess;
    }
    rows.push_back(row);
  }
  return rows;
}

std::vector<DeltaSweepRow> delta_sweep_from_config(const ExperimentConfig& config,
                                                   std::span<const double> deltas) {
  const LearnerGridConfig* grid = nullptr;
  for (const auto& g : config.learners)
    if (g.tag == LearnerTag::Poela) {
      grid = &g;
      break;
    }
  if (!grid) throw ValidationError("delta sweep requires a poela learner in the config");

  Prepared prep = prepare(config, false, "", {});
  TrainConfig base;
  base.tag = LearnerTag::Poela;
  base.lambda = grid->lambda.empty() ? 0.0 : grid->lambda.front();
  base.truncation = grid->truncation;
  base.learning_rate = grid->learning_rate;
  base.max_steps = grid->max_steps;
  base.checkpoint_every = grid->checkpoint_every;
  base.arch = grid->arch;
  base.hidden = grid->hidden;
  base.seed = derive_seed(config.master_seed, kStreamCells);
  return delta_sweep(base, deltas, *prep.train, *prep.val, *prep.test, config.ess_threshold,
                     config.selection_mode, config.test_mode == "mc" ? prep.env.get() : nullptr,
                     config.mc_rollouts, derive_seed(config.master_seed, kStreamMc));
}

std::string delta_sweep_csv(const std::vector<DeltaSweepRow>& rows) {
  std::ostringstream os;
  os << "delta,selected,train_sntis,train_ess,test_value,test_ess\n";
  for (const auto& r : rows)
    os << r.delta << "," << (r.selected ? 1 : 0) << "," << r.train_value << "," << r.train_ess << ","
       << r.test_value << "," << r.test_ess << "\n";
  return os.str();
}

MaskComparison diagnose_masks(const Dataset& ds, double delta, const BehaviorEstimate& behavior,
                              double b) {
  NeighborIndex index(ds);
  MaskComparison cmp;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Trajectory& t = ds.traj(i);
    for (std::size_t h = 0; h < t.horizon(); ++h) {
      const std::vector<std::uint8_t> eligible = index.eligible_mask(t.contexts[h], delta);
      const std::vector<double> mu = behavior.probs(t.contexts[h]);
      std::size_t e_size = 0, t_size = 0, inter = 0, uni = 0;
      bool e_subset = true, t_subset = true;
      for (int a = 0; a < ds.action_count(); ++a) {
        const bool e = eligible[a] != 0;
        // Both rules as used in training: the logged action is always allowed.
        const bool th = mu[a] > b || a == t.actions[h];
        e_size += e;
        t_size += th;
        inter += e && th;
        uni += e || th;
        if (e && !th) t_subset = false;
        if (th && !e) e_subset = false;
      }
      ++cmp.samples;
      cmp.mean_eligible_size += static_cast<double>(e_size);
      cmp.mean_threshold_size += static_cast<double>(t_size);
      cmp.mean_jaccard += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
      if (e_subset && t_subset) ++cmp.equal_sets;
      else if (e_subset) ++cmp.eligible_strictly_smaller;
      else if (t_subset) ++cmp.threshold_strictly_smaller;
    }
  }
  if (cmp.samples > 0) {
    cmp.mean_eligible_size /= static_cast<double>(cmp.samples);
    cmp.mean_threshold_size /= static_cast<double>(cmp.samples);
    cmp.mean_jaccard /= static_cast<double>(cmp.samples);
  }
  return cmp;
}

}  // namespace poela
