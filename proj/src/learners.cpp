#include "poela/learners.hpp"

#include <cmath>

namespace poela {

std::string to_string(LearnerTag tag) {
  switch (tag) {
    case LearnerTag::Poela: return "poela";
    case LearnerTag::PoCrm: return "pocrm";
    case LearnerTag::PoMu: return "pomu";
  }
  return "?";
}

LearnerTag learner_tag_from_string(const std::string& s) {
  if (s == "poela") return LearnerTag::Poela;
  if (s == "pocrm" || s == "po-crm") return LearnerTag::PoCrm;
  if (s == "pomu" || s == "po-mu") return LearnerTag::PoMu;
  throw ValidationError("unknown learner tag: " + s);
}

void TrainConfig::validate() const {
  if (tag == LearnerTag::Poela && delta < 0.0) throw ValidationError("poela requires delta >= 0");
  if (tag == LearnerTag::PoMu && mu_threshold < 0.0)
    throw ValidationError("pomu requires a nonnegative behavior threshold");
  if (lambda < 0.0) throw ValidationError("lambda must be nonnegative");
  if (!(truncation > 0.0)) throw ValidationError("truncation must be positive");
  if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
  if (max_steps == 0) throw ValidationError("max_steps must be positive");
  if (checkpoint_every == 0) throw ValidationError("checkpoint_every must be positive");
  if (arch == PolicyArch::MlpSoftmax && hidden == 0) throw ValidationError("hidden width must be positive");
}

namespace {

std::optional<Estimate> validation_estimate(const PolicyParams& params, const Dataset& val,
                                            const EligibleMask* val_masks, double truncation,
                                            const std::vector<std::vector<double>>* val_mu) {
  if (val.size() == 0) return std::nullopt;
  try {
    const WeightTable w = policy_weights(params, val_masks, val, truncation, val_mu);
    return sntis_value(w, val);
  } catch (const NoOverlapError&) {
    return std::nullopt;
  }
}

}  // namespace

std::vector<Checkpoint> train_loop(const TrainConfig& config, const Dataset& train,
                                   const Dataset& val, const EligibleMask* train_masks,
                                   const EligibleMask* val_masks,
                                   const std::vector<std::vector<double>>* train_mu,
                                   const std::vector<std::vector<double>>* val_mu) {
  config.validate();
  if (train.size() == 0) throw ValidationError("empty training set");

  // Re-initialize on a zero-weight start, then give up.
  PolicyParams params;
  bool ok = false;
  for (std::uint64_t attempt = 0; attempt < 5 && !ok; ++attempt) {
    params = init_policy(config.arch, train.feature_dim(), train.action_count(), config.hidden,
                         attempt == 0 ? config.seed : derive_seed(config.seed, attempt));
    try {
      objective_value(params, train, train_masks, config.truncation, config.lambda, train_mu);
      ok = true;
    } catch (const NoOverlapError&) {
    }
  }
  if (!ok) throw NoOverlapError("no overlap at initialization after 5 restarts");

  std::vector<Checkpoint> checkpoints;
  for (std::size_t t = 1; t <= config.max_steps; ++t) {
    const ObjectiveResult step = objective_gradient(params, train, train_masks, config.truncation,
                                                    config.lambda, train_mu);
    if (!std::isfinite(step.objective))
      throw std::runtime_error("objective became non-finite at step " + std::to_string(t));
    for (std::size_t j = 0; j < params.values.size(); ++j)
      params.values[j] += config.learning_rate * step.gradient[j];

    if (t % config.checkpoint_every == 0 || t == config.max_steps) {
      Checkpoint ckpt;
      ckpt.params = params;
      ckpt.step = t;
      ckpt.train_objective = objective_value(params, train, train_masks, config.truncation,
                                             config.lambda, train_mu)
                                 .objective;
      if (!std::isfinite(ckpt.train_objective))
        throw std::runtime_error("objective became non-finite at step " + std::to_string(t));
      ckpt.val_estimate = validation_estimate(params, val, val_masks, config.truncation, val_mu);
      checkpoints.push_back(std::move(ckpt));
    }
  }
  return checkpoints;
}

std::vector<Checkpoint> train_poela(const TrainConfig& config, const Dataset& train, const Dataset& val) {
  if (config.tag != LearnerTag::Poela) throw ValidationError("config is not tagged poela");
  NeighborIndex index(train);
  const EligibleMask train_masks = precompute_masks(index, train, config.delta);
  const EligibleMaskSource source(index, config.delta);
  const EligibleMask val_masks =
      val.size() > 0 ? masks_for_dataset(source, val) : EligibleMask{};
  return train_loop(config, train, val, &train_masks, val.size() > 0 ? &val_masks : nullptr);
}

std::vector<Checkpoint> train_pocrm(const TrainConfig& config, const Dataset& train, const Dataset& val,
                                    const BehaviorEstimate* behavior, double overlap_floor) {
  if (config.tag != LearnerTag::PoCrm) throw ValidationError("config is not tagged pocrm");
  if (!behavior) return train_loop(config, train, val, nullptr, nullptr);
  const EligibleMask train_masks = overlap_mask(*behavior, train, overlap_floor);
  const BehaviorMaskSource source(*behavior, overlap_floor);
  const EligibleMask val_masks =
      val.size() > 0 ? masks_for_dataset(source, val) : EligibleMask{};
  return train_loop(config, train, val, &train_masks, val.size() > 0 ? &val_masks : nullptr);
}

std::vector<Checkpoint> train_pomu(const TrainConfig& config, const Dataset& train, const Dataset& val,
                                   const BehaviorEstimate& behavior) {
  if (config.tag != LearnerTag::PoMu) throw ValidationError("config is not tagged pomu");
  const EligibleMask train_masks = overlap_mask(behavior, train, config.mu_threshold);
  const BehaviorMaskSource source(behavior, config.mu_threshold);
  const EligibleMask val_masks =
      val.size() > 0 ? masks_for_dataset(source, val) : EligibleMask{};
  return train_loop(config, train, val, &train_masks, val.size() > 0 ? &val_masks : nullptr);
}

const Checkpoint* select_checkpoint(const std::vector<Checkpoint>& checkpoints, double ess_threshold) {
  if (checkpoints.empty()) throw ValidationError("no checkpoints to select from");
  const Checkpoint* best = nullptr;
  for (const Checkpoint& c : checkpoints) {
    if (!c.val_estimate || c.val_estimate->ess < ess_threshold) continue;
    if (!best || c.val_estimate->value > best->val_estimate->value) best = &c;
  }
  return best;
}

}  // namespace poela
