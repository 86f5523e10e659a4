#pragma once

#include <concepts>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "coplanner/ensemble.hpp"
#include "coplanner/rng.hpp"
#include "coplanner/sac.hpp"
#include "coplanner/types.hpp"

namespace coplanner {

struct PlannerStep {
  Vector next_obs;
  double reward = 0.0;
  int member = -1;
};

// The planner is generic over anything that can sample actions and simulate
// steps; the production adapters below wrap the SAC actor and the ensemble.
template <typename P>
concept PlannerPolicy =
    requires(const P& p, const Vector& s, RngStream& rng) {
      { p.sample_action(s, rng) } -> std::convertible_to<Vector>;
    };

template <typename M>
concept PlannerModel =
    requires(const M& m, const Vector& s, const Vector& a, RngStream& rng) {
      { m.sample_step(s, a, rng) } -> std::convertible_to<PlannerStep>;
      { m.disagreement_at(s, a) } -> std::convertible_to<double>;
    };

struct ActorAdapter {
  const Actor& actor;
  Vector sample_action(const Vector& s, RngStream& rng) const {
    return act(actor, s, rng, /*deterministic=*/false);
  }
};

struct EnsembleAdapter {
  const EnsembleModel& model;
  PlannerStep sample_step(const Vector& s, const Vector& a,
                          RngStream& rng) const {
    const SampleResult r = sample_next(model, s, a, rng);
    return {r.next_obs, r.reward, r.member};
  }
  double disagreement_at(const Vector& s, const Vector& a) const {
    return disagreement(model, s, a);
  }
};

using TerminationFn = std::function<bool(const Vector&)>;

struct PlanConfig {
  int candidates = 5;    // K
  int horizon = 5;       // H_p
  double alpha = 0.0;    // signed: +alpha_o optimistic, -alpha_c conservative
  bool terminate_on_done = true;
  // When set, the uncertainty sum starts at the second planning step
  // instead of the first.
  bool skip_first_uncertainty = false;
  // Divides every accumulated uncertainty term; 1 disables normalization.
  double uncertainty_scale = 1.0;

  void validate() const {
    if (candidates < 1 || horizon < 1) {
      throw std::invalid_argument("plan config: K and H_p must be >= 1");
    }
    if (!(uncertainty_scale > 0.0)) {
      throw std::invalid_argument(
          "plan config: uncertainty_scale must be positive");
    }
  }
};

struct CandidateScore {
  int index = 0;
  double reward_sum = 0.0;
  double uncertainty_sum = 0.0;  // already divided by uncertainty_scale
  double total = 0.0;            // reward_sum + alpha * uncertainty_sum
  Vector first_action;
  int steps = 0;
};

// Candidate RNG contract: candidate 0 consumes the decision stream itself;
// candidate k > 0 uses split(k). Within a candidate, each planning step
// draws the action first, then the model sample. Candidate streams never
// depend on K, so adding candidates cannot perturb earlier ones.
template <PlannerPolicy P, PlannerModel M>
std::vector<CandidateScore> score_candidates(
    const P& policy, const Vector& s, const M& model, const PlanConfig& cfg,
    RngStream rng, const TerminationFn& termination = nullptr) {
  cfg.validate();
  std::vector<CandidateScore> scores;
  scores.reserve(cfg.candidates);
  for (int k = 0; k < cfg.candidates; ++k) {
    RngStream stream =
        k == 0 ? rng : rng.split(static_cast<std::uint64_t>(k));
    CandidateScore score;
    score.index = k;
    Vector state = s;
    try {
      for (int t = 0; t < cfg.horizon; ++t) {
        const Vector a = policy.sample_action(state, stream);
        if (t == 0) score.first_action = a;
        const PlannerStep step = model.sample_step(state, a, stream);
        if (!(cfg.skip_first_uncertainty && t == 0)) {
          score.uncertainty_sum +=
              model.disagreement_at(state, a) / cfg.uncertainty_scale;
        }
        score.reward_sum += step.reward;
        score.steps += 1;
        if (cfg.terminate_on_done && termination && termination(step.next_obs)) {
          break;
        }
        state = step.next_obs;
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("planner candidate " + std::to_string(k) +
                               ": " + e.what());
    }
    score.total = score.reward_sum + cfg.alpha * score.uncertainty_sum;
    scores.push_back(std::move(score));
  }
  return scores;
}

// Algorithm: sample K policy-guided candidates, roll each H_p steps under
// the model accumulating undiscounted reward plus alpha-weighted
// disagreement, return the first action of the argmax candidate (ties to
// the lowest index). K = 1 collapses to a bare policy draw and touches
// neither the model nor its uncertainty.
template <PlannerPolicy P, PlannerModel M>
Vector up_mpc(const P& policy, const Vector& s, const M& model,
              const PlanConfig& cfg, RngStream rng,
              const TerminationFn& termination = nullptr,
              std::vector<CandidateScore>* trace = nullptr) {
  cfg.validate();
  if (cfg.candidates == 1) {
    if (trace) trace->clear();
    return policy.sample_action(s, rng);
  }
  std::vector<CandidateScore> scores =
      score_candidates(policy, s, model, cfg, rng, termination);
  int best = 0;
  for (int k = 1; k < static_cast<int>(scores.size()); ++k) {
    if (scores[k].total > scores[best].total) best = k;
  }
  Vector action = scores[best].first_action;
  if (trace) *trace = std::move(scores);
  return action;
}

// Uncertainty as a penalty (model rollouts).
template <PlannerPolicy P, PlannerModel M>
Vector conservative_action(const P& policy, const Vector& s, const M& model,
                           PlanConfig cfg, double alpha_c, RngStream rng,
                           const TerminationFn& termination = nullptr,
                           std::vector<CandidateScore>* trace = nullptr) {
  if (!(alpha_c > 0.0)) {
    throw std::invalid_argument("conservative rate must be positive");
  }
  cfg.alpha = -alpha_c;
  return up_mpc(policy, s, model, cfg, rng, termination, trace);
}

// Uncertainty as a bonus (environment exploration).
template <PlannerPolicy P, PlannerModel M>
Vector optimistic_action(const P& policy, const Vector& s, const M& model,
                         PlanConfig cfg, double alpha_o, RngStream rng,
                         const TerminationFn& termination = nullptr,
                         std::vector<CandidateScore>* trace = nullptr) {
  if (!(alpha_o > 0.0)) {
    throw std::invalid_argument("optimistic rate must be positive");
  }
  cfg.alpha = alpha_o;
  return up_mpc(policy, s, model, cfg, rng, termination, trace);
}

}  // namespace coplanner
