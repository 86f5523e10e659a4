#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "coplanner/buffers.hpp"
#include "coplanner/config.hpp"
#include "coplanner/ensemble.hpp"
#include "coplanner/env.hpp"
#include "coplanner/metrics.hpp"
#include "coplanner/planner.hpp"
#include "coplanner/sac.hpp"

namespace coplanner {

// floor(min(max(x + (e - a) / (b - a) * (y - x), x), y)) for schedule
// [a, b, x, y] at epoch e.
int rollout_horizon(int epoch, const int schedule[4]);

struct EvalStats {
  double mean = 0.0;
  double stddev = 0.0;
  std::int64_t env_steps = 0;  // real steps consumed by the evaluation
};

// Runs full episodes with the given action function on fresh environment
// instances; per-episode resets come from split substreams of eval_rng.
EvalStats evaluate_policy(
    const EnvSpec& spec,
    const std::function<Vector(const Vector&, RngStream&)>& act_fn,
    int episodes, RngStream eval_rng);

struct DecisionRecord {
  std::int64_t step = 0;  // global env step at decision time
  enum class Phase { kEnv, kRollout } phase = Phase::kEnv;
  double alpha = 0.0;  // the signed alpha this mode maps to
  int candidates = 0;  // K used (0 during warmup)
  bool planner_engaged = false;
  Vector action;
};
using DecisionTraceFn = std::function<void(const DecisionRecord&)>;

struct RunResult {
  std::vector<MetricRecord> records;
  double final_eval_mean = 0.0;
  double final_eval_std = 0.0;
};

// One training run: optimistic environment interaction, periodic ensemble
// fits, conservative branched rollouts into D_m, G policy updates per env
// step, periodic evaluation. Fully deterministic given (config, seed); all
// randomness flows from purpose-labeled substreams of the root seed.
class Runner {
 public:
  Runner(RunConfig cfg, std::uint64_t seed);

  void set_metric_sink(MetricSink* sink) { sink_ = sink; }
  void set_decision_trace(DecisionTraceFn fn) { trace_ = std::move(fn); }
  void set_walltime_fn(std::function<double()> fn);

  // One env step plus the periodic model fit; returns true when the
  // ensemble was retrained at this step.
  bool environment_phase();
  // Branched conservative rollouts from D_e states into D_m; returns the
  // number of pushed model transitions.
  int rollout_phase();
  // G policy updates on mixed batches.
  std::vector<UpdateReport> policy_phase();
  // Deterministic raw-policy evaluation (planner optional behind the
  // config flag); records a MetricRecord.
  EvalStats evaluate();

  RunResult run();

  // decision stream for env step t; baseline-mode actions are bit-equal to
  // act(actor, obs, decision_stream(t))
  RngStream decision_stream(std::int64_t t) const;

  std::int64_t env_steps() const { return step_; }
  int epoch() const;
  const RealBuffer& real_buffer() const { return real_; }
  const ModelBuffer& model_buffer() const { return model_buf_; }
  const EnsembleModel& model() const { return model_; }
  EnsembleModel& mutable_model() { return model_; }
  const Policy& policy() const { return policy_; }
  Policy& mutable_policy() { return policy_; }
  const EnvSpec& env_spec() const { return spec_; }
  const std::optional<FitReport>& last_fit() const { return last_fit_; }
  const std::vector<MetricRecord>& records() const { return records_; }

  // instrumentation: every real env_step call the runner makes
  std::int64_t env_step_calls_train() const { return env_calls_train_; }
  std::int64_t env_step_calls_eval() const { return env_calls_eval_; }

  std::vector<Transition> holdout_transitions() const;

 private:
  struct PlanChoice {
    double alpha = 0.0;
    int candidates = 1;
  };
  PlanChoice env_plan_choice() const;
  PlanChoice rollout_plan_choice() const;
  PlanConfig make_plan_config(const PlanChoice& choice) const;
  TerminationFn termination_fn() const;
  Vector plan_action(const PlanChoice& choice, const Vector& obs,
                     RngStream rng, bool& engaged);
  void record_metrics(const EvalStats& stats);
  double uncertainty_scale() const;

  RunConfig cfg_;
  std::uint64_t seed_;
  EnvSpec spec_;
  EnvState env_state_;
  Policy policy_;
  EnsembleModel model_;
  RealBuffer real_;
  ModelBuffer model_buf_;
  std::optional<FitReport> last_fit_;

  RngStream root_, env_stream_, reset_stream_, warmup_stream_, fit_stream_,
      rollout_stream_, policy_stream_, eval_stream_;

  std::int64_t step_ = 0;
  std::int64_t episode_ = 0;
  std::int64_t fit_count_ = 0;
  std::int64_t rollout_count_ = 0;
  std::int64_t update_count_ = 0;
  std::int64_t eval_count_ = 0;
  std::int64_t env_calls_train_ = 0;
  std::int64_t env_calls_eval_ = 0;

  // running stats over pushed rollout disagreement, for the optional
  // uncertainty normalization
  std::int64_t u_count_ = 0;
  double u_mean_ = 0.0;
  double u_m2_ = 0.0;

  MetricSink* sink_ = nullptr;
  DecisionTraceFn trace_;
  std::function<double()> walltime_;
  std::vector<MetricRecord> records_;
};

RunResult run_training(const RunConfig& cfg, std::uint64_t seed,
                       MetricSink* sink = nullptr,
                       DecisionTraceFn trace = nullptr);

}  // namespace coplanner
