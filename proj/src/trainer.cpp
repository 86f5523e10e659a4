#include "coplanner/trainer.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>

namespace coplanner {

int rollout_horizon(int epoch, const int schedule[4]) {
  const double a = schedule[0], b = schedule[1];
  const double x = schedule[2], y = schedule[3];
  const double ramp = x + (epoch - a) / (b - a) * (y - x);
  return static_cast<int>(std::floor(std::min(std::max(ramp, x), y)));
}

EvalStats evaluate_policy(
    const EnvSpec& spec,
    const std::function<Vector(const Vector&, RngStream&)>& act_fn,
    int episodes, RngStream eval_rng) {
  EvalStats stats;
  std::vector<double> returns;
  returns.reserve(episodes);
  for (int e = 0; e < episodes; ++e) {
    RngStream episode_rng = eval_rng.split(static_cast<std::uint64_t>(e));
    EnvState state = env_reset(spec, episode_rng);
    double ep_return = 0.0;
    for (int h = 0; h < spec.max_episode_steps; ++h) {
      RngStream step_rng = episode_rng.split(static_cast<std::uint64_t>(h));
      const Vector obs = env_observe(spec, state);
      const Vector action = act_fn(obs, step_rng);
      StepResult r = env_step(spec, state, action);
      ep_return += r.transition.reward;
      stats.env_steps += 1;
      state = std::move(r.state);
      if (r.transition.done) break;
    }
    returns.push_back(ep_return);
  }
  double sum = 0.0;
  for (double r : returns) sum += r;
  stats.mean = sum / static_cast<double>(returns.size());
  double ss = 0.0;
  for (double r : returns) ss += (r - stats.mean) * (r - stats.mean);
  stats.stddev = std::sqrt(ss / static_cast<double>(returns.size()));
  return stats;
}

Runner::Runner(RunConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)),
      seed_(seed),
      spec_(EnvSpec::from_name(cfg_.env)),
      model_buf_(static_cast<std::size_t>(cfg_.trainer.model_buffer_capacity)) {
  root_ = RngStream(seed_);
  env_stream_ = root_.split("env");
  reset_stream_ = root_.split("reset");
  warmup_stream_ = root_.split("warmup");
  fit_stream_ = root_.split("model_fit");
  rollout_stream_ = root_.split("rollout");
  policy_stream_ = root_.split("policy");
  eval_stream_ = root_.split("eval");

  RngStream model_rng = root_.split("model_init");
  model_ = EnsembleModel::init(spec_.obs_dim, spec_.act_dim, cfg_.model,
                               model_rng);
  RngStream policy_rng = root_.split("policy_init");
  policy_ = Policy::init(spec_.obs_dim, spec_.act_dim, spec_.action_bound,
                         cfg_.policy, policy_rng);
  RngStream first_reset = reset_stream_.split(std::uint64_t{0});
  env_state_ = env_reset(spec_, first_reset);

  const auto start = std::chrono::steady_clock::now();
  walltime_ = [start]() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start)
        .count();
  };
}

void Runner::set_walltime_fn(std::function<double()> fn) {
  walltime_ = std::move(fn);
}

int Runner::epoch() const {
  return static_cast<int>(step_ / cfg_.trainer.steps_per_epoch) + 1;
}

RngStream Runner::decision_stream(std::int64_t t) const {
  return env_stream_.split(static_cast<std::uint64_t>(t));
}

Runner::PlanChoice Runner::env_plan_choice() const {
  switch (cfg_.trainer.mode) {
    case Mode::kFull:
    case Mode::kExploreOnly:
      return {cfg_.planner.alpha_o, cfg_.planner.candidates};
    case Mode::kRolloutOnly:
      return {0.0, cfg_.planner.candidates};
    case Mode::kBaseline:
      return {0.0, 1};
  }
  return {0.0, 1};
}

Runner::PlanChoice Runner::rollout_plan_choice() const {
  switch (cfg_.trainer.mode) {
    case Mode::kFull:
    case Mode::kRolloutOnly:
      return {-cfg_.planner.alpha_c, cfg_.planner.candidates};
    case Mode::kExploreOnly:
      return {0.0, cfg_.planner.candidates};
    case Mode::kBaseline:
      return {0.0, 1};
  }
  return {0.0, 1};
}

double Runner::uncertainty_scale() const {
  if (!cfg_.planner.normalize_uncertainty || u_count_ < 100) return 1.0;
  const double var = u_m2_ / static_cast<double>(u_count_);
  return std::max(std::sqrt(var), 1e-8);
}

PlanConfig Runner::make_plan_config(const PlanChoice& choice) const {
  PlanConfig pc;
  pc.candidates = choice.candidates;
  pc.horizon = cfg_.planner.horizon;
  pc.alpha = choice.alpha;
  pc.terminate_on_done = cfg_.planner.terminate_on_done;
  pc.skip_first_uncertainty = cfg_.planner.skip_first_uncertainty;
  pc.uncertainty_scale = uncertainty_scale();
  return pc;
}

TerminationFn Runner::termination_fn() const {
  const EnvSpec spec = spec_;
  return [spec](const Vector& obs) { return env_termination(spec, obs); };
}

Vector Runner::plan_action(const PlanChoice& choice, const Vector& obs,
                           RngStream rng, bool& engaged) {
  // K = 1 and the pre-fit fallback both reduce to a bare policy draw that
  // consumes the decision stream directly.
  if (choice.candidates == 1 || !model_.fitted) {
    engaged = false;
    return act(policy_.actor, obs, rng, /*deterministic=*/false);
  }
  engaged = true;
  return up_mpc(ActorAdapter{policy_.actor}, obs, EnsembleAdapter{model_},
                make_plan_config(choice), rng, termination_fn());
}

bool Runner::environment_phase() {
  const std::int64_t t = step_;
  const Vector obs = env_observe(spec_, env_state_);
  Vector action;
  DecisionRecord rec;
  rec.step = t;
  rec.phase = DecisionRecord::Phase::kEnv;
  if (t < cfg_.trainer.warmup_steps) {
    RngStream wrng = warmup_stream_.split(static_cast<std::uint64_t>(t));
    action = Vector(spec_.act_dim);
    for (int i = 0; i < spec_.act_dim; ++i) {
      action[i] = wrng.uniform(-spec_.action_bound, spec_.action_bound);
    }
    rec.alpha = 0.0;
    rec.candidates = 0;
    rec.planner_engaged = false;
  } else {
    const PlanChoice choice = env_plan_choice();
    rec.alpha = choice.alpha;
    rec.candidates = choice.candidates;
    action = plan_action(choice, obs, decision_stream(t), rec.planner_engaged);
  }
  rec.action = action;
  if (trace_) trace_(rec);

  StepResult result = env_step(spec_, env_state_, action);
  ++env_calls_train_;
  real_.push(result.transition);
  env_state_ = std::move(result.state);
  ++step_;
  if (result.transition.done || result.transition.truncated) {
    ++episode_;
    RngStream rrng = reset_stream_.split(static_cast<std::uint64_t>(episode_));
    env_state_ = env_reset(spec_, rrng);
  }

  if (step_ % cfg_.model.train_interval == 0) {
    RngStream frng = fit_stream_.split(static_cast<std::uint64_t>(fit_count_));
    ++fit_count_;
    FitReport report = train_ensemble(model_, real_, cfg_.model, frng);
    if (!report.skipped) {
      last_fit_ = std::move(report);
      return true;
    }
  }
  return false;
}

int Runner::rollout_phase() {
  if (!model_.fitted) {
    throw std::runtime_error("rollout_phase: model has not been fitted");
  }
  if (real_.empty()) {
    throw std::runtime_error("rollout_phase: real buffer is empty");
  }
  const int horizon = rollout_horizon(epoch(), cfg_.trainer.rollout_schedule);
  const PlanChoice choice = rollout_plan_choice();
  RngStream phase_rng =
      rollout_stream_.split(static_cast<std::uint64_t>(rollout_count_));
  ++rollout_count_;
  int pushed = 0;
  for (int m = 0; m < cfg_.trainer.rollout_batch; ++m) {
    try {
      RngStream branch = phase_rng.split(static_cast<std::uint64_t>(m));
      Vector state = real_.at(branch.next_below(real_.size())).obs;
      for (int h = 0; h < horizon; ++h) {
        RngStream step_rng = branch.split(static_cast<std::uint64_t>(h));
        bool engaged = false;
        Vector action = plan_action(choice, state, step_rng, engaged);
        if (trace_) {
          DecisionRecord rec;
          rec.step = step_;
          rec.phase = DecisionRecord::Phase::kRollout;
          rec.alpha = choice.alpha;
          rec.candidates = choice.candidates;
          rec.planner_engaged = engaged;
          rec.action = action;
          trace_(rec);
        }
        RngStream exec_rng = step_rng.split("exec");
        const SampleResult sample =
            sample_next(model_, state, action, exec_rng);
        const double u = model_.elites.size() >= 2
                             ? disagreement(model_, state, action)
                             : 0.0;
        const double reward =
            cfg_.trainer.ground_truth_rollout_reward
                ? env_true_reward(spec_, state, action, sample.next_obs)
                : sample.reward;
        const bool done = env_termination(spec_, sample.next_obs);
        ModelTransition mt;
        mt.t.obs = state;
        mt.t.action = action;
        mt.t.reward = reward;
        mt.t.next_obs = sample.next_obs;
        mt.t.done = done;
        mt.member = sample.member;
        mt.disagreement = u;
        model_buf_.push(std::move(mt));
        ++pushed;
        ++u_count_;
        const double delta = u - u_mean_;
        u_mean_ += delta / static_cast<double>(u_count_);
        u_m2_ += delta * (u - u_mean_);
        if (done) break;
        state = sample.next_obs;
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("rollout branch " + std::to_string(m) + ": " +
                               e.what());
    }
  }
  return pushed;
}

std::vector<UpdateReport> Runner::policy_phase() {
  std::vector<UpdateReport> reports;
  for (int g = 0; g < cfg_.trainer.updates_per_step; ++g) {
    RngStream urng =
        policy_stream_.split(static_cast<std::uint64_t>(update_count_));
    ++update_count_;
    std::vector<Transition> batch =
        sample_mixed(real_, model_buf_, cfg_.policy.batch_size,
                     cfg_.trainer.real_ratio, urng);
    reports.push_back(policy_update(policy_, batch, urng));
  }
  return reports;
}

std::vector<Transition> Runner::holdout_transitions() const {
  std::vector<Transition> out;
  if (!last_fit_) return out;
  out.reserve(last_fit_->holdout_indices.size());
  for (std::size_t idx : last_fit_->holdout_indices) {
    out.push_back(real_.at(idx));
  }
  return out;
}

void Runner::record_metrics(const EvalStats& stats) {
  MetricRecord rec;
  rec.env_steps = step_;
  rec.eval_return_mean = stats.mean;
  rec.eval_return_std = stats.stddev;
  if (model_.fitted && last_fit_ && !last_fit_->holdout_indices.empty()) {
    rec.model_holdout_mse = model_prediction_error(model_,
                                                   holdout_transitions());
  }
  if (model_.fitted && !model_buf_.empty() && model_.elites.size() >= 2) {
    rec.rollout_uncertainty = rollout_uncertainty_metric(model_, model_buf_);
  }
  rec.wall_seconds = cfg_.metrics.record_walltime ? walltime_() : 0.0;
  rec.mode = mode_to_string(cfg_.trainer.mode);
  rec.seed = static_cast<std::int64_t>(seed_);
  records_.push_back(rec);
  if (sink_) sink_->write(rec);
}

EvalStats Runner::evaluate() {
  RngStream erng = eval_stream_.split(static_cast<std::uint64_t>(eval_count_));
  ++eval_count_;
  std::function<Vector(const Vector&, RngStream&)> act_fn;
  if (cfg_.trainer.planner_at_eval && model_.fitted &&
      cfg_.planner.candidates > 1) {
    PlanConfig pc = make_plan_config({0.0, cfg_.planner.candidates});
    act_fn = [this, pc](const Vector& obs, RngStream& rng) {
      return up_mpc(ActorAdapter{policy_.actor}, obs, EnsembleAdapter{model_},
                    pc, rng, termination_fn());
    };
  } else {
    act_fn = [this](const Vector& obs, RngStream& rng) {
      return act(policy_.actor, obs, rng, /*deterministic=*/true);
    };
  }
  const EvalStats stats =
      evaluate_policy(spec_, act_fn, cfg_.trainer.eval_episodes, erng);
  env_calls_eval_ += stats.env_steps;
  record_metrics(stats);
  return stats;
}

RunResult Runner::run() {
  while (step_ < cfg_.trainer.total_steps) {
    const bool fitted_now = environment_phase();
    if (fitted_now) rollout_phase();
    const bool need_real = cfg_.trainer.real_ratio > 0.0;
    const bool need_model = cfg_.trainer.real_ratio < 1.0;
    const bool can_update = cfg_.trainer.updates_per_step > 0 &&
                            (!need_real || !real_.empty()) &&
                            (!need_model || !model_buf_.empty());
    if (can_update) policy_phase();
    if (step_ % cfg_.trainer.eval_interval == 0) evaluate();
  }
  const EvalStats final_stats = evaluate();
  RunResult result;
  result.records = records_;
  result.final_eval_mean = final_stats.mean;
  result.final_eval_std = final_stats.stddev;
  return result;
}

RunResult run_training(const RunConfig& cfg, std::uint64_t seed,
                       MetricSink* sink, DecisionTraceFn trace) {
  Runner runner(cfg, seed);
  runner.set_metric_sink(sink);
  if (trace) runner.set_decision_trace(std::move(trace));
  return runner.run();
}

}  // namespace coplanner
