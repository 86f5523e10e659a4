#pragma once

#include <string>

#include "coplanner/rng.hpp"
#include "coplanner/types.hpp"

namespace coplanner {

enum class EnvName { kPendulum, kPointMaze, kCliffCar };

// Dynamics constants are fixed, not configurable, so hand oracles stay valid.
struct EnvSpec {
  EnvName name = EnvName::kPendulum;
  int obs_dim = 0;
  int act_dim = 0;
  double action_bound = 1.0;  // symmetric box per dimension
  int max_episode_steps = 0;
  double dt = 0.0;

  static EnvSpec make(EnvName name);
  static EnvSpec from_name(const std::string& name);
  std::string name_string() const;
};

struct EnvState {
  Vector internal;  // environment-specific state vector
  int step_count = 0;
};

struct StepResult {
  EnvState state;
  Transition transition;
};

EnvState env_reset(const EnvSpec& spec, RngStream& rng);

Vector env_observe(const EnvSpec& spec, const EnvState& state);

// Deterministic given (state, action); the action is clipped to the box
// before integration. Non-finite actions are rejected.
StepResult env_step(const EnvSpec& spec, const EnvState& state,
                    const Vector& action);

// Closed-form reward on observations, identical to the one used inside
// env_step. Model rollouts and oracles call this directly.
double env_true_reward(const EnvSpec& spec, const Vector& obs,
                       const Vector& action, const Vector& next_obs);

// Termination predicate on the next observation (horizon excluded).
bool env_termination(const EnvSpec& spec, const Vector& next_obs);

// Wrap an angle into (-pi, pi].
double wrap_angle(double theta);

}  // namespace coplanner
