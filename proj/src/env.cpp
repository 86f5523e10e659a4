#include "coplanner/env.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace coplanner {

namespace {

constexpr double kPi = std::numbers::pi;

// pendulum constants
constexpr double kGravity = 10.0;
constexpr double kMass = 1.0;
constexpr double kLength = 1.0;
constexpr double kPendulumDt = 0.05;
constexpr double kMaxTorque = 2.0;
constexpr double kMaxSpeed = 8.0;

// pointmaze constants
constexpr double kWallX = 0.5;
constexpr double kWallTop = 0.8;
constexpr double kStandoff = 1e-6;
constexpr double kGoalX = 0.9, kGoalY = 0.1;
constexpr double kDecoyX = 0.4, kDecoyY = 0.9;

// cliffcar constants
constexpr double kCliffEdge = 1.0;
constexpr double kCliffPenalty = -10.0;
constexpr double kMaxVel = 0.5;

double clip(double v, double lo, double hi) {
  return std::min(std::max(v, lo), hi);
}

Vector clip_action(const EnvSpec& spec, const Vector& action) {
  if (action.size() != spec.act_dim) {
    throw std::invalid_argument("env_step: action dimension mismatch");
  }
  if (!action.allFinite()) {
    throw std::invalid_argument("env_step: non-finite action rejected");
  }
  return action.cwiseMax(-spec.action_bound).cwiseMin(spec.action_bound);
}

}  // namespace

double wrap_angle(double theta) {
  double w = std::fmod(theta + kPi, 2.0 * kPi);
  if (w <= 0.0) w += 2.0 * kPi;
  return w - kPi;
}

EnvSpec EnvSpec::make(EnvName name) {
  EnvSpec s;
  s.name = name;
  switch (name) {
    case EnvName::kPendulum:
      s.obs_dim = 3;
      s.act_dim = 1;
      s.action_bound = kMaxTorque;
      s.max_episode_steps = 200;
      s.dt = kPendulumDt;
      break;
    case EnvName::kPointMaze:
      s.obs_dim = 2;
      s.act_dim = 2;
      s.action_bound = 0.1;
      s.max_episode_steps = 100;
      break;
    case EnvName::kCliffCar:
      s.obs_dim = 2;
      s.act_dim = 1;
      s.action_bound = 1.0;
      s.max_episode_steps = 100;
      break;
  }
  return s;
}

EnvSpec EnvSpec::from_name(const std::string& name) {
  if (name == "pendulum") return make(EnvName::kPendulum);
  if (name == "pointmaze") return make(EnvName::kPointMaze);
  if (name == "cliffcar") return make(EnvName::kCliffCar);
  throw std::invalid_argument("unknown environment: " + name);
}

std::string EnvSpec::name_string() const {
  switch (name) {
    case EnvName::kPendulum: return "pendulum";
    case EnvName::kPointMaze: return "pointmaze";
    case EnvName::kCliffCar: return "cliffcar";
  }
  return "?";
}

EnvState env_reset(const EnvSpec& spec, RngStream& rng) {
  EnvState st;
  st.step_count = 0;
  switch (spec.name) {
    case EnvName::kPendulum:
      st.internal = Vector(2);
      st.internal[0] = rng.uniform(-kPi, kPi);
      st.internal[1] = rng.uniform(-1.0, 1.0);
      break;
    case EnvName::kPointMaze:
      st.internal = Vector(2);
      st.internal << 0.1, 0.1;
      break;
    case EnvName::kCliffCar:
      st.internal = Vector::Zero(2);
      break;
  }
  return st;
}

Vector env_observe(const EnvSpec& spec, const EnvState& state) {
  if (spec.name == EnvName::kPendulum) {
    Vector obs(3);
    obs << std::cos(state.internal[0]), std::sin(state.internal[0]),
        state.internal[1];
    return obs;
  }
  return state.internal;
}

double env_true_reward(const EnvSpec& spec, const Vector& obs,
                       const Vector& action, const Vector& next_obs) {
  switch (spec.name) {
    case EnvName::kPendulum: {
      const double theta = std::atan2(obs[1], obs[0]);
      const double theta_dot = obs[2];
      const double u = clip(action[0], -kMaxTorque, kMaxTorque);
      return -(theta * theta + 0.1 * theta_dot * theta_dot + 0.001 * u * u);
    }
    case EnvName::kPointMaze: {
      const double dg = std::hypot(next_obs[0] - kGoalX, next_obs[1] - kGoalY);
      const double dd =
          std::hypot(next_obs[0] - kDecoyX, next_obs[1] - kDecoyY);
      return std::exp(-10.0 * dg) + 0.1 * std::exp(-10.0 * dd);
    }
    case EnvName::kCliffCar: {
      double r = next_obs[0];
      if (next_obs[0] > kCliffEdge) r += kCliffPenalty;
      return r;
    }
  }
  return 0.0;
}

bool env_termination(const EnvSpec& spec, const Vector& next_obs) {
  if (spec.name == EnvName::kCliffCar) return next_obs[0] > kCliffEdge;
  return false;
}

StepResult env_step(const EnvSpec& spec, const EnvState& state,
                    const Vector& action) {
  const Vector a = clip_action(spec, action);
  EnvState next = state;
  next.step_count = state.step_count + 1;

  switch (spec.name) {
    case EnvName::kPendulum: {
      const double theta = state.internal[0];
      const double theta_dot = state.internal[1];
      const double u = a[0];
      const double accel = 3.0 * kGravity / (2.0 * kLength) * std::sin(theta) +
                           3.0 / (kMass * kLength * kLength) * u;
      // semi-implicit Euler: velocity first, then angle with the new velocity
      const double new_dot =
          clip(theta_dot + accel * kPendulumDt, -kMaxSpeed, kMaxSpeed);
      next.internal[0] = theta + new_dot * kPendulumDt;
      next.internal[1] = new_dot;
      break;
    }
    case EnvName::kPointMaze: {
      const double x0 = state.internal[0];
      const double y0 = state.internal[1];
      // box clamp first, then wall-test the clamped motion segment; a single
      // step is too short to touch both the box edge and the wall in x
      double x1 = clip(x0 + a[0], 0.0, 1.0);
      double y1 = clip(y0 + a[1], 0.0, 1.0);
      // the wall blocks any motion segment hitting x = kWallX, y in [0, top]
      const double d0 = x0 - kWallX;
      const double d1 = x1 - kWallX;
      if (d0 != 0.0 && ((d0 < 0.0) != (d1 < 0.0) || d1 == 0.0)) {
        const double t = d0 / (d0 - d1);
        const double y_hit = y0 + t * (y1 - y0);
        if (y_hit >= 0.0 && y_hit <= kWallTop) {
          x1 = d0 < 0.0 ? kWallX - kStandoff : kWallX + kStandoff;
          y1 = y_hit;
        }
      }
      next.internal[0] = x1;
      next.internal[1] = y1;
      break;
    }
    case EnvName::kCliffCar: {
      const double v = clip(state.internal[1] + 0.05 * a[0], -kMaxVel, kMaxVel);
      next.internal[0] = state.internal[0] + v * 0.1;
      next.internal[1] = v;
      break;
    }
  }

  StepResult result;
  result.transition.obs = env_observe(spec, state);
  result.transition.action = a;
  result.transition.next_obs = env_observe(spec, next);
  result.transition.reward = env_true_reward(
      spec, result.transition.obs, a, result.transition.next_obs);
  result.transition.done = env_termination(spec, result.transition.next_obs);
  result.transition.truncated =
      !result.transition.done && next.step_count >= spec.max_episode_steps;
  result.state = std::move(next);
  return result;
}

}  // namespace coplanner
