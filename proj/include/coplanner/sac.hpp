#pragma once

#include <iosfwd>
#include <vector>

#include "coplanner/adam.hpp"
#include "coplanner/mlp.hpp"
#include "coplanner/rng.hpp"
#include "coplanner/types.hpp"

namespace coplanner {

// Squashed-Gaussian actor: obs -> (mean, log_std) per action dim, actions
// bound * tanh(.) so they stay strictly inside the box.
struct Actor {
  MlpSpec spec;
  Vector params;
  int act_dim = 0;
  double action_bound = 1.0;
};

// Twin Q networks with polyak-averaged target copies.
struct CriticPair {
  MlpSpec spec;  // (obs, action) -> scalar
  Vector q1, q2;
  Vector q1_target, q2_target;
};

// Entropy temperature, autotuned toward target entropy -act_dim.
struct Temperature {
  double log_alpha = 0.0;
  double target_entropy = -1.0;
  double alpha() const { return std::exp(log_alpha); }
};

struct PolicyConfig {
  std::vector<int> hidden = {64, 64};
  Activation activation = Activation::kRelu;
  double learning_rate = 3e-4;
  double tau = 0.005;
  double gamma = 0.99;
  int batch_size = 256;

  void validate() const;
};

struct Policy {
  Actor actor;
  CriticPair critics;
  Temperature temperature;
  PolicyConfig cfg;
  AdamState actor_opt, q1_opt, q2_opt, alpha_opt;

  static Policy init(int obs_dim, int act_dim, double action_bound,
                     const PolicyConfig& cfg, RngStream& rng);

  void save(std::ostream& out) const;
  static Policy load(std::istream& in);
};

// Stochastic: bound * tanh(mean + std * xi). Deterministic: bound * tanh(mean).
Vector act(const Actor& actor, const Vector& obs, RngStream& rng,
           bool deterministic = false);

// Tanh-corrected Gaussian log-density; the action must be strictly inside
// the box.
double log_prob(const Actor& actor, const Vector& obs, const Vector& action);

struct UpdateReport {
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double alpha_loss = 0.0;
  double alpha = 0.0;
  double entropy_estimate = 0.0;  // -mean log pi
  double mean_q = 0.0;
  double mean_critic_target = 0.0;
};

// One soft actor-critic step on the batch: critic regression toward
// r + gamma * (1 - done) * (min target Q - alpha * log pi), actor ascent on
// min Q - alpha * log pi, temperature step toward the entropy target, then
// polyak target update.
UpdateReport policy_update(Policy& policy,
                           const std::vector<Transition>& batch,
                           RngStream& rng);

}  // namespace coplanner
