#pragma once

#include <cstdint>
#include <stdexcept>

#include "coplanner/types.hpp"

namespace coplanner {

struct AdamState {
  Vector m;
  Vector v;
  std::int64_t t = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState make(Eigen::Index n, double lr) {
    AdamState s;
    s.m = Vector::Zero(n);
    s.v = Vector::Zero(n);
    s.lr = lr;
    return s;
  }
};

// Standard Adam with bias correction, in place.
inline void adam_step(AdamState& state, Vector& params, const Vector& grads) {
  if (params.size() != state.m.size() || grads.size() != state.m.size()) {
    throw std::invalid_argument("adam_step: shape mismatch");
  }
  state.t += 1;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads;
  state.v.array() = state.beta2 * state.v.array() +
                    (1.0 - state.beta2) * grads.array().square();
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  params.array() -= state.lr * (state.m.array() / bc1) /
                    ((state.v.array() / bc2).sqrt() + state.eps);
}

}  // namespace coplanner
