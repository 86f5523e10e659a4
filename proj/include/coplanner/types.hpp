#pragma once

#include <Eigen/Dense>

namespace coplanner {

// 64-bit floats throughout; the whole lab is desk scale.
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
// Parameter blobs use the canonical flat layout (per layer: row-major
// weights, then biases), so checkpoints and finite-difference probes agree.
using RowMajorMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// One environment (or model-generated) step.
struct Transition {
  Vector obs;
  Vector action;
  double reward = 0.0;
  Vector next_obs;
  bool done = false;       // termination predicate fired
  bool truncated = false;  // episode horizon hit
};

}  // namespace coplanner
