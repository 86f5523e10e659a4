#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "coplanner/rng.hpp"
#include "coplanner/types.hpp"

namespace coplanner {

enum class Activation { kRelu, kTanh };

// Layer widths input..output; hidden layers get the activation, the output
// head is plain linear.
struct MlpSpec {
  std::vector<int> widths;
  Activation activation = Activation::kRelu;

  int input_dim() const { return widths.front(); }
  int output_dim() const { return widths.back(); }
  int num_layers() const { return static_cast<int>(widths.size()) - 1; }

  Eigen::Index param_count() const;
  // offset of layer l's row-major weight block; biases follow the weights
  Eigen::Index weight_offset(int layer) const;
  Eigen::Index bias_offset(int layer) const;

  // throws std::invalid_argument unless >= 2 widths, all >= 1
  void validate() const;

  bool operator==(const MlpSpec&) const = default;
};

// Post-activation outputs per layer, kept for the backward pass.
// acts[0] is the input batch; acts[l + 1] is layer l's output.
struct MlpCache {
  std::vector<Matrix> acts;
};

struct MlpGradient {
  Vector params;
  Vector input;
};

// Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases.
Vector mlp_init(const MlpSpec& spec, RngStream& rng);

Vector mlp_forward(const MlpSpec& spec, const Vector& params,
                   const Vector& input);

// Rows are samples.
Matrix mlp_forward_batch(const MlpSpec& spec, const Vector& params,
                         const Matrix& inputs, MlpCache* cache = nullptr);

// Exact reverse-mode gradient of <upstream, output> w.r.t. params and input.
MlpGradient mlp_gradient(const MlpSpec& spec, const Vector& params,
                         const Vector& input, const Vector& upstream);

// Batch reverse-mode: accumulates the gradient of
// sum_i <upstream.row(i), output.row(i)> into param_grad. Optionally returns
// per-sample input gradients.
void mlp_backward_batch(const MlpSpec& spec, const Vector& params,
                        const MlpCache& cache, const Matrix& upstream,
                        Vector& param_grad, Matrix* input_grad = nullptr);

// Checkpoint blob: spec descriptor + flat little-endian f64 parameter
// array, length-prefixed.
void save_mlp(std::ostream& out, const MlpSpec& spec, const Vector& params);
void load_mlp(std::istream& in, MlpSpec& spec, Vector& params);
void save_mlp_file(const std::string& path, const MlpSpec& spec,
                   const Vector& params);
void load_mlp_file(const std::string& path, MlpSpec& spec, Vector& params);

}  // namespace coplanner
