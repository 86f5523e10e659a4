#pragma once

#include <vector>

#include "coplanner/buffers.hpp"
#include "coplanner/mlp.hpp"
#include "coplanner/rng.hpp"
#include "coplanner/types.hpp"

namespace coplanner {

// Running statistics of (s, a) inputs and (delta_s, r) targets.
struct Normalizer {
  Vector in_mean, in_std;
  Vector out_mean, out_std;

  static Normalizer identity(int in_dim, int out_dim);
  // refreshed from the full real buffer before each fit; std floored at 1e-8
  void fit(const Matrix& inputs, const Matrix& targets);

  Matrix normalize_in(const Matrix& x) const;
  Vector normalize_in(const Vector& x) const;
  Vector denormalize_out(const Vector& y) const;
};

// One probabilistic member: an MLP mapping normalized (s, a) to a mean and a
// raw log-variance over (delta_s, r), with learnable soft log-variance
// bounds.
struct GaussianEnsembleMember {
  MlpSpec spec;        // input obs+act, output 2 * (obs + 1)
  Vector params;
  Vector max_logvar;   // per target dim
  Vector min_logvar;

  int target_dim() const { return spec.output_dim() / 2; }

  struct Prediction {
    Vector mean;
    Vector logvar;  // soft-clamped into (min_logvar, max_logvar)
  };
  Prediction predict(const Vector& norm_input) const;
  // rows are samples; columns: mean block then logvar block
  void predict_batch(const Matrix& norm_inputs, Matrix& mean,
                     Matrix& logvar) const;
};

enum class UncertaintyReduce { kMean, kSum, kMax };

struct ModelTrainConfig {
  int ensemble_size = 5;          // N
  int elite_count = 3;            // E
  std::vector<int> hidden = {64, 64};
  Activation activation = Activation::kRelu;
  double learning_rate = 1e-3;
  int batch_size = 256;
  double holdout_fraction = 0.2;
  int max_epochs = 50;
  int patience = 5;               // epochs without ensemble-wide improvement
  int train_interval = 100;       // env steps between fits
  UncertaintyReduce reduce = UncertaintyReduce::kMean;

  void validate() const;
};

struct EnsembleModel {
  int obs_dim = 0;
  int act_dim = 0;
  std::vector<GaussianEnsembleMember> members;
  std::vector<int> elites;
  Normalizer norm;
  UncertaintyReduce reduce = UncertaintyReduce::kMean;
  bool fitted = false;

  int target_dim() const { return obs_dim + 1; }
  static EnsembleModel init(int obs_dim, int act_dim,
                            const ModelTrainConfig& cfg, RngStream& rng);

  void save(std::ostream& out) const;
  static EnsembleModel load(std::istream& in);
};

// Mean over the batch of (mu - y)^T Sigma^-1 (mu - y) + log det Sigma, plus
// the soft-bound regularizer 0.01 * (sum max_logvar - sum min_logvar).
// Inputs and targets are already in normalized space.
double model_nll_loss(const GaussianEnsembleMember& member,
                      const Matrix& norm_inputs, const Matrix& norm_targets);

struct MemberGradient {
  double loss = 0.0;
  Vector mlp;
  Vector max_logvar;
  Vector min_logvar;
};

// Loss plus exact gradients w.r.t. the member's MLP parameters and both
// log-variance bounds.
MemberGradient member_nll_gradient(const GaussianEnsembleMember& member,
                                   const Matrix& norm_inputs,
                                   const Matrix& norm_targets);

struct FitReport {
  bool skipped = false;
  int epochs_run = 0;
  std::vector<double> train_nll;    // per member, final epoch mean
  std::vector<double> holdout_nll;  // per member, best (core term only)
  std::vector<int> elites;
  std::vector<std::size_t> holdout_indices;  // into the real buffer
};

// Refreshes the normalizer from D_e, trains each member on its own bootstrap
// resample of the non-holdout split, restores each member's best-holdout
// parameters, and selects the elite set.
FitReport train_ensemble(EnsembleModel& model, const RealBuffer& real,
                         const ModelTrainConfig& cfg, RngStream& rng);

// Ensemble disagreement u(s, a): per-dimension unbiased variance of the
// elite members' denormalized mean next-state predictions (reward dim
// excluded), reduced over state dimensions to a scalar.
double disagreement(const EnsembleModel& model, const Vector& obs,
                    const Vector& action);

struct SampleResult {
  Vector next_obs;
  double reward = 0.0;
  int member = -1;  // ensemble member index, for reproducibility audits
};

// Pick one elite uniformly, sample (delta_s, r) from its diagonal Gaussian,
// return s' = s + delta_s denormalized.
SampleResult sample_next(const EnsembleModel& model, const Vector& obs,
                         const Vector& action, RngStream& rng);

// Mean over elites of the denormalized next-state prediction.
Vector elite_mean_next(const EnsembleModel& model, const Vector& obs,
                       const Vector& action);

// Numerically safe softplus, exact identity for large inputs.
double softplus(double x);

}  // namespace coplanner
