#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "coplanner/ensemble.hpp"
#include "coplanner/metrics.hpp"

using namespace coplanner;

namespace {

// Member computing mean = A x + b with a constant raw log-variance head.
// Huge symmetric bounds make the soft clamp an exact identity.
GaussianEnsembleMember linear_member(const Matrix& A, const Vector& b,
                                     double raw_logvar,
                                     double bound_mag = 3100.0) {
  const int d = static_cast<int>(A.rows());
  const int in = static_cast<int>(A.cols());
  GaussianEnsembleMember m;
  m.spec.widths = {in, 2 * d};
  m.spec.activation = Activation::kRelu;
  m.params = Vector::Zero(m.spec.param_count());
  Eigen::Map<RowMajorMatrix> w(m.params.data(), 2 * d, in);
  w.topRows(d) = A;
  m.params.segment(m.spec.bias_offset(0), d) = b;
  m.params.segment(m.spec.bias_offset(0) + d, d).setConstant(raw_logvar);
  m.max_logvar = Vector::Constant(d, bound_mag);
  m.min_logvar = Vector::Constant(d, -bound_mag);
  return m;
}

// 1-D obs, 1-D action ensemble around hand-built members.
EnsembleModel hand_model(std::vector<GaussianEnsembleMember> members) {
  EnsembleModel model;
  model.obs_dim = 1;
  model.act_dim = 1;
  model.members = std::move(members);
  for (int i = 0; i < static_cast<int>(model.members.size()); ++i) {
    model.elites.push_back(i);
  }
  model.norm = Normalizer::identity(2, 2);
  model.fitted = true;
  return model;
}

// predicts delta = c (constant), reward = cr, with zero variance
GaussianEnsembleMember const_delta_member(double c, double cr) {
  Matrix A = Matrix::Zero(2, 2);
  Vector b(2);
  b << c, cr;
  return linear_member(A, b, -1500.0);
}

RealBuffer linear_system_data(int n, RngStream& rng) {
  RealBuffer buf;
  for (int i = 0; i < n; ++i) {
    Transition t;
    const double s = rng.uniform(-1.0, 1.0);
    const double a = rng.uniform(-1.0, 1.0);
    t.obs = Vector::Constant(1, s);
    t.action = Vector::Constant(1, a);
    t.next_obs = Vector::Constant(1, 0.9 * s + 0.1 * a);
    t.reward = -s * s;
    buf.push(t);
  }
  return buf;
}

ModelTrainConfig small_fit_config() {
  ModelTrainConfig cfg;
  cfg.ensemble_size = 3;
  cfg.elite_count = 2;
  cfg.hidden = {32, 32};
  cfg.batch_size = 64;
  cfg.max_epochs = 150;
  cfg.patience = 10;
  return cfg;
}

Vector vec1(double v) { return Vector::Constant(1, v); }

}  // namespace

TEST_CASE("nll: exact mean with unit variance leaves only the regularizer") {
  // identity pass-through bounds at +-1500: logvar == raw == 0, variance 1
  Matrix A = Matrix::Zero(2, 3);
  Vector b = Vector::Zero(2);
  GaussianEnsembleMember m = linear_member(A, b, 0.0, 1500.0);
  Matrix in(4, 3), tg = Matrix::Zero(4, 2);
  in.setRandom();
  const double reg = 0.01 * (m.max_logvar.sum() - m.min_logvar.sum());
  CHECK(model_nll_loss(m, in, tg) == doctest::Approx(reg).epsilon(1e-12));
}

TEST_CASE("nll: 1-dim core term is residual^2/sigma^2 + log sigma^2") {
  Matrix A = Matrix::Zero(1, 1);
  GaussianEnsembleMember m = linear_member(A, Vector::Zero(1), 0.0, 1500.0);
  Matrix in = Matrix::Zero(1, 1);
  Matrix tg = Matrix::Constant(1, 1, 1.0);  // mu=0, y=1, sigma^2=1
  const double reg = 0.01 * (m.max_logvar.sum() - m.min_logvar.sum());
  CHECK(model_nll_loss(m, in, tg) - reg ==
        doctest::Approx(1.0).epsilon(1e-12));

  // doubling the variance at fixed residual
  const double lv2 = std::log(2.0);
  GaussianEnsembleMember m2 = linear_member(A, Vector::Zero(1), lv2, 1500.0);
  const double reg2 = 0.01 * (m2.max_logvar.sum() - m2.min_logvar.sum());
  CHECK(model_nll_loss(m2, in, tg) - reg2 ==
        doctest::Approx(1.0 / 2.0 + std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("nll gradient matches finite differences on a toy member") {
  MlpSpec spec{{3, 8, 4}, Activation::kTanh};
  RngStream rng(21);
  GaussianEnsembleMember m;
  m.spec = spec;
  m.params = mlp_init(spec, rng);
  m.max_logvar = Vector::Constant(2, 0.5);
  m.min_logvar = Vector::Constant(2, -10.0);
  Matrix in(6, 3), tg(6, 2);
  for (int i = 0; i < 6; ++i) {
    in.row(i) = rng.gaussian_vec(3).transpose();
    tg.row(i) = rng.gaussian_vec(2).transpose();
  }
  const MemberGradient g = member_nll_gradient(m, in, tg);
  CHECK(g.loss == doctest::Approx(model_nll_loss(m, in, tg)).epsilon(1e-12));

  const double h = 1e-6;
  auto fd_check = [&](Vector& target, const Vector& analytic) {
    for (Eigen::Index i = 0; i < target.size(); ++i) {
      const double orig = target[i];
      target[i] = orig + h;
      const double up = model_nll_loss(m, in, tg);
      target[i] = orig - h;
      const double down = model_nll_loss(m, in, tg);
      target[i] = orig;
      const double fd = (up - down) / (2.0 * h);
      const double denom =
          std::max(1e-6, std::abs(fd) + std::abs(analytic[i]));
      CHECK(std::abs(fd - analytic[i]) / denom < 1e-4);
    }
  };
  fd_check(m.params, g.mlp);
  fd_check(m.max_logvar, g.max_logvar);
  fd_check(m.min_logvar, g.min_logvar);
}

TEST_CASE("training fits the synthetic linear system") {
  RngStream data_rng(303);
  RealBuffer buf = linear_system_data(1500, data_rng);
  ModelTrainConfig cfg = small_fit_config();
  RngStream init_rng(7);
  EnsembleModel model = EnsembleModel::init(1, 1, cfg, init_rng);
  RngStream fit_rng(11);
  const FitReport report = train_ensemble(model, buf, cfg, fit_rng);
  REQUIRE_FALSE(report.skipped);
  CHECK(report.elites.size() == 2);
  CHECK(model.fitted);

  // elite mean predictions on the holdout against closed-form truth
  std::vector<Transition> holdout;
  for (std::size_t idx : report.holdout_indices) {
    holdout.push_back(buf.at(idx));
  }
  CHECK(model_prediction_error(model, holdout) < 1e-3);

  SUBCASE("same seed and data reproduce the elite set") {
    RngStream init2(7);
    EnsembleModel model2 = EnsembleModel::init(1, 1, cfg, init2);
    RngStream fit2(11);
    const FitReport report2 = train_ensemble(model2, buf, cfg, fit2);
    CHECK(report2.elites == report.elites);
    CHECK(report2.holdout_nll == report.holdout_nll);
  }

  SUBCASE("disagreement grows outside the training hull") {
    RngStream probe_rng(5);
    double in_hull = 0.0, out_hull = 0.0;
    for (int i = 0; i < 100; ++i) {
      in_hull += disagreement(model, vec1(probe_rng.uniform(-1.0, 1.0)),
                              vec1(probe_rng.uniform(-1.0, 1.0)));
      // inputs are U(-1,1): std ~ 0.577, so 3 sigma out is ~ +-2.7 from 0
      const double far = probe_rng.next_below(2) == 0 ? -3.5 : 3.5;
      out_hull += disagreement(model, vec1(far), vec1(far));
    }
    CHECK(out_hull / 100.0 > in_hull / 100.0);
  }
}

TEST_CASE("training on identical transitions collapses to the single target") {
  RealBuffer buf;
  for (int i = 0; i < 400; ++i) {
    Transition t;
    t.obs = vec1(0.5);
    t.action = vec1(-0.2);
    t.next_obs = vec1(0.55);
    t.reward = 0.3;
    buf.push(t);
  }
  ModelTrainConfig cfg = small_fit_config();
  cfg.max_epochs = 40;
  RngStream init_rng(3);
  EnsembleModel model = EnsembleModel::init(1, 1, cfg, init_rng);
  RngStream fit_rng(4);
  const FitReport report = train_ensemble(model, buf, cfg, fit_rng);
  REQUIRE_FALSE(report.skipped);
  for (double nll : report.holdout_nll) CHECK(std::isfinite(nll));
  const Vector pred = elite_mean_next(model, vec1(0.5), vec1(-0.2));
  CHECK(std::abs(pred[0] - 0.55) < 1e-3);
}

TEST_CASE("training skips when the buffer is too small") {
  RngStream data_rng(1);
  RealBuffer buf = linear_system_data(100, data_rng);
  ModelTrainConfig cfg = small_fit_config();  // needs >= 128
  RngStream init_rng(2);
  EnsembleModel model = EnsembleModel::init(1, 1, cfg, init_rng);
  RngStream fit_rng(3);
  CHECK(train_ensemble(model, buf, cfg, fit_rng).skipped);
  CHECK_FALSE(model.fitted);
}

TEST_CASE("disagreement: identical elites give exactly zero") {
  EnsembleModel model =
      hand_model({const_delta_member(0.7, 0.1), const_delta_member(0.7, 0.1),
                  const_delta_member(0.7, 0.1)});
  CHECK(disagreement(model, vec1(0.2), vec1(0.0)) == 0.0);
}

TEST_CASE("disagreement: two elites at 1.0 and 3.0 give u = 2") {
  // from s = 0, deltas 1.0 and 3.0 predict next states 1.0 and 3.0
  EnsembleModel model = hand_model(
      {const_delta_member(1.0, 0.0), const_delta_member(3.0, 0.0)});
  CHECK(disagreement(model, vec1(0.0), vec1(0.0)) ==
        doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("disagreement: translation and permutation invariance") {
  RngStream rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const double d1 = rng.gaussian(), d2 = rng.gaussian(),
                 d3 = rng.gaussian();
    const double shift = rng.gaussian() * 10.0;
    EnsembleModel base = hand_model({const_delta_member(d1, 0.0),
                                     const_delta_member(d2, 0.0),
                                     const_delta_member(d3, 0.0)});
    EnsembleModel shifted = hand_model({const_delta_member(d1 + shift, 0.0),
                                        const_delta_member(d2 + shift, 0.0),
                                        const_delta_member(d3 + shift, 0.0)});
    EnsembleModel permuted = hand_model({const_delta_member(d3, 0.0),
                                         const_delta_member(d1, 0.0),
                                         const_delta_member(d2, 0.0)});
    const double u = disagreement(base, vec1(0.1), vec1(0.2));
    CHECK(u >= 0.0);
    CHECK(disagreement(shifted, vec1(0.1), vec1(0.2)) ==
          doctest::Approx(u).epsilon(1e-9));
    CHECK(disagreement(permuted, vec1(0.1), vec1(0.2)) ==
          doctest::Approx(u).epsilon(1e-12));
  }
}

TEST_CASE("disagreement requires at least two elites") {
  EnsembleModel model = hand_model({const_delta_member(1.0, 0.0)});
  CHECK_THROWS_AS(disagreement(model, vec1(0.0), vec1(0.0)),
                  std::runtime_error);
}

TEST_CASE("sample_next: zero-variance member returns s + mu exactly") {
  EnsembleModel model = hand_model({const_delta_member(0.25, 0.6)});
  RngStream rng(9);
  const SampleResult r = sample_next(model, vec1(0.5), vec1(0.0), rng);
  CHECK(r.next_obs[0] == 0.75);
  CHECK(r.reward == 0.6);
  CHECK(r.member == 0);
}

TEST_CASE("sample_next: identical rng state reproduces the sample") {
  EnsembleModel model =
      hand_model({linear_member(Matrix::Zero(2, 2), Vector::Zero(2), 0.0),
                  linear_member(Matrix::Zero(2, 2), Vector::Ones(2), 0.0)});
  RngStream a(33), b(33);
  const SampleResult ra = sample_next(model, vec1(0.1), vec1(0.2), a);
  const SampleResult rb = sample_next(model, vec1(0.1), vec1(0.2), b);
  CHECK(ra.member == rb.member);
  CHECK(ra.next_obs == rb.next_obs);
  CHECK(ra.reward == rb.reward);
}

TEST_CASE("sample_next: unit-variance member has sample variance near 1") {
  EnsembleModel model =
      hand_model({linear_member(Matrix::Zero(2, 2), Vector::Zero(2), 0.0)});
  RngStream rng(101);
  const int n = 10000;
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const SampleResult r = sample_next(model, vec1(0.0), vec1(0.0), rng);
    sum += r.next_obs[0];
    sum_sq += r.next_obs[0] * r.next_obs[0];
  }
  const double mean = sum / n;
  const double var = sum_sq / n - mean * mean;
  CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("uncertainty scalarization options reduce the variance vector") {
  // 2-D obs: dim 0 spreads (var 2), dim 1 agrees (var 0)
  auto member_2d = [](double delta0) {
    Matrix A = Matrix::Zero(6, 3);
    Vector b(3);
    b << delta0, 0.0, 0.0;
    GaussianEnsembleMember m;
    m.spec.widths = {3, 6};
    m.spec.activation = Activation::kRelu;
    m.params = Vector::Zero(m.spec.param_count());
    m.params.segment(m.spec.bias_offset(0), 3) = b;
    m.params.segment(m.spec.bias_offset(0) + 3, 3).setConstant(-1500.0);
    m.max_logvar = Vector::Constant(3, 3100.0);
    m.min_logvar = Vector::Constant(3, -3100.0);
    return m;
  };
  EnsembleModel model;
  model.obs_dim = 2;
  model.act_dim = 1;
  model.members = {member_2d(1.0), member_2d(3.0)};
  model.elites = {0, 1};
  model.norm = Normalizer::identity(3, 3);
  model.fitted = true;
  Vector s = Vector::Zero(2), a = Vector::Zero(1);
  model.reduce = UncertaintyReduce::kMean;
  CHECK(disagreement(model, s, a) == doctest::Approx(1.0));
  model.reduce = UncertaintyReduce::kSum;
  CHECK(disagreement(model, s, a) == doctest::Approx(2.0));
  model.reduce = UncertaintyReduce::kMax;
  CHECK(disagreement(model, s, a) == doctest::Approx(2.0));
}

TEST_CASE("model checkpoint round-trips") {
  RngStream data_rng(8);
  RealBuffer buf = linear_system_data(300, data_rng);
  ModelTrainConfig cfg = small_fit_config();
  cfg.max_epochs = 5;
  RngStream init_rng(1);
  EnsembleModel model = EnsembleModel::init(1, 1, cfg, init_rng);
  RngStream fit_rng(2);
  train_ensemble(model, buf, cfg, fit_rng);
  std::stringstream stream;
  model.save(stream);
  const EnsembleModel loaded = EnsembleModel::load(stream);
  CHECK(loaded.elites == model.elites);
  CHECK(loaded.fitted == model.fitted);
  CHECK(loaded.members.size() == model.members.size());
  const Vector probe_s = vec1(0.3), probe_a = vec1(-0.4);
  CHECK(elite_mean_next(loaded, probe_s, probe_a) ==
        elite_mean_next(model, probe_s, probe_a));
  CHECK(disagreement(loaded, probe_s, probe_a) ==
        disagreement(model, probe_s, probe_a));
}
