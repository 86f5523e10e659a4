#include "coplanner/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>

#include "coplanner/adam.hpp"

namespace coplanner {

double softplus(double x) {
  if (x > 30.0) return x;
  return std::log1p(std::exp(x));
}

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

constexpr double kBoundRegWeight = 0.01;

}  // namespace

Normalizer Normalizer::identity(int in_dim, int out_dim) {
  Normalizer n;
  n.in_mean = Vector::Zero(in_dim);
  n.in_std = Vector::Ones(in_dim);
  n.out_mean = Vector::Zero(out_dim);
  n.out_std = Vector::Ones(out_dim);
  return n;
}

void Normalizer::fit(const Matrix& inputs, const Matrix& targets) {
  const double n = static_cast<double>(inputs.rows());
  in_mean = inputs.colwise().mean();
  out_mean = targets.colwise().mean();
  in_std = ((inputs.rowwise() - in_mean.transpose()).array().square()
                .colwise().sum() / n).sqrt().matrix().transpose();
  out_std = ((targets.rowwise() - out_mean.transpose()).array().square()
                 .colwise().sum() / n).sqrt().matrix().transpose();
  in_std = in_std.cwiseMax(1e-8);
  out_std = out_std.cwiseMax(1e-8);
}

Matrix Normalizer::normalize_in(const Matrix& x) const {
  return ((x.rowwise() - in_mean.transpose()).array().rowwise() /
          in_std.transpose().array()).matrix();
}

Vector Normalizer::normalize_in(const Vector& x) const {
  return ((x - in_mean).array() / in_std.array()).matrix();
}

Vector Normalizer::denormalize_out(const Vector& y) const {
  return (y.array() * out_std.array() + out_mean.array()).matrix();
}

void GaussianEnsembleMember::predict_batch(const Matrix& norm_inputs,
                                           Matrix& mean,
                                           Matrix& logvar) const {
  const Matrix raw = mlp_forward_batch(spec, params, norm_inputs);
  const int d = target_dim();
  mean = raw.leftCols(d);
  logvar.resize(raw.rows(), d);
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    for (int j = 0; j < d; ++j) {
      const double l1 =
          max_logvar[j] - softplus(max_logvar[j] - raw(i, d + j));
      logvar(i, j) = min_logvar[j] + softplus(l1 - min_logvar[j]);
    }
  }
}

GaussianEnsembleMember::Prediction GaussianEnsembleMember::predict(
    const Vector& norm_input) const {
  Matrix mean, logvar;
  predict_batch(norm_input.transpose(), mean, logvar);
  return {mean.row(0), logvar.row(0)};
}

void ModelTrainConfig::validate() const {
  if (ensemble_size < 2) {
    throw std::invalid_argument("model config: ensemble_size must be >= 2");
  }
  if (elite_count < 1 || elite_count > ensemble_size) {
    throw std::invalid_argument("model config: need 1 <= elites <= N");
  }
  if (holdout_fraction <= 0.0 || holdout_fraction >= 1.0) {
    throw std::invalid_argument(
        "model config: holdout_fraction must be in (0, 1)");
  }
  if (batch_size < 1 || max_epochs < 1 || patience < 1 || train_interval < 1) {
    throw std::invalid_argument("model config: counts must be >= 1");
  }
}

EnsembleModel EnsembleModel::init(int obs_dim, int act_dim,
                                  const ModelTrainConfig& cfg,
                                  RngStream& rng) {
  cfg.validate();
  EnsembleModel m;
  m.obs_dim = obs_dim;
  m.act_dim = act_dim;
  m.reduce = cfg.reduce;
  m.norm = Normalizer::identity(obs_dim + act_dim, obs_dim + 1);
  MlpSpec spec;
  spec.widths.push_back(obs_dim + act_dim);
  for (int h : cfg.hidden) spec.widths.push_back(h);
  spec.widths.push_back(2 * (obs_dim + 1));
  spec.activation = cfg.activation;
  for (int i = 0; i < cfg.ensemble_size; ++i) {
    GaussianEnsembleMember member;
    member.spec = spec;
    RngStream member_rng = rng.split(static_cast<std::uint64_t>(i));
    member.params = mlp_init(spec, member_rng);
    member.max_logvar = Vector::Constant(obs_dim + 1, 0.5);
    member.min_logvar = Vector::Constant(obs_dim + 1, -10.0);
    m.members.push_back(std::move(member));
  }
  m.elites.resize(cfg.elite_count);
  std::iota(m.elites.begin(), m.elites.end(), 0);
  return m;
}

double model_nll_loss(const GaussianEnsembleMember& member,
                      const Matrix& norm_inputs, const Matrix& norm_targets) {
  Matrix mean, logvar;
  member.predict_batch(norm_inputs, mean, logvar);
  const Eigen::ArrayXXd resid = (mean - norm_targets).array();
  const Eigen::ArrayXXd inv_var = (-logvar.array()).exp();
  const double core =
      (resid.square() * inv_var + logvar.array()).rowwise().sum().mean();
  const double reg =
      kBoundRegWeight * (member.max_logvar.sum() - member.min_logvar.sum());
  const double loss = core + reg;
  if (!std::isfinite(loss)) {
    throw std::runtime_error("model_nll_loss: non-finite loss");
  }
  return loss;
}

MemberGradient member_nll_gradient(const GaussianEnsembleMember& member,
                                   const Matrix& norm_inputs,
                                   const Matrix& norm_targets) {
  const int d = member.target_dim();
  const auto n = norm_inputs.rows();
  MlpCache cache;
  const Matrix raw = mlp_forward_batch(member.spec, member.params,
                                       norm_inputs, &cache);

  // soft clamp with saved partials
  Matrix logvar(n, d), s1(n, d), s2(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      const double rv = raw(i, d + j);
      const double a = member.max_logvar[j] - rv;
      const double l1 = member.max_logvar[j] - softplus(a);
      const double b = l1 - member.min_logvar[j];
      logvar(i, j) = member.min_logvar[j] + softplus(b);
      s1(i, j) = sigmoid(a);
      s2(i, j) = sigmoid(b);
    }
  }

  const Eigen::ArrayXXd resid =
      (raw.leftCols(d) - norm_targets).array();
  const Eigen::ArrayXXd inv_var = (-logvar.array()).exp();
  const double core =
      (resid.square() * inv_var + logvar.array()).rowwise().sum().mean();

  const double inv_n = 1.0 / static_cast<double>(n);
  const Eigen::ArrayXXd d_mean = 2.0 * resid * inv_var * inv_n;
  const Eigen::ArrayXXd d_logvar =
      (1.0 - resid.square() * inv_var) * inv_n;
  // chain through both softplus stages back to the raw head
  const Eigen::ArrayXXd d_raw_lv = d_logvar * s2.array() * s1.array();

  Matrix upstream(n, 2 * d);
  upstream.leftCols(d) = d_mean.matrix();
  upstream.rightCols(d) = d_raw_lv.matrix();

  MemberGradient grad;
  grad.loss = core + kBoundRegWeight * (member.max_logvar.sum() -
                                        member.min_logvar.sum());
  grad.mlp = Vector::Zero(member.spec.param_count());
  mlp_backward_batch(member.spec, member.params, cache, upstream, grad.mlp);

  grad.max_logvar =
      (d_logvar * (1.0 - s1.array()) * s2.array()).colwise().sum().matrix()
          .transpose();
  grad.max_logvar.array() += kBoundRegWeight;
  grad.min_logvar =
      (d_logvar * (1.0 - s2.array())).colwise().sum().matrix().transpose();
  grad.min_logvar.array() -= kBoundRegWeight;
  if (!std::isfinite(grad.loss)) {
    throw std::runtime_error("member_nll_gradient: non-finite loss");
  }
  return grad;
}

namespace {

// holdout score: core NLL without the bound regularizer
double holdout_core_nll(const GaussianEnsembleMember& member,
                        const Matrix& norm_inputs,
                        const Matrix& norm_targets) {
  Matrix mean, logvar;
  member.predict_batch(norm_inputs, mean, logvar);
  const Eigen::ArrayXXd resid = (mean - norm_targets).array();
  const Eigen::ArrayXXd inv_var = (-logvar.array()).exp();
  return (resid.square() * inv_var + logvar.array()).rowwise().sum().mean();
}

std::vector<int> select_elites(const std::vector<double>& holdout_nll,
                               int elite_count) {
  std::vector<int> order(holdout_nll.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return holdout_nll[a] < holdout_nll[b];
  });
  order.resize(elite_count);
  std::sort(order.begin(), order.end());
  return order;
}

}  // namespace

FitReport train_ensemble(EnsembleModel& model, const RealBuffer& real,
                         const ModelTrainConfig& cfg, RngStream& rng) {
  cfg.validate();
  FitReport report;
  const std::size_t n = real.size();
  if (n < 2 * static_cast<std::size_t>(cfg.batch_size)) {
    report.skipped = true;
    return report;
  }

  const int in_dim = model.obs_dim + model.act_dim;
  const int out_dim = model.target_dim();
  Matrix inputs(n, in_dim), targets(n, out_dim);
  for (std::size_t i = 0; i < n; ++i) {
    const Transition& t = real.at(i);
    inputs.row(i).head(model.obs_dim) = t.obs.transpose();
    inputs.row(i).tail(model.act_dim) = t.action.transpose();
    targets.row(i).head(model.obs_dim) = (t.next_obs - t.obs).transpose();
    targets(i, model.obs_dim) = t.reward;
  }
  model.norm.fit(inputs, targets);
  const Matrix norm_in = model.norm.normalize_in(inputs);
  const Matrix norm_tg =
      ((targets.rowwise() - model.norm.out_mean.transpose()).array()
           .rowwise() / model.norm.out_std.transpose().array()).matrix();

  // shared holdout, bootstrap resample of the rest per member
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  RngStream split_rng = rng.split("holdout");
  for (std::size_t i = n - 1; i > 0; --i) {
    const std::size_t j = split_rng.next_below(i + 1);
    std::swap(order[i], order[j]);
  }
  const std::size_t n_holdout = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(cfg.holdout_fraction *
                                            static_cast<double>(n))));
  report.holdout_indices.assign(order.begin(), order.begin() + n_holdout);
  const std::vector<std::size_t> pool(order.begin() + n_holdout, order.end());

  Matrix hold_in(n_holdout, in_dim), hold_tg(n_holdout, out_dim);
  for (std::size_t i = 0; i < n_holdout; ++i) {
    hold_in.row(i) = norm_in.row(report.holdout_indices[i]);
    hold_tg.row(i) = norm_tg.row(report.holdout_indices[i]);
  }

  const int n_members = static_cast<int>(model.members.size());
  std::vector<std::vector<std::size_t>> resample(n_members);
  std::vector<AdamState> opt;
  std::vector<RngStream> member_rng;
  for (int m = 0; m < n_members; ++m) {
    member_rng.push_back(rng.split(static_cast<std::uint64_t>(m)));
    resample[m].resize(pool.size());
    for (auto& idx : resample[m]) {
      idx = pool[member_rng[m].next_below(pool.size())];
    }
    const Eigen::Index total = model.members[m].spec.param_count() +
                               2 * model.members[m].max_logvar.size();
    opt.push_back(AdamState::make(total, cfg.learning_rate));
  }

  std::vector<double> best_nll(n_members,
                               std::numeric_limits<double>::infinity());
  std::vector<GaussianEnsembleMember> best = model.members;
  report.train_nll.assign(n_members, 0.0);
  int stale_epochs = 0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    for (int m = 0; m < n_members; ++m) {
      GaussianEnsembleMember& member = model.members[m];
      auto& idx = resample[m];
      for (std::size_t i = idx.size() - 1; i > 0; --i) {
        const std::size_t j = member_rng[m].next_below(i + 1);
        std::swap(idx[i], idx[j]);
      }
      double epoch_loss = 0.0;
      int batches = 0;
      for (std::size_t start = 0; start < idx.size();
           start += cfg.batch_size) {
        const auto count = std::min<std::size_t>(cfg.batch_size,
                                                 idx.size() - start);
        Matrix bin(count, in_dim), btg(count, out_dim);
        for (std::size_t i = 0; i < count; ++i) {
          bin.row(i) = norm_in.row(idx[start + i]);
          btg.row(i) = norm_tg.row(idx[start + i]);
        }
        MemberGradient g = member_nll_gradient(member, bin, btg);
        epoch_loss += g.loss;
        ++batches;
        const int d = member.target_dim();
        Vector flat(member.params.size() + 2 * d);
        flat << member.params, member.max_logvar, member.min_logvar;
        Vector grad(flat.size());
        grad << g.mlp, g.max_logvar, g.min_logvar;
        adam_step(opt[m], flat, grad);
        member.params = flat.head(member.params.size());
        member.max_logvar = flat.segment(member.params.size(), d);
        member.min_logvar = flat.tail(d);
      }
      report.train_nll[m] = epoch_loss / std::max(1, batches);
    }

    bool any_improved = false;
    for (int m = 0; m < n_members; ++m) {
      const double nll =
          holdout_core_nll(model.members[m], hold_in, hold_tg);
      const double rel = (best_nll[m] - nll) /
                         std::max(1e-12, std::abs(best_nll[m]));
      if (nll < best_nll[m]) {
        if (!std::isfinite(best_nll[m]) || rel > 0.01) any_improved = true;
        best_nll[m] = nll;
        best[m] = model.members[m];
      }
    }
    report.epochs_run = epoch + 1;
    stale_epochs = any_improved ? 0 : stale_epochs + 1;
    if (stale_epochs >= cfg.patience) break;
  }

  model.members = std::move(best);
  report.holdout_nll = best_nll;
  report.elites = select_elites(best_nll, cfg.elite_count);
  model.elites = report.elites;
  model.fitted = true;
  return report;
}

namespace {

Vector model_input(const EnsembleModel& model, const Vector& obs,
                   const Vector& action) {
  if (obs.size() != model.obs_dim || action.size() != model.act_dim) {
    throw std::invalid_argument("ensemble: state/action shape mismatch");
  }
  Vector x(model.obs_dim + model.act_dim);
  x << obs, action;
  return x;
}

}  // namespace

double disagreement(const EnsembleModel& model, const Vector& obs,
                    const Vector& action) {
  const int n_elite = static_cast<int>(model.elites.size());
  if (n_elite < 2) {
    throw std::runtime_error("disagreement: need at least 2 elite members");
  }
  const Vector x = model.norm.normalize_in(model_input(model, obs, action));
  Matrix preds(n_elite, model.obs_dim);
  for (int e = 0; e < n_elite; ++e) {
    const auto& member = model.members[model.elites[e]];
    const auto p = member.predict(x);
    const Vector delta = model.norm.denormalize_out(p.mean);
    preds.row(e) = (obs + delta.head(model.obs_dim)).transpose();
  }
  const Vector center = preds.colwise().mean();
  const Vector var = (preds.rowwise() - center.transpose())
                         .array().square().colwise().sum().matrix()
                         .transpose() / static_cast<double>(n_elite - 1);
  switch (model.reduce) {
    case UncertaintyReduce::kMean: return var.mean();
    case UncertaintyReduce::kSum: return var.sum();
    case UncertaintyReduce::kMax: return var.maxCoeff();
  }
  return var.mean();
}

SampleResult sample_next(const EnsembleModel& model, const Vector& obs,
                         const Vector& action, RngStream& rng) {
  if (model.elites.empty()) {
    throw std::runtime_error("sample_next: model has no elite members");
  }
  const Vector x = model.norm.normalize_in(model_input(model, obs, action));
  const int member_idx =
      model.elites[rng.next_below(model.elites.size())];
  const auto p = model.members[member_idx].predict(x);
  const Vector eps = rng.gaussian_vec(p.mean.size());
  const Vector sample =
      p.mean.array() + (p.logvar.array() / 2.0).exp() * eps.array();
  const Vector target = model.norm.denormalize_out(sample);
  SampleResult result;
  result.next_obs = obs + target.head(model.obs_dim);
  result.reward = target[model.obs_dim];
  result.member = member_idx;
  if (!result.next_obs.allFinite() || !std::isfinite(result.reward)) {
    throw std::runtime_error("sample_next: non-finite sample from member " +
                             std::to_string(member_idx));
  }
  return result;
}

Vector elite_mean_next(const EnsembleModel& model, const Vector& obs,
                       const Vector& action) {
  if (model.elites.empty()) {
    throw std::runtime_error("elite_mean_next: model has no elite members");
  }
  const Vector x = model.norm.normalize_in(model_input(model, obs, action));
  Vector mean = Vector::Zero(model.obs_dim);
  for (int e : model.elites) {
    const auto p = model.members[e].predict(x);
    const Vector delta = model.norm.denormalize_out(p.mean);
    mean += obs + delta.head(model.obs_dim);
  }
  return mean / static_cast<double>(model.elites.size());
}

namespace {

constexpr std::uint32_t kModelMagic = 0x444d5043;  // "CPMD"

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("model checkpoint: truncated read");
  return v;
}

void write_vector(std::ostream& out, const Vector& v) {
  write_pod(out, static_cast<std::uint64_t>(v.size()));
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

Vector read_vector(std::istream& in) {
  const auto n = read_pod<std::uint64_t>(in);
  Vector v(static_cast<Eigen::Index>(n));
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw std::runtime_error("model checkpoint: truncated vector");
  return v;
}

}  // namespace

void EnsembleModel::save(std::ostream& out) const {
  write_pod(out, kModelMagic);
  write_pod(out, static_cast<std::int32_t>(obs_dim));
  write_pod(out, static_cast<std::int32_t>(act_dim));
  write_pod(out, static_cast<std::uint8_t>(reduce));
  write_pod(out, static_cast<std::uint8_t>(fitted));
  write_pod(out, static_cast<std::uint32_t>(members.size()));
  for (const auto& m : members) {
    save_mlp(out, m.spec, m.params);
    write_vector(out, m.max_logvar);
    write_vector(out, m.min_logvar);
  }
  write_pod(out, static_cast<std::uint32_t>(elites.size()));
  for (int e : elites) write_pod(out, static_cast<std::int32_t>(e));
  write_vector(out, norm.in_mean);
  write_vector(out, norm.in_std);
  write_vector(out, norm.out_mean);
  write_vector(out, norm.out_std);
}

EnsembleModel EnsembleModel::load(std::istream& in) {
  if (read_pod<std::uint32_t>(in) != kModelMagic) {
    throw std::runtime_error("model checkpoint: bad magic");
  }
  EnsembleModel m;
  m.obs_dim = read_pod<std::int32_t>(in);
  m.act_dim = read_pod<std::int32_t>(in);
  m.reduce = static_cast<UncertaintyReduce>(read_pod<std::uint8_t>(in));
  m.fitted = read_pod<std::uint8_t>(in) != 0;
  const auto n_members = read_pod<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n_members; ++i) {
    GaussianEnsembleMember member;
    load_mlp(in, member.spec, member.params);
    member.max_logvar = read_vector(in);
    member.min_logvar = read_vector(in);
    m.members.push_back(std::move(member));
  }
  const auto n_elites = read_pod<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n_elites; ++i) {
    m.elites.push_back(read_pod<std::int32_t>(in));
  }
  m.norm.in_mean = read_vector(in);
  m.norm.in_std = read_vector(in);
  m.norm.out_mean = read_vector(in);
  m.norm.out_std = read_vector(in);
  return m;
}

}  // namespace coplanner
