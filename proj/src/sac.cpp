#include "coplanner/sac.hpp"

#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <stdexcept>

namespace coplanner {

namespace {

constexpr double kLogStdMin = -5.0;
constexpr double kLogStdMax = 2.0;
constexpr double kHalfLog2Pi = 0.9189385332046727417803297;  // 0.5*log(2*pi)

double softplus_local(double x) {
  if (x > 30.0) return x;
  return std::log1p(std::exp(x));
}

// log(1 - tanh(x)^2), stable for large |x|
double log_one_minus_tanh_sq(double x) {
  return 2.0 * (std::numbers::ln2 - x - softplus_local(-2.0 * x));
}

}  // namespace

void PolicyConfig::validate() const {
  if (learning_rate <= 0.0 || batch_size < 1) {
    throw std::invalid_argument("policy config: bad learning rate or batch");
  }
  if (tau <= 0.0 || tau > 1.0) {
    throw std::invalid_argument("policy config: tau must be in (0, 1]");
  }
  if (gamma < 0.0 || gamma > 1.0) {
    throw std::invalid_argument("policy config: gamma must be in [0, 1]");
  }
}

Policy Policy::init(int obs_dim, int act_dim, double action_bound,
                    const PolicyConfig& cfg, RngStream& rng) {
  cfg.validate();
  Policy p;
  p.cfg = cfg;
  p.actor.act_dim = act_dim;
  p.actor.action_bound = action_bound;
  p.actor.spec.widths.push_back(obs_dim);
  for (int h : cfg.hidden) p.actor.spec.widths.push_back(h);
  p.actor.spec.widths.push_back(2 * act_dim);
  p.actor.spec.activation = cfg.activation;
  RngStream actor_rng = rng.split("actor");
  p.actor.params = mlp_init(p.actor.spec, actor_rng);

  p.critics.spec.widths.push_back(obs_dim + act_dim);
  for (int h : cfg.hidden) p.critics.spec.widths.push_back(h);
  p.critics.spec.widths.push_back(1);
  p.critics.spec.activation = cfg.activation;
  RngStream q1_rng = rng.split("q1");
  RngStream q2_rng = rng.split("q2");
  p.critics.q1 = mlp_init(p.critics.spec, q1_rng);
  p.critics.q2 = mlp_init(p.critics.spec, q2_rng);
  p.critics.q1_target = p.critics.q1;
  p.critics.q2_target = p.critics.q2;

  p.temperature.log_alpha = 0.0;
  p.temperature.target_entropy = -static_cast<double>(act_dim);

  p.actor_opt = AdamState::make(p.actor.params.size(), cfg.learning_rate);
  p.q1_opt = AdamState::make(p.critics.q1.size(), cfg.learning_rate);
  p.q2_opt = AdamState::make(p.critics.q2.size(), cfg.learning_rate);
  p.alpha_opt = AdamState::make(1, cfg.learning_rate);
  return p;
}

Vector act(const Actor& actor, const Vector& obs, RngStream& rng,
           bool deterministic) {
  // tanh saturates to exactly +-1 in doubles; keep actions strictly
  // interior so atanh stays defined on everything this emits
  constexpr double kTanhLimit = 1.0 - 1e-12;
  const Vector heads = mlp_forward(actor.spec, actor.params, obs);
  const int d = actor.act_dim;
  Vector a(d);
  for (int i = 0; i < d; ++i) {
    double pre = heads[i];
    if (!deterministic) {
      const double log_std =
          std::clamp(heads[d + i], kLogStdMin, kLogStdMax);
      pre += std::exp(log_std) * rng.gaussian();
    }
    const double t = std::clamp(std::tanh(pre), -kTanhLimit, kTanhLimit);
    a[i] = actor.action_bound * t;
  }
  return a;
}

double log_prob(const Actor& actor, const Vector& obs, const Vector& action) {
  const int d = actor.act_dim;
  if (action.size() != d) {
    throw std::invalid_argument("log_prob: action dimension mismatch");
  }
  const Vector heads = mlp_forward(actor.spec, actor.params, obs);
  double lp = 0.0;
  for (int i = 0; i < d; ++i) {
    const double t = action[i] / actor.action_bound;
    if (!(std::abs(t) < 1.0)) {
      throw std::invalid_argument(
          "log_prob: action on or outside the bound (atanh undefined)");
    }
    const double pre = std::atanh(t);
    const double mean = heads[i];
    const double log_std = std::clamp(heads[d + i], kLogStdMin, kLogStdMax);
    const double z = (pre - mean) / std::exp(log_std);
    lp += -kHalfLog2Pi - log_std - 0.5 * z * z;
    lp -= std::log1p(-t * t);
    lp -= std::log(actor.action_bound);
  }
  return lp;
}

namespace {

struct SampledActions {
  Matrix actions;   // n x d, squashed and scaled
  Matrix tanh_pre;  // tanh(pre)
  Matrix xi;        // the Gaussian draws
  Matrix sigma;     // exp(clamped log_std)
  Matrix std_mask;  // 1 where the raw log_std was inside the clamp range
  Vector log_probs;
  MlpCache cache;   // actor forward cache over the observations
};

// Reparameterized batch sample with everything the backward pass needs.
SampledActions sample_actions(const Actor& actor, const Matrix& obs,
                              RngStream& rng) {
  SampledActions s;
  const int d = actor.act_dim;
  const auto n = obs.rows();
  const Matrix heads =
      mlp_forward_batch(actor.spec, actor.params, obs, &s.cache);
  s.actions.resize(n, d);
  s.tanh_pre.resize(n, d);
  s.xi.resize(n, d);
  s.sigma.resize(n, d);
  s.std_mask.resize(n, d);
  s.log_probs = Vector::Zero(n);
  const double log_bound = std::log(actor.action_bound);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      const double raw = heads(i, d + j);
      const double log_std = std::clamp(raw, kLogStdMin, kLogStdMax);
      s.std_mask(i, j) = (raw > kLogStdMin && raw < kLogStdMax) ? 1.0 : 0.0;
      const double sigma = std::exp(log_std);
      const double xi = rng.gaussian();
      const double pre = heads(i, j) + sigma * xi;
      const double t = std::tanh(pre);
      s.xi(i, j) = xi;
      s.sigma(i, j) = sigma;
      s.tanh_pre(i, j) = t;
      s.actions(i, j) = actor.action_bound * t;
      s.log_probs[i] += -kHalfLog2Pi - log_std - 0.5 * xi * xi -
                        log_one_minus_tanh_sq(pre) - log_bound;
    }
  }
  return s;
}

Matrix critic_input(const Matrix& obs, const Matrix& actions) {
  Matrix x(obs.rows(), obs.cols() + actions.cols());
  x << obs, actions;
  return x;
}

}  // namespace

UpdateReport policy_update(Policy& policy,
                           const std::vector<Transition>& batch,
                           RngStream& rng) {
  if (batch.empty()) {
    throw std::invalid_argument("policy_update: empty batch");
  }
  const auto n = static_cast<Eigen::Index>(batch.size());
  const int obs_dim = static_cast<int>(batch.front().obs.size());
  const int act_dim = policy.actor.act_dim;
  Matrix obs(n, obs_dim), next_obs(n, obs_dim), actions(n, act_dim);
  Vector rewards(n), not_done(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    obs.row(i) = batch[i].obs.transpose();
    next_obs.row(i) = batch[i].next_obs.transpose();
    actions.row(i) = batch[i].action.transpose();
    rewards[i] = batch[i].reward;
    not_done[i] = batch[i].done ? 0.0 : 1.0;
  }
  const double alpha = policy.temperature.alpha();
  const double gamma = policy.cfg.gamma;
  const double inv_n = 1.0 / static_cast<double>(n);
  UpdateReport report;

  // critic targets from the target networks and a fresh next action
  SampledActions next_act = sample_actions(policy.actor, next_obs, rng);
  const Matrix next_in = critic_input(next_obs, next_act.actions);
  const Vector qt1 =
      mlp_forward_batch(policy.critics.spec, policy.critics.q1_target, next_in)
          .col(0);
  const Vector qt2 =
      mlp_forward_batch(policy.critics.spec, policy.critics.q2_target, next_in)
          .col(0);
  const Vector target =
      rewards.array() +
      gamma * not_done.array() *
          (qt1.cwiseMin(qt2).array() - alpha * next_act.log_probs.array());
  report.mean_critic_target = target.mean();

  // critic regression
  const Matrix cur_in = critic_input(obs, actions);
  double critic_loss = 0.0;
  for (int which = 0; which < 2; ++which) {
    Vector& params = which == 0 ? policy.critics.q1 : policy.critics.q2;
    AdamState& opt = which == 0 ? policy.q1_opt : policy.q2_opt;
    MlpCache cache;
    const Vector q =
        mlp_forward_batch(policy.critics.spec, params, cur_in, &cache).col(0);
    const Vector err = q - target;
    critic_loss += err.squaredNorm() * inv_n;
    const Matrix upstream = (2.0 * inv_n) * err;
    Vector grad = Vector::Zero(params.size());
    mlp_backward_batch(policy.critics.spec, params, cache, upstream, grad);
    adam_step(opt, params, grad);
  }
  report.critic_loss = 0.5 * critic_loss;

  // actor ascent on min Q - alpha * log pi (critic params held fixed)
  SampledActions cur_act = sample_actions(policy.actor, obs, rng);
  const Matrix actor_in = critic_input(obs, cur_act.actions);
  MlpCache q1_cache, q2_cache;
  const Vector q1 = mlp_forward_batch(policy.critics.spec, policy.critics.q1,
                                      actor_in, &q1_cache).col(0);
  const Vector q2 = mlp_forward_batch(policy.critics.spec, policy.critics.q2,
                                      actor_in, &q2_cache).col(0);
  const Vector qmin = q1.cwiseMin(q2);
  report.mean_q = qmin.mean();
  report.actor_loss =
      (alpha * cur_act.log_probs.array() - qmin.array()).mean();
  if (!std::isfinite(report.actor_loss) ||
      !std::isfinite(report.critic_loss)) {
    throw std::runtime_error("policy_update: non-finite loss");
  }

  // dL/da through the per-sample argmin critic
  Matrix up1 = Matrix::Zero(n, 1), up2 = Matrix::Zero(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    (q1[i] <= q2[i] ? up1 : up2)(i, 0) = -inv_n;
  }
  Vector scratch = Vector::Zero(policy.critics.q1.size());
  Matrix in_grad1, in_grad2;
  mlp_backward_batch(policy.critics.spec, policy.critics.q1, q1_cache, up1,
                     scratch, &in_grad1);
  scratch.setZero();
  mlp_backward_batch(policy.critics.spec, policy.critics.q2, q2_cache, up2,
                     scratch, &in_grad2);
  const Matrix action_grad = in_grad1.rightCols(act_dim) +
                             in_grad2.rightCols(act_dim);

  // chain into the actor heads
  Matrix head_grad(n, 2 * act_dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < act_dim; ++j) {
      const double t = cur_act.tanh_pre(i, j);
      const double da_dpre =
          policy.actor.action_bound * (1.0 - t * t);
      const double dlogp_dpre = 2.0 * t;  // from the tanh correction
      const double dl_dpre =
          alpha * inv_n * dlogp_dpre + action_grad(i, j) * da_dpre;
      head_grad(i, j) = dl_dpre;
      const double dpre_dlogstd = cur_act.sigma(i, j) * cur_act.xi(i, j);
      head_grad(i, act_dim + j) =
          (-alpha * inv_n + dl_dpre * dpre_dlogstd) * cur_act.std_mask(i, j);
    }
  }
  Vector actor_grad = Vector::Zero(policy.actor.params.size());
  mlp_backward_batch(policy.actor.spec, policy.actor.params, cur_act.cache,
                     head_grad, actor_grad);
  adam_step(policy.actor_opt, policy.actor.params, actor_grad);

  // temperature toward the entropy target
  const double entropy_gap =
      cur_act.log_probs.mean() + policy.temperature.target_entropy;
  report.alpha_loss = -policy.temperature.alpha() * entropy_gap;
  Vector log_alpha(1), alpha_grad(1);
  log_alpha[0] = policy.temperature.log_alpha;
  alpha_grad[0] = -policy.temperature.alpha() * entropy_gap;
  adam_step(policy.alpha_opt, log_alpha, alpha_grad);
  policy.temperature.log_alpha = log_alpha[0];
  report.alpha = policy.temperature.alpha();
  report.entropy_estimate = -cur_act.log_probs.mean();

  // polyak target trail
  const double tau = policy.cfg.tau;
  policy.critics.q1_target =
      (1.0 - tau) * policy.critics.q1_target + tau * policy.critics.q1;
  policy.critics.q2_target =
      (1.0 - tau) * policy.critics.q2_target + tau * policy.critics.q2;
  return report;
}

namespace {

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("policy checkpoint: truncated read");
  return v;
}

constexpr std::uint32_t kPolicyMagic = 0x4c505043;  // "CPPL"

}  // namespace

void Policy::save(std::ostream& out) const {
  write_pod(out, kPolicyMagic);
  write_pod(out, static_cast<std::int32_t>(actor.act_dim));
  write_pod(out, actor.action_bound);
  save_mlp(out, actor.spec, actor.params);
  save_mlp(out, critics.spec, critics.q1);
  save_mlp(out, critics.spec, critics.q2);
  save_mlp(out, critics.spec, critics.q1_target);
  save_mlp(out, critics.spec, critics.q2_target);
  write_pod(out, temperature.log_alpha);
  write_pod(out, temperature.target_entropy);
}

Policy Policy::load(std::istream& in) {
  if (read_pod<std::uint32_t>(in) != kPolicyMagic) {
    throw std::runtime_error("policy checkpoint: bad magic");
  }
  Policy p;
  p.actor.act_dim = read_pod<std::int32_t>(in);
  p.actor.action_bound = read_pod<double>(in);
  load_mlp(in, p.actor.spec, p.actor.params);
  MlpSpec spec;
  load_mlp(in, spec, p.critics.q1);
  p.critics.spec = spec;
  load_mlp(in, spec, p.critics.q2);
  load_mlp(in, spec, p.critics.q1_target);
  load_mlp(in, spec, p.critics.q2_target);
  p.temperature.log_alpha = read_pod<double>(in);
  p.temperature.target_entropy = read_pod<double>(in);
  p.actor_opt = AdamState::make(p.actor.params.size(), p.cfg.learning_rate);
  p.q1_opt = AdamState::make(p.critics.q1.size(), p.cfg.learning_rate);
  p.q2_opt = AdamState::make(p.critics.q2.size(), p.cfg.learning_rate);
  p.alpha_opt = AdamState::make(1, p.cfg.learning_rate);
  return p;
}

}  // namespace coplanner
