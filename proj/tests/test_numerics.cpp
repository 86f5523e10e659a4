#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "coplanner/adam.hpp"
#include "coplanner/mlp.hpp"
#include "coplanner/rng.hpp"

using namespace coplanner;

namespace {

// central finite differences of <upstream, mlp(params, input)>
Vector fd_param_gradient(const MlpSpec& spec, const Vector& params,
                         const Vector& input, const Vector& upstream,
                         double h = 1e-5) {
  Vector grad(params.size());
  Vector p = params;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    p[i] = params[i] + h;
    const double up = upstream.dot(mlp_forward(spec, p, input));
    p[i] = params[i] - h;
    const double down = upstream.dot(mlp_forward(spec, p, input));
    p[i] = params[i];
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double max_rel_error(const Vector& a, const Vector& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double denom = std::max(1e-6, std::abs(a[i]) + std::abs(b[i]));
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

MlpSpec random_spec(RngStream& rng) {
  MlpSpec spec;
  const int hidden_layers = static_cast<int>(rng.next_below(4));  // 0..3
  spec.widths.push_back(1 + static_cast<int>(rng.next_below(16)));
  for (int l = 0; l < hidden_layers; ++l) {
    spec.widths.push_back(1 + static_cast<int>(rng.next_below(16)));
  }
  spec.widths.push_back(1 + static_cast<int>(rng.next_below(16)));
  spec.activation =
      rng.next_below(2) == 0 ? Activation::kRelu : Activation::kTanh;
  return spec;
}

// Finite differences are only valid away from relu kinks: reject points
// where any hidden pre-activation is within tol of zero.
bool near_relu_kink(const MlpSpec& spec, const Vector& params,
                    const Vector& input, double tol = 1e-3) {
  if (spec.activation != Activation::kRelu) return false;
  Vector h = input;
  for (int l = 0; l + 1 < spec.num_layers(); ++l) {
    const int in = spec.widths[l];
    const int out = spec.widths[l + 1];
    Eigen::Map<const RowMajorMatrix> w(params.data() + spec.weight_offset(l),
                                       out, in);
    const Vector z = w * h + params.segment(spec.bias_offset(l), out);
    if (z.cwiseAbs().minCoeff() < tol) return true;
    h = z.cwiseMax(0.0);
  }
  return false;
}

}  // namespace

TEST_CASE("forward: all-zero params give all-zero output") {
  MlpSpec spec{{3, 5, 2}, Activation::kRelu};
  const Vector params = Vector::Zero(spec.param_count());
  Vector input(3);
  input << 1.0, -2.0, 0.5;
  const Vector out = mlp_forward(spec, params, input);
  CHECK(out.isZero(0.0));
}

TEST_CASE("forward: identity linear layer passes input through") {
  MlpSpec spec{{3, 3}, Activation::kRelu};
  Vector params = Vector::Zero(spec.param_count());
  params[0] = params[4] = params[8] = 1.0;  // row-major identity
  Vector input(3);
  input << 0.7, -1.3, 2.0;
  const Vector out = mlp_forward(spec, params, input);
  CHECK(out.isApprox(input, 0.0));
}

TEST_CASE("forward: 2-3-1 tanh net matches independent recomputation") {
  MlpSpec spec{{2, 3, 1}, Activation::kTanh};
  Vector params(spec.param_count());
  // W1 rows, b1, W2, b2 in the canonical layout
  params << 0.3, -0.2, 0.1, 0.4, -0.5, 0.25,  // W1
      0.1, -0.1, 0.2,                          // b1
      0.6, -0.3, 0.2,                          // W2
      0.05;                                    // b2
  Vector input(2);
  input << 0.5, -0.5;
  const Vector out = mlp_forward(spec, params, input);
  CHECK(out[0] == doctest::Approx(0.29065389375598005).epsilon(1e-12));
}

TEST_CASE("forward: deterministic (bit-identical repeats)") {
  MlpSpec spec{{4, 8, 8, 3}, Activation::kTanh};
  RngStream rng(17);
  const Vector params = mlp_init(spec, rng);
  const Vector input = rng.gaussian_vec(4);
  const Vector a = mlp_forward(spec, params, input);
  const Vector b = mlp_forward(spec, params, input);
  for (Eigen::Index i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("forward: dimension mismatch rejected") {
  MlpSpec spec{{3, 2}, Activation::kRelu};
  const Vector params = Vector::Zero(spec.param_count());
  CHECK_THROWS_AS(mlp_forward(spec, params, Vector::Zero(4)),
                  std::invalid_argument);
  CHECK_THROWS_AS(mlp_forward(spec, Vector::Zero(3), Vector::Zero(3)),
                  std::invalid_argument);
}

TEST_CASE("gradient: zero upstream gives zero gradients") {
  MlpSpec spec{{3, 6, 2}, Activation::kTanh};
  RngStream rng(3);
  const Vector params = mlp_init(spec, rng);
  const Vector input = rng.gaussian_vec(3);
  const MlpGradient g =
      mlp_gradient(spec, params, input, Vector::Zero(2));
  CHECK(g.params.isZero(0.0));
  CHECK(g.input.isZero(0.0));
}

TEST_CASE("gradient: single linear layer has dW = g x^T, db = g") {
  MlpSpec spec{{2, 3}, Activation::kRelu};
  RngStream rng(5);
  const Vector params = mlp_init(spec, rng);
  Vector input(2), upstream(3);
  input << 0.4, -1.1;
  upstream << 1.0, -2.0, 0.5;
  const MlpGradient g = mlp_gradient(spec, params, input, upstream);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 2; ++c) {
      CHECK(g.params[r * 2 + c] ==
            doctest::Approx(upstream[r] * input[c]).epsilon(1e-14));
    }
    CHECK(g.params[6 + r] == doctest::Approx(upstream[r]).epsilon(1e-14));
  }
}

TEST_CASE("gradient: random 3-layer net matches central finite differences") {
  MlpSpec spec{{3, 8, 6, 2}, Activation::kTanh};
  RngStream rng(11);
  const Vector params = mlp_init(spec, rng);
  const Vector input = rng.gaussian_vec(3);
  const Vector upstream = rng.gaussian_vec(2);
  const MlpGradient g = mlp_gradient(spec, params, input, upstream);
  const Vector fd = fd_param_gradient(spec, params, input, upstream);
  CHECK(max_rel_error(g.params, fd) < 1e-4);
}

TEST_CASE("gradient check: random specs up to 3 hidden layers, widths <= 16") {
  RngStream rng(99);
  int done = 0;
  for (int trial = 0; done < 25; ++trial) {
    REQUIRE(trial < 500);
    MlpSpec spec = random_spec(rng);
    RngStream init = rng.split(trial);
    const Vector params = mlp_init(spec, init);
    const Vector input = init.gaussian_vec(spec.input_dim());
    if (near_relu_kink(spec, params, input)) continue;
    const Vector upstream = init.gaussian_vec(spec.output_dim());
    const MlpGradient g = mlp_gradient(spec, params, input, upstream);
    const Vector fd = fd_param_gradient(spec, params, input, upstream);
    CHECK(max_rel_error(g.params, fd) < 1e-4);
    ++done;
  }
}

TEST_CASE("adam: zero gradient leaves params unchanged, increments t") {
  AdamState st = AdamState::make(3, 0.01);
  Vector params(3);
  params << 1.0, -2.0, 0.5;
  const Vector before = params;
  adam_step(st, params, Vector::Zero(3));
  CHECK(params.isApprox(before, 0.0));
  CHECK(st.t == 1);
}

TEST_CASE("adam: bias-corrected first step is about -lr * sign(g)") {
  AdamState st = AdamState::make(1, 0.01);
  Vector params(1), grads(1);
  params << 1.0;
  grads << 0.5;
  adam_step(st, params, grads);
  // hand evaluation: 0.01 * g / (|g| + eps) = 0.009999999800000003
  CHECK(params[0] == doctest::Approx(1.0 - 0.009999999800000003)
                         .epsilon(1e-12));
  const double slack = st.eps / 0.5;
  CHECK(std::abs((1.0 - params[0]) - 0.01) / 0.01 <= 2.0 * slack + 1e-15);
}

TEST_CASE("adam: second identical step is no larger than the first") {
  AdamState st = AdamState::make(1, 0.01);
  Vector params(1), grads(1);
  params << 0.0;
  grads << 1.7;
  adam_step(st, params, grads);
  const double first = std::abs(params[0]);
  const double before_second = params[0];
  adam_step(st, params, grads);
  const double second = std::abs(params[0] - before_second);
  CHECK(second <= first + 1e-15);
}

TEST_CASE("adam: lr = 0 is the identity on params") {
  AdamState st = AdamState::make(4, 0.0);
  RngStream rng(2);
  Vector params = rng.gaussian_vec(4);
  const Vector before = params;
  for (int i = 0; i < 5; ++i) adam_step(st, params, rng.gaussian_vec(4));
  CHECK(params.isApprox(before, 0.0));
}

TEST_CASE("rng: same (seed, stream) reproduces identical vectors") {
  RngStream a(42, 7);
  RngStream b(42, 7);
  const Vector va = a.gaussian_vec(32);
  const Vector vb = b.gaussian_vec(32);
  for (Eigen::Index i = 0; i < 32; ++i) CHECK(va[i] == vb[i]);
  CHECK(a.counter == b.counter);
}

TEST_CASE("rng: labeled splits produce different sequences") {
  RngStream base(42);
  RngStream a = base.split("a");
  RngStream b = base.split("b");
  bool any_diff = false;
  for (int i = 0; i < 8; ++i) {
    if (a.next_u64() != b.next_u64()) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("rng: splits are independent of parent draw position") {
  RngStream a(9);
  RngStream b(9);
  b.uniform();
  b.uniform();
  RngStream sa = a.split(3);
  RngStream sb = b.split(3);
  CHECK(sa.next_u64() == sb.next_u64());
}

TEST_CASE("rng: 1e5 gaussian draws have mean ~0 and variance ~1") {
  RngStream rng(123);
  const int n = 100000;
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.gaussian();
    sum += z;
    sum_sq += z * z;
  }
  const double mean = sum / n;
  const double var = sum_sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("rng: uniform draws stay in [0, 1)") {
  RngStream rng(77);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("checkpoint blob round-trips spec and parameters") {
  MlpSpec spec{{4, 16, 16, 3}, Activation::kTanh};
  RngStream rng(31);
  const Vector params = mlp_init(spec, rng);
  std::stringstream buf;
  save_mlp(buf, spec, params);
  MlpSpec spec2;
  Vector params2;
  load_mlp(buf, spec2, params2);
  CHECK(spec2 == spec);
  REQUIRE(params2.size() == params.size());
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    CHECK(params2[i] == params[i]);
  }
}

TEST_CASE("mlp init stays inside the fan bound with zero biases") {
  MlpSpec spec{{6, 10, 2}, Activation::kRelu};
  RngStream rng(8);
  const Vector params = mlp_init(spec, rng);
  const double bound0 = std::sqrt(6.0 / (6 + 10));
  for (Eigen::Index i = 0; i < 60; ++i) {
    CHECK(std::abs(params[i]) <= bound0);
  }
  for (Eigen::Index i = 60; i < 70; ++i) CHECK(params[i] == 0.0);
}
