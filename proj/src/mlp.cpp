#include "coplanner/mlp.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian");

namespace coplanner {

namespace {

using WeightMap = Eigen::Map<const RowMajorMatrix>;
using WeightMutMap = Eigen::Map<RowMajorMatrix>;

void apply_activation(Matrix& z, Activation act) {
  if (act == Activation::kRelu) {
    z = z.cwiseMax(0.0);
  } else {
    z = z.array().tanh().matrix();
  }
}

// derivative expressed through the post-activation value
Matrix activation_grad(const Matrix& post, Activation act) {
  if (act == Activation::kRelu) {
    return (post.array() > 0.0).cast<double>().matrix();
  }
  return (1.0 - post.array().square()).matrix();
}

}  // namespace

void MlpSpec::validate() const {
  if (widths.size() < 2) {
    throw std::invalid_argument("MlpSpec: need at least 2 widths");
  }
  for (int w : widths) {
    if (w < 1) throw std::invalid_argument("MlpSpec: widths must be >= 1");
  }
}

Eigen::Index MlpSpec::param_count() const {
  Eigen::Index n = 0;
  for (int l = 0; l + 1 < static_cast<int>(widths.size()); ++l) {
    n += static_cast<Eigen::Index>(widths[l + 1]) * widths[l] + widths[l + 1];
  }
  return n;
}

Eigen::Index MlpSpec::weight_offset(int layer) const {
  Eigen::Index off = 0;
  for (int l = 0; l < layer; ++l) {
    off += static_cast<Eigen::Index>(widths[l + 1]) * widths[l] + widths[l + 1];
  }
  return off;
}

Eigen::Index MlpSpec::bias_offset(int layer) const {
  return weight_offset(layer) +
         static_cast<Eigen::Index>(widths[layer + 1]) * widths[layer];
}

Vector mlp_init(const MlpSpec& spec, RngStream& rng) {
  spec.validate();
  Vector params = Vector::Zero(spec.param_count());
  for (int l = 0; l < spec.num_layers(); ++l) {
    const int fan_in = spec.widths[l];
    const int fan_out = spec.widths[l + 1];
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    const Eigen::Index w0 = spec.weight_offset(l);
    const Eigen::Index nw = static_cast<Eigen::Index>(fan_out) * fan_in;
    for (Eigen::Index i = 0; i < nw; ++i) {
      params[w0 + i] = rng.uniform(-bound, bound);
    }
    // biases stay zero
  }
  return params;
}

Matrix mlp_forward_batch(const MlpSpec& spec, const Vector& params,
                         const Matrix& inputs, MlpCache* cache) {
  spec.validate();
  if (params.size() != spec.param_count()) {
    throw std::invalid_argument("mlp_forward: parameter count mismatch");
  }
  if (inputs.cols() != spec.input_dim()) {
    throw std::invalid_argument("mlp_forward: input width mismatch");
  }
  if (cache) {
    cache->acts.clear();
    cache->acts.push_back(inputs);
  }
  Matrix h = inputs;
  for (int l = 0; l < spec.num_layers(); ++l) {
    const int in = spec.widths[l];
    const int out = spec.widths[l + 1];
    WeightMap w(params.data() + spec.weight_offset(l), out, in);
    const auto b = params.segment(spec.bias_offset(l), out);
    Matrix z = h * w.transpose();
    z.rowwise() += b.transpose();
    if (l + 1 < spec.num_layers()) apply_activation(z, spec.activation);
    h = std::move(z);
    if (cache) cache->acts.push_back(h);
  }
  return h;
}

Vector mlp_forward(const MlpSpec& spec, const Vector& params,
                   const Vector& input) {
  return mlp_forward_batch(spec, params, input.transpose()).row(0);
}

void mlp_backward_batch(const MlpSpec& spec, const Vector& params,
                        const MlpCache& cache, const Matrix& upstream,
                        Vector& param_grad, Matrix* input_grad) {
  const int layers = spec.num_layers();
  if (static_cast<int>(cache.acts.size()) != layers + 1) {
    throw std::invalid_argument("mlp_backward: cache does not match spec");
  }
  if (upstream.cols() != spec.output_dim() ||
      upstream.rows() != cache.acts[0].rows()) {
    throw std::invalid_argument("mlp_backward: upstream shape mismatch");
  }
  if (param_grad.size() != spec.param_count()) {
    param_grad = Vector::Zero(spec.param_count());
  }
  Matrix delta = upstream;
  for (int l = layers - 1; l >= 0; --l) {
    if (!delta.allFinite()) {
      throw std::runtime_error("mlp_backward: non-finite gradient at layer " +
                               std::to_string(l));
    }
    const int in = spec.widths[l];
    const int out = spec.widths[l + 1];
    const Matrix& prev = cache.acts[l];
    WeightMutMap wg(param_grad.data() + spec.weight_offset(l), out, in);
    wg.noalias() += delta.transpose() * prev;
    param_grad.segment(spec.bias_offset(l), out) +=
        delta.colwise().sum().transpose();
    if (l == 0 && !input_grad) break;
    WeightMap w(params.data() + spec.weight_offset(l), out, in);
    Matrix prev_delta = delta * w;
    if (l > 0) {
      prev_delta.array() *= activation_grad(prev, spec.activation).array();
    }
    delta = std::move(prev_delta);
  }
  if (input_grad) *input_grad = delta;
}

MlpGradient mlp_gradient(const MlpSpec& spec, const Vector& params,
                         const Vector& input, const Vector& upstream) {
  if (upstream.size() != spec.output_dim()) {
    throw std::invalid_argument("mlp_gradient: upstream width mismatch");
  }
  MlpCache cache;
  mlp_forward_batch(spec, params, input.transpose(), &cache);
  MlpGradient grad;
  grad.params = Vector::Zero(spec.param_count());
  Matrix input_grad;
  mlp_backward_batch(spec, params, cache, upstream.transpose(), grad.params,
                     &input_grad);
  grad.input = input_grad.row(0);
  return grad;
}

namespace {

constexpr std::uint32_t kBlobMagic = 0x4e4e5043;  // "CPNN"
constexpr std::uint32_t kBlobVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint blob: truncated read");
  return v;
}

}  // namespace

void save_mlp(std::ostream& out, const MlpSpec& spec, const Vector& params) {
  spec.validate();
  if (params.size() != spec.param_count()) {
    throw std::invalid_argument("save_mlp: parameter count mismatch");
  }
  write_pod(out, kBlobMagic);
  write_pod(out, kBlobVersion);
  write_pod(out, static_cast<std::uint32_t>(spec.widths.size()));
  for (int w : spec.widths) write_pod(out, static_cast<std::int32_t>(w));
  write_pod(out, static_cast<std::uint8_t>(spec.activation));
  write_pod(out, static_cast<std::uint64_t>(params.size()));
  out.write(reinterpret_cast<const char*>(params.data()),
            static_cast<std::streamsize>(params.size() * sizeof(double)));
}

void load_mlp(std::istream& in, MlpSpec& spec, Vector& params) {
  if (read_pod<std::uint32_t>(in) != kBlobMagic) {
    throw std::runtime_error("checkpoint blob: bad magic");
  }
  if (read_pod<std::uint32_t>(in) != kBlobVersion) {
    throw std::runtime_error("checkpoint blob: unsupported version");
  }
  const auto n_widths = read_pod<std::uint32_t>(in);
  spec.widths.resize(n_widths);
  for (auto& w : spec.widths) w = read_pod<std::int32_t>(in);
  spec.activation = static_cast<Activation>(read_pod<std::uint8_t>(in));
  spec.validate();
  const auto count = read_pod<std::uint64_t>(in);
  if (count != static_cast<std::uint64_t>(spec.param_count())) {
    throw std::runtime_error("checkpoint blob: parameter count mismatch");
  }
  params.resize(static_cast<Eigen::Index>(count));
  in.read(reinterpret_cast<char*>(params.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw std::runtime_error("checkpoint blob: truncated parameters");
}

void save_mlp_file(const std::string& path, const MlpSpec& spec,
                   const Vector& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_mlp: cannot open " + path);
  save_mlp(out, spec, params);
}

void load_mlp_file(const std::string& path, MlpSpec& spec, Vector& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_mlp: cannot open " + path);
  load_mlp(in, spec, params);
}

}  // namespace coplanner
