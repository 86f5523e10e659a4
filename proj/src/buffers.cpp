#include "coplanner/buffers.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace coplanner {

namespace {

void check_finite(const Transition& t) {
  if (!t.obs.allFinite()) {
    throw std::invalid_argument("buffer push: non-finite obs");
  }
  if (!t.action.allFinite()) {
    throw std::invalid_argument("buffer push: non-finite action");
  }
  if (!std::isfinite(t.reward)) {
    throw std::invalid_argument("buffer push: non-finite reward");
  }
  if (!t.next_obs.allFinite()) {
    throw std::invalid_argument("buffer push: non-finite next_obs");
  }
}

}  // namespace

void RealBuffer::push(Transition t) {
  check_finite(t);
  data_.push_back(std::move(t));
}

ModelBuffer::ModelBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) {
    throw std::invalid_argument("ModelBuffer: capacity must be positive");
  }
  ring_.reserve(capacity_);
}

void ModelBuffer::push(ModelTransition t) {
  check_finite(t.t);
  if (!std::isfinite(t.disagreement)) {
    throw std::invalid_argument("buffer push: non-finite disagreement");
  }
  if (size_ < capacity_) {
    ring_.push_back(std::move(t));
    ++size_;
  } else {
    ring_[head_] = std::move(t);
    head_ = (head_ + 1) % capacity_;
  }
}

const ModelTransition& ModelBuffer::at(std::size_t i) const {
  if (i >= size_) throw std::out_of_range("ModelBuffer: index out of range");
  return ring_[(head_ + i) % capacity_];
}

int real_share(int batch_size, double real_ratio) {
  return static_cast<int>(std::floor(real_ratio * batch_size + 0.5));
}

std::vector<Transition> sample_mixed(const RealBuffer& real,
                                     const ModelBuffer& model, int batch_size,
                                     double real_ratio, RngStream& rng) {
  if (batch_size < 1) {
    throw std::invalid_argument("sample_mixed: batch_size must be >= 1");
  }
  if (real_ratio < 0.0 || real_ratio > 1.0) {
    throw std::invalid_argument("sample_mixed: real_ratio must be in [0, 1]");
  }
  const int n_real = real_share(batch_size, real_ratio);
  const int n_model = batch_size - n_real;
  if (n_real > 0 && real.empty()) {
    throw std::runtime_error("sample_mixed: real buffer is empty");
  }
  if (n_model > 0 && model.empty()) {
    throw std::runtime_error("sample_mixed: model buffer is empty");
  }
  std::vector<Transition> batch;
  batch.reserve(batch_size);
  for (int i = 0; i < n_real; ++i) {
    batch.push_back(real.at(rng.next_below(real.size())));
  }
  for (int i = 0; i < n_model; ++i) {
    batch.push_back(model.at(rng.next_below(model.size())).t);
  }
  // Fisher-Yates
  for (int i = batch_size - 1; i > 0; --i) {
    const auto j = static_cast<int>(rng.next_below(i + 1));
    std::swap(batch[i], batch[j]);
  }
  return batch;
}

namespace {

constexpr std::uint32_t kDumpMagic = 0x46425043;  // "CPBF"
constexpr std::uint32_t kDumpVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("buffer dump: truncated read");
  return v;
}

void write_vec(std::ostream& out, const Vector& v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

Vector read_vec(std::istream& in, Eigen::Index n) {
  Vector v(n);
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw std::runtime_error("buffer dump: truncated vector");
  return v;
}

}  // namespace

void ModelBuffer::dump(std::ostream& out) const {
  write_pod(out, kDumpMagic);
  write_pod(out, kDumpVersion);
  const std::uint32_t obs_dim =
      size_ > 0 ? static_cast<std::uint32_t>(at(0).t.obs.size()) : 0;
  const std::uint32_t act_dim =
      size_ > 0 ? static_cast<std::uint32_t>(at(0).t.action.size()) : 0;
  write_pod(out, obs_dim);
  write_pod(out, act_dim);
  write_pod(out, static_cast<std::uint64_t>(capacity_));
  write_pod(out, static_cast<std::uint64_t>(size_));
  for (std::size_t i = 0; i < size_; ++i) {
    const ModelTransition& m = at(i);
    write_vec(out, m.t.obs);
    write_vec(out, m.t.action);
    write_pod(out, m.t.reward);
    write_vec(out, m.t.next_obs);
    write_pod(out, static_cast<std::uint8_t>(m.t.done));
    write_pod(out, static_cast<std::uint8_t>(m.t.truncated));
    write_pod(out, static_cast<std::int32_t>(m.member));
    write_pod(out, m.disagreement);
  }
}

ModelBuffer ModelBuffer::load(std::istream& in) {
  if (read_pod<std::uint32_t>(in) != kDumpMagic) {
    throw std::runtime_error("buffer dump: bad magic");
  }
  if (read_pod<std::uint32_t>(in) != kDumpVersion) {
    throw std::runtime_error("buffer dump: unsupported version");
  }
  const auto obs_dim = read_pod<std::uint32_t>(in);
  const auto act_dim = read_pod<std::uint32_t>(in);
  const auto capacity = read_pod<std::uint64_t>(in);
  const auto count = read_pod<std::uint64_t>(in);
  ModelBuffer buf(capacity);
  for (std::uint64_t i = 0; i < count; ++i) {
    ModelTransition m;
    m.t.obs = read_vec(in, obs_dim);
    m.t.action = read_vec(in, act_dim);
    m.t.reward = read_pod<double>(in);
    m.t.next_obs = read_vec(in, obs_dim);
    m.t.done = read_pod<std::uint8_t>(in) != 0;
    m.t.truncated = read_pod<std::uint8_t>(in) != 0;
    m.member = read_pod<std::int32_t>(in);
    m.disagreement = read_pod<double>(in);
    buf.push(std::move(m));
  }
  return buf;
}

}  // namespace coplanner
