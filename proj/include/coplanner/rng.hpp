#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

#include "coplanner/types.hpp"

namespace coplanner {

namespace detail {

// splitmix64 finalizer
inline constexpr std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

// FNV-1a, used to key splits by label
inline constexpr std::uint64_t hash_label(std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

// Counter-based stream: every draw is a pure function of
// (seed, stream, counter), and splits derive child stream ids from the
// parent identity alone, independent of how many draws were taken.
struct RngStream {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  std::uint64_t counter = 0;

  RngStream() = default;
  explicit RngStream(std::uint64_t seed_, std::uint64_t stream_ = 0)
      : seed(seed_), stream(stream_) {}

  std::uint64_t next_u64() {
    const std::uint64_t base = detail::mix64(seed ^ detail::mix64(stream));
    return detail::mix64(base + detail::kGolden * ++counter);
  }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // index in [0, n)
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

  // Box-Muller; consumes exactly two raw draws per value
  double gaussian() {
    const double u1 =
        static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  Vector gaussian_vec(Eigen::Index n) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = gaussian();
    return v;
  }

  Vector uniform_vec(Eigen::Index n) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = uniform();
    return v;
  }

  RngStream split(std::uint64_t label) const {
    RngStream child;
    child.seed = seed;
    child.stream =
        detail::mix64(stream ^ detail::mix64(label + detail::kGolden));
    return child;
  }

  RngStream split(std::string_view label) const {
    return split(detail::hash_label(label));
  }
};

}  // namespace coplanner
