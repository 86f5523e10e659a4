#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "coplanner/buffers.hpp"

using namespace coplanner;

namespace {

Transition make_transition(double tag) {
  Transition t;
  t.obs = Vector::Constant(2, tag);
  t.action = Vector::Constant(1, tag * 0.1);
  t.reward = tag;
  t.next_obs = Vector::Constant(2, tag + 1.0);
  return t;
}

ModelTransition make_model_transition(double tag) {
  ModelTransition m;
  m.t = make_transition(tag);
  m.member = static_cast<int>(tag);
  m.disagreement = tag * 0.01;
  return m;
}

}  // namespace

TEST_CASE("push to empty buffer gives size 1") {
  RealBuffer real;
  real.push(make_transition(1.0));
  CHECK(real.size() == 1);
  ModelBuffer model(4);
  model.push(make_model_transition(1.0));
  CHECK(model.size() == 1);
}

TEST_CASE("capacity-3 ring evicts the oldest, order preserved") {
  ModelBuffer buf(3);
  for (int i = 0; i < 4; ++i) buf.push(make_model_transition(i));
  REQUIRE(buf.size() == 3);
  CHECK(buf.at(0).t.reward == 1.0);
  CHECK(buf.at(1).t.reward == 2.0);
  CHECK(buf.at(2).t.reward == 3.0);
}

TEST_CASE("ring contents equal the tail of a list oracle after 1e4 pushes") {
  const std::size_t capacity = 257;
  ModelBuffer buf(capacity);
  std::vector<double> oracle;
  for (int i = 0; i < 10000; ++i) {
    buf.push(make_model_transition(i));
    oracle.push_back(i);
  }
  REQUIRE(buf.size() == capacity);
  const std::size_t start = oracle.size() - capacity;
  for (std::size_t i = 0; i < capacity; ++i) {
    CHECK(buf.at(i).t.reward == oracle[start + i]);
  }
}

TEST_CASE("non-finite transitions are rejected with diagnostics") {
  RealBuffer real;
  Transition bad = make_transition(1.0);
  bad.reward = std::numeric_limits<double>::infinity();
  CHECK_THROWS_WITH_AS(real.push(bad), "buffer push: non-finite reward",
                       std::invalid_argument);
  ModelBuffer model(4);
  ModelTransition bad_model = make_model_transition(1.0);
  bad_model.t.next_obs[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(model.push(bad_model), std::invalid_argument);
}

TEST_CASE("real_ratio boundaries draw from a single source") {
  RealBuffer real;
  ModelBuffer model(16);
  for (int i = 0; i < 8; ++i) {
    real.push(make_transition(100 + i));
    model.push(make_model_transition(i));
  }
  RngStream rng(3);
  const auto all_model = sample_mixed(real, model, 32, 0.0, rng);
  for (const auto& t : all_model) CHECK(t.reward < 100.0);
  const auto all_real = sample_mixed(real, model, 32, 1.0, rng);
  for (const auto& t : all_real) CHECK(t.reward >= 100.0);
}

TEST_CASE("real_ratio 0.5 with batch 256 gives exactly 128 + 128") {
  RealBuffer real;
  ModelBuffer model(16);
  for (int i = 0; i < 4; ++i) {
    real.push(make_transition(100 + i));
    model.push(make_model_transition(i));
  }
  RngStream rng(9);
  const auto batch = sample_mixed(real, model, 256, 0.5, rng);
  int n_real = 0;
  for (const auto& t : batch) {
    if (t.reward >= 100.0) ++n_real;
  }
  CHECK(n_real == 128);
  CHECK(batch.size() == 256);
}

TEST_CASE("mixed composition matches the round-half-up rule on a grid") {
  CHECK(real_share(256, 0.5) == 128);
  CHECK(real_share(10, 0.05) == 1);   // 0.5 rounds up
  CHECK(real_share(10, 0.04) == 0);
  CHECK(real_share(3, 0.5) == 2);     // 1.5 rounds up
  CHECK(real_share(7, 1.0) == 7);
  CHECK(real_share(7, 0.0) == 0);
  RealBuffer real;
  ModelBuffer model(8);
  for (int i = 0; i < 4; ++i) {
    real.push(make_transition(100 + i));
    model.push(make_model_transition(i));
  }
  RngStream rng(5);
  for (int batch_size : {1, 2, 3, 7, 32, 101}) {
    for (double ratio : {0.0, 0.1, 0.25, 1.0 / 3.0, 0.5, 0.75, 0.9, 1.0}) {
      const auto batch = sample_mixed(real, model, batch_size, ratio, rng);
      int n_real = 0;
      for (const auto& t : batch) {
        if (t.reward >= 100.0) ++n_real;
      }
      CHECK(n_real == real_share(batch_size, ratio));
    }
  }
}

TEST_CASE("empty required source raises an error naming the source") {
  RealBuffer real;
  ModelBuffer model(4);
  model.push(make_model_transition(1.0));
  RngStream rng(1);
  CHECK_THROWS_WITH_AS(sample_mixed(real, model, 4, 0.5, rng),
                       "sample_mixed: real buffer is empty",
                       std::runtime_error);
  real.push(make_transition(1.0));
  ModelBuffer empty_model(4);
  CHECK_THROWS_WITH_AS(sample_mixed(real, empty_model, 4, 0.5, rng),
                       "sample_mixed: model buffer is empty",
                       std::runtime_error);
  // ratio 1 never touches the model side
  CHECK_NOTHROW(sample_mixed(real, empty_model, 4, 1.0, rng));
}

TEST_CASE("single draws from a 10-element buffer are uniform within 3 sigma") {
  RealBuffer real;
  ModelBuffer model(1);
  model.push(make_model_transition(0.0));
  for (int i = 0; i < 10; ++i) real.push(make_transition(i));
  RngStream rng(2718);
  std::vector<int> counts(10, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const auto batch = sample_mixed(real, model, 1, 1.0, rng);
    counts[static_cast<int>(batch[0].reward)] += 1;
  }
  const double sigma = std::sqrt(0.1 * 0.9 / n);
  for (int c : counts) {
    CHECK(std::abs(c / static_cast<double>(n) - 0.1) < 3.0 * sigma);
  }
}

TEST_CASE("buffer dump round-trips through the binary format") {
  ModelBuffer buf(64);
  for (int i = 0; i < 20; ++i) buf.push(make_model_transition(i));
  std::stringstream stream;
  buf.dump(stream);
  const ModelBuffer loaded = ModelBuffer::load(stream);
  REQUIRE(loaded.size() == buf.size());
  CHECK(loaded.capacity() == buf.capacity());
  for (std::size_t i = 0; i < buf.size(); ++i) {
    CHECK(loaded.at(i).t.reward == buf.at(i).t.reward);
    CHECK(loaded.at(i).member == buf.at(i).member);
    CHECK(loaded.at(i).disagreement == buf.at(i).disagreement);
    CHECK(loaded.at(i).t.obs == buf.at(i).t.obs);
  }
}
