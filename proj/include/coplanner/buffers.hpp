#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "coplanner/rng.hpp"
#include "coplanner/types.hpp"

namespace coplanner {

// Append-only store of real transitions (D_e), unbounded at desk scale.
class RealBuffer {
 public:
  void push(Transition t);
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  const Transition& at(std::size_t i) const { return data_.at(i); }
  const std::vector<Transition>& all() const { return data_; }

 private:
  std::vector<Transition> data_;
};

// Model-generated transition plus its audit trail: the ensemble member that
// produced it and the disagreement at generation time.
struct ModelTransition {
  Transition t;
  int member = -1;
  double disagreement = 0.0;
};

// FIFO ring of model transitions (D_m).
class ModelBuffer {
 public:
  explicit ModelBuffer(std::size_t capacity = 100000);

  void push(ModelTransition t);
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return size_ == 0; }
  // i = 0 is the oldest surviving entry
  const ModelTransition& at(std::size_t i) const;

  // Binary record dump for post-hoc uncertainty analysis; format documented
  // in the README.
  void dump(std::ostream& out) const;
  static ModelBuffer load(std::istream& in);

 private:
  std::vector<ModelTransition> ring_;
  std::size_t capacity_;
  std::size_t head_ = 0;  // index of the oldest entry
  std::size_t size_ = 0;
};

// floor(ratio * batch + 0.5), the real-sample share of a mixed batch
int real_share(int batch_size, double real_ratio);

// Mixed batch: real_share(..) samples uniformly with replacement from the
// real buffer, the remainder from the model buffer, shuffled together.
std::vector<Transition> sample_mixed(const RealBuffer& real,
                                     const ModelBuffer& model, int batch_size,
                                     double real_ratio, RngStream& rng);

}  // namespace coplanner
