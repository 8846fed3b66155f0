#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "failscape/rng.hpp"

namespace failscape {

struct Experience {
  Eigen::VectorXd observation;
  std::size_t action = 0;
  double reward = 0.0;
  Eigen::VectorXd next_observation;
  bool done = false;
};

// Fixed-capacity ring; the oldest experience is overwritten once full.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void add(Experience e);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Experience& at(std::size_t i) const { return items_.at(i); }

  // `batch` distinct indices drawn uniformly (Floyd's algorithm).
  // Throws Error(kInvalidArgument) if batch > size().
  std::vector<std::size_t> sample_indices(std::size_t batch, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<Experience> items_;
};

}  // namespace failscape
