#include "failscape/replay_buffer.hpp"

#include <algorithm>

#include "failscape/errors.hpp"

namespace failscape {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw Error(ErrorCode::kInvalidArgument, "replay capacity must be positive");
  items_.reserve(capacity_);
}

void ReplayBuffer::add(Experience e) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(e));
  } else {
    items_[next_] = std::move(e);
  }
  next_ = (next_ + 1) % capacity_;
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t batch, Rng& rng) const {
  const std::size_t n = items_.size();
  if (batch > n) {
    throw Error(ErrorCode::kInvalidArgument, "batch larger than replay buffer contents");
  }
  std::vector<std::size_t> chosen;
  chosen.reserve(batch);
  for (std::size_t j = n - batch; j < n; ++j) {
    std::uniform_int_distribution<std::size_t> pick(0, j);
    const std::size_t t = pick(rng);
    if (std::find(chosen.begin(), chosen.end(), t) == chosen.end()) {
      chosen.push_back(t);
    } else {
      chosen.push_back(j);
    }
  }
  return chosen;
}

}  // namespace failscape
