#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "livemap/error.hpp"

namespace livemap::agent {

struct Transition {
  Eigen::VectorXf state;
  int action = 0;
  float reward = 0.0f;
  Eigen::VectorXf next_state;
  double priority = 1.0;  // raw priority; sampling weight is priority^alpha
};

// Proportional prioritized replay over a ring buffer. A sum tree holds the
// sampling weights and a max tree tracks the largest live raw priority.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, double alpha);

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return size_; }
  double alpha() const { return alpha_; }

  // New items enter with the current maximum priority (1.0 when empty).
  std::size_t push(Transition t);
  std::size_t push(Transition t, double priority);

  const Transition& at(std::size_t i) const { return items_.at(i); }
  double priority(std::size_t i) const { return items_.at(i).priority; }
  double weight(std::size_t i) const { return sum_[leaf_base_ + i]; }
  double total_weight() const { return sum_[1]; }
  double max_priority() const;
  double probability(std::size_t i) const { return weight(i) / total_weight(); }

  void set_priority(std::size_t i, double priority);

  // Index whose cumulative-weight interval contains `mass` in [0, total).
  std::size_t find(double mass) const;

  template <typename Rng>
  std::size_t sample_one(Rng& rng) const {
    if (size_ == 0) throw Error(ErrorKind::kInsufficientBuffer, "empty replay buffer");
    std::uniform_real_distribution<double> u(0.0, total_weight());
    return find(u(rng));
  }

  template <typename Rng>
  std::vector<std::size_t> sample(std::size_t batch, Rng& rng) const {
    if (size_ < batch) throw Error(ErrorKind::kInsufficientBuffer, "replay buffer smaller than batch");
    std::vector<std::size_t> out(batch);
    for (auto& i : out) i = sample_one(rng);
    return out;
  }

 private:
  void write_leaf(std::size_t i, double raw);

  std::size_t capacity_;
  double alpha_;
  std::size_t leaf_base_ = 1;
  std::vector<Transition> items_;
  std::vector<double> sum_;
  std::vector<double> max_;
  std::size_t next_ = 0;
  std::size_t size_ = 0;
};

}  // namespace livemap::agent
