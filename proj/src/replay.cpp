#include "livemap/replay.hpp"

#include <algorithm>
#include <cmath>

namespace livemap::agent {

ReplayBuffer::ReplayBuffer(std::size_t capacity, double alpha) : capacity_(capacity), alpha_(alpha) {
  if (capacity == 0) throw Error(ErrorKind::kConfig, "replay capacity must be positive");
  if (!(alpha >= 0.0)) throw Error(ErrorKind::kConfig, "alpha must be non-negative");
  while (leaf_base_ < capacity_) leaf_base_ <<= 1;
  sum_.assign(2 * leaf_base_, 0.0);
  max_.assign(2 * leaf_base_, 0.0);
  items_.reserve(std::min<std::size_t>(capacity_, 1u << 16));
}

double ReplayBuffer::max_priority() const { return size_ == 0 ? 1.0 : max_[1]; }

std::size_t ReplayBuffer::push(Transition t) {
  const double p = max_priority();
  return push(std::move(t), p);
}

std::size_t ReplayBuffer::push(Transition t, double priority) {
  const std::size_t slot = next_;
  if (items_.size() < capacity_)
    items_.push_back(std::move(t));
  else
    items_[slot] = std::move(t);
  next_ = (next_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
  set_priority(slot, priority);
  return slot;
}

void ReplayBuffer::set_priority(std::size_t i, double priority) {
  if (i >= size_) throw Error(ErrorKind::kInsufficientBuffer, "priority index out of range");
  if (!(priority > 0.0) || !std::isfinite(priority)) throw Error(ErrorKind::kConfig, "priority must be positive");
  items_[i].priority = priority;
  write_leaf(i, priority);
}

void ReplayBuffer::write_leaf(std::size_t i, double raw) {
  std::size_t node = leaf_base_ + i;
  sum_[node] = std::pow(raw, alpha_);
  max_[node] = raw;
  for (node >>= 1; node >= 1; node >>= 1) {
    sum_[node] = sum_[2 * node] + sum_[2 * node + 1];
    max_[node] = std::max(max_[2 * node], max_[2 * node + 1]);
  }
}

std::size_t ReplayBuffer::find(double mass) const {
  std::size_t node = 1;
  while (node < leaf_base_) {
    const std::size_t left = 2 * node;
    if (mass < sum_[left] || sum_[left + 1] == 0.0) {
      node = left;
    } else {
      mass -= sum_[left];
      node = left + 1;
    }
  }
  // Rounding can land on an empty trailing leaf; fall back to the last item.
  return std::min(node - leaf_base_, size_ - 1);
}

}  // namespace livemap::agent
