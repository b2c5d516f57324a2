#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "livemap/neural.hpp"
#include "livemap/replay.hpp"

namespace livemap::agent {

using QNet = neural::DenseNet<float>;

// Raw DRL observation: vehicle status, server status, system workload.
struct StateVector {
  double rss_dbm = -80.0;
  double cpu_count = 4.0;
  double cpu_freq_ghz = 1.4;
  double mem_gb = 4.0;
  double gpu_cores = 128.0;
  double gpu_freq_ghz = 0.9;
  double server_capability = 1.0;
  double wireless_bandwidth_hz = 1e6;
  double connected_vehicles = 1.0;
  double queued_tasks = 0.0;

  static constexpr int kSize = 10;
  std::array<double, kSize> as_array() const;
};

// Per-field [min, max] mapped linearly onto [-1, 1] (clamped).
struct StateBounds {
  std::array<double, StateVector::kSize> lo{-110.0, 1.0, 0.5, 1.0, 32.0, 0.2, 0.25, 0.25e6, 0.0, 0.0};
  std::array<double, StateVector::kSize> hi{-30.0, 16.0, 3.0, 32.0, 1024.0, 2.0, 4.0, 4e6, 60.0, 60.0};

  Eigen::VectorXf normalize(const StateVector& s) const;
  static const std::array<const char*, StateVector::kSize>& field_names();
};

struct EpsilonSchedule {
  double start = 0.5;
  double end = 0.1;
  std::int64_t steps = 100000;

  double at(std::int64_t step) const;
};

struct DqnConfig {
  std::vector<int> hidden{256, 256};
  double gamma = 0.9;
  double learning_rate = 5e-4;
  std::size_t batch_size = 512;
  std::size_t buffer_capacity = 100000;
  double alpha = 0.6;
  double priority_floor = 1e-3;
  double tau = 0.005;                  // Polyak factor per train step
  std::int64_t hard_update_period = 0;  // > 0: hard copy every N train steps instead
  double grad_clip_norm = 10.0;         // > 0: rescale the gradient to at most this L2 norm; 0 disables
  float leaky_slope = 0.01f;
  std::uint64_t seed = 1;
};

// Greedy with probability 1 - epsilon, uniform otherwise; ties go to the
// lowest action index.
template <typename Rng>
int select_action(const QNet& qnet, const Eigen::VectorXf& s, double epsilon, Rng& rng);

int greedy_action(const Eigen::VectorXf& q_values);

// r + gamma * max_a Q'(s_next, a); continuing task, no terminal states.
double td_target(double reward, const Eigen::VectorXf& next_state, const QNet& target, double gamma);

// target <- tau * online + (1 - tau) * target
void update_target(const QNet& online, QNet& target, double tau);

struct PendingRecord {
  std::int64_t vehicle_id = 0;
  Eigen::VectorXf state;
  int action = 0;
  std::int64_t issue_time_ms = 0;
};

class DqnAgent {
 public:
  DqnAgent(int state_dim, int num_actions, DqnConfig cfg);

  int num_actions() const { return q_.output_dim(); }
  int state_dim() const { return q_.input_dim(); }
  const DqnConfig& config() const { return cfg_; }

  const QNet& qnet() const { return q_; }
  const QNet& target_net() const { return target_; }
  QNet& mutable_qnet() { return q_; }
  QNet& mutable_target_net() { return target_; }
  ReplayBuffer& buffer() { return buffer_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  std::mt19937_64& rng() { return rng_; }
  std::int64_t train_steps() const { return train_steps_; }

  Eigen::VectorXf q_values(const Eigen::VectorXf& s) const;
  int act(const Eigen::VectorXf& s, double epsilon) { return select_action(q_, s, epsilon, rng_); }

  // Delayed-reward bookkeeping keyed by request id.
  void add_pending(std::uint64_t id, PendingRecord rec);
  bool has_pending(std::uint64_t id) const { return pending_.count(id) != 0; }
  std::size_t pending_count() const { return pending_.size(); }
  // Requests that will never complete (episode cut short).
  void clear_pending() { pending_.clear(); }
  Transition complete_reward(std::uint64_t id, double latency_s, const Eigen::VectorXf& next_state);

  void remember(Transition t) { buffer_.push(std::move(t)); }

  struct StepResult {
    double loss = 0.0;
    std::vector<std::size_t> indices;
    std::vector<double> td_errors;
  };
  // Prioritized batch, mean-squared Bellman error, one optimizer step, then
  // sampled priorities set to |td| + floor and the target network updated.
  StepResult train_step();

 private:
  DqnConfig cfg_;
  QNet q_;
  QNet target_;
  neural::AdamState<float> opt_;
  ReplayBuffer buffer_;
  std::mt19937_64 rng_;
  std::map<std::uint64_t, PendingRecord> pending_;
  std::int64_t train_steps_ = 0;
};

// Checkpoint directory: qnet.bin, target.bin and a JSON sidecar with the
// normalization bounds and hyperparameters.
void save_checkpoint(const DqnAgent& agent, const StateBounds& bounds, const std::filesystem::path& dir);
struct Checkpoint {
  QNet qnet;
  QNet target;
  StateBounds bounds;
  DqnConfig config;
};
Checkpoint load_checkpoint(const std::filesystem::path& dir);

template <typename Rng>
int select_action(const QNet& qnet, const Eigen::VectorXf& s, double epsilon, Rng& rng) {
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (epsilon > 0.0 && coin(rng) < epsilon) {
    std::uniform_int_distribution<int> pick(0, qnet.output_dim() - 1);
    return pick(rng);
  }
  return greedy_action(qnet.predict(s).col(0));
}

}  // namespace livemap::agent
