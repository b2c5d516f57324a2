#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "livemap/error.hpp"
#include "livemap/profiles.hpp"

namespace livemap::simnet {

using VehicleId = std::int64_t;
using TaskId = std::uint64_t;

struct SimConfig {
  std::int64_t tick_ms = 1;
  double uplink_bw_hz = 1e6;
  double downlink_bw_hz = 1e6;
  double carrier_ghz = 3.5;
  Eigen::Vector3d bs_position = Eigen::Vector3d::Zero();
  double bs_height_m = 10.0;
  double ue_height_m = 1.5;
  double tx_power_min_dbm = 1.0;
  double tx_power_max_dbm = 22.0;
  std::int64_t tx_redraw_ms = 1000;
  double bs_tx_power_dbm = 22.0;
  double noise_dbm_per_hz = -174.0;
  int server_count = 2;
  double server_speed = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
};

enum class Stage { kOnboard, kUplink, kQueued, kServing, kBroadcast, kDone };
std::string_view to_string(Stage s);

struct Task {
  TaskId id = 0;
  VehicleId vehicle_id = 0;
  int decision = 0;
  int n_objects = 0;
  double remaining_onboard_ms = 0.0;
  double uplink_bits_remaining = 0.0;
  double server_ms_remaining = 0.0;
  double broadcast_bits_remaining = 0.0;
  std::int64_t t_created = 0;
  std::optional<std::int64_t> t_completed;
  Stage stage = Stage::kOnboard;
  std::array<std::int64_t, 6> stage_entered{};  // time each stage was entered
};

struct StageEvent {
  std::int64_t time_ms = 0;
  TaskId task = 0;
  VehicleId vehicle = 0;
  Stage from = Stage::kOnboard;
  Stage to = Stage::kOnboard;
};

struct Completion {
  TaskId task = 0;
  VehicleId vehicle = 0;
  int decision = 0;
  std::int64_t created_ms = 0;
  std::int64_t completed_ms = 0;
  double latency_ms = 0.0;
};

// UMi street-canyon line-of-sight path loss in dB. d2d below 1 m is clamped
// to 1 m.
double path_loss_db(double d2d_m, const SimConfig& cfg);

// Shannon rate over an equal bandwidth share with thermal noise.
double data_rate_bps(double tx_dbm, double pl_db, double share_hz, const SimConfig& cfg);

// Draws the four task quantities for decision y. Onboard time is scaled by
// 1 / capability, server time by 1 / server_speed at run time.
template <typename Rng>
Task sample_task(VehicleId vehicle, int y, int n_objects, const scenario::ProfileTable& profiles, Rng& rng) {
  const auto& p = profiles.at(y);
  auto positive_normal = [&rng](double mean, double stdev) {
    if (stdev <= 0.0) return mean;
    std::normal_distribution<double> d(mean, stdev);
    return std::max(0.0, d(rng));
  };
  Task t;
  t.vehicle_id = vehicle;
  t.decision = y;
  t.n_objects = n_objects;
  t.remaining_onboard_ms = positive_normal(p.onboard_ms_mean, p.onboard_ms_stdev);
  t.uplink_bits_remaining = 8.0 * p.uplink_bytes(n_objects);
  t.server_ms_remaining = positive_normal(p.server_ms_mean, p.server_ms_stdev);
  return t;
}

struct TickResult {
  std::vector<StageEvent> transitions;
  std::vector<Completion> completions;
};

// Time-driven engine: onboard compute -> shared uplink -> FIFO queue with
// parallel servers -> shared downlink broadcast.
class Engine {
 public:
  Engine(SimConfig cfg, scenario::ProfileTable profiles);

  const SimConfig& config() const { return cfg_; }
  const scenario::ProfileTable& profiles() const { return profiles_; }
  std::int64_t now_ms() const { return now_; }
  std::mt19937_64& rng() { return rng_; }

  void add_vehicle(VehicleId id, double capability_factor);
  void set_position(VehicleId id, const Eigen::Vector3d& ground_position);
  bool has_vehicle(VehicleId id) const { return vehicles_.count(id) != 0; }
  double tx_power_dbm(VehicleId id) const;
  void set_tx_power_dbm(VehicleId id, double dbm);
  double rss_dbm(VehicleId id) const;
  // Uplink rate the vehicle would get if it started transmitting now.
  double uplink_rate_estimate(VehicleId id) const;

  // Samples the task from the profile table with the engine RNG and
  // registers it; latency accounting starts now.
  TaskId submit(VehicleId vehicle, int decision, int n_objects);
  TaskId submit(Task task);

  // Broadcast size in bits, evaluated when the server finishes a task.
  void set_broadcast_sizer(std::function<double(const Task&)> sizer) { sizer_ = std::move(sizer); }
  // Line-delimited JSON stage transitions.
  void set_event_log(std::ostream* out) { event_log_ = out; }

  TickResult tick();

  const std::map<TaskId, Task>& in_flight() const { return tasks_; }
  std::size_t submitted() const { return submitted_; }
  std::size_t completed() const { return completed_; }
  std::size_t queue_length() const { return fifo_.size(); }
  std::size_t serving_count() const { return serving_; }
  std::size_t count_in_stage(Stage s) const;
  double last_uplink_share_sum() const { return last_uplink_share_sum_; }
  // Task ids in the order they entered a server slot.
  const std::vector<TaskId>& service_order() const { return service_order_; }

 private:
  struct Vehicle {
    double capability = 1.0;
    Eigen::Vector3d position = Eigen::Vector3d::Zero();
    double tx_power_dbm = 0.0;
  };

  double distance_2d(const Vehicle& v) const;
  void redraw_tx_powers();
  void transition(Task& t, Stage to, TickResult& out);

  SimConfig cfg_;
  scenario::ProfileTable profiles_;
  std::mt19937_64 rng_;
  std::int64_t now_ = 0;
  std::int64_t next_redraw_ = 0;
  std::map<VehicleId, Vehicle> vehicles_;
  std::map<TaskId, Task> tasks_;
  std::deque<TaskId> fifo_;
  std::size_t serving_ = 0;
  TaskId next_task_ = 1;
  std::size_t submitted_ = 0;
  std::size_t completed_ = 0;
  double last_uplink_share_sum_ = 0.0;
  std::vector<TaskId> service_order_;
  std::function<double(const Task&)> sizer_;
  std::ostream* event_log_ = nullptr;
};

}  // namespace livemap::simnet
