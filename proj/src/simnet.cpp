#include "livemap/simnet.hpp"

#include <cmath>
#include <ostream>

#include <json.hpp>

#include "livemap/error.hpp"

namespace livemap::simnet {

namespace {
constexpr double kSpeedOfLight = 299792458.0;
constexpr double kDoneEps = 1e-9;
}  // namespace

void SimConfig::validate() const {
  if (tick_ms <= 0) throw Error(ErrorKind::kConfig, "tick_ms must be positive");
  if (!(uplink_bw_hz > 0.0) || !(downlink_bw_hz > 0.0)) throw Error(ErrorKind::kConfig, "bandwidths must be positive");
  if (server_count < 1) throw Error(ErrorKind::kConfig, "server_count must be >= 1");
  if (!(server_speed > 0.0)) throw Error(ErrorKind::kConfig, "server_speed must be positive");
  if (!(carrier_ghz > 0.0)) throw Error(ErrorKind::kConfig, "carrier_ghz must be positive");
  if (tx_power_min_dbm > tx_power_max_dbm) throw Error(ErrorKind::kConfig, "tx power range is empty");
  if (tx_redraw_ms <= 0) throw Error(ErrorKind::kConfig, "tx_redraw_ms must be positive");
}

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::kOnboard: return "onboard";
    case Stage::kUplink: return "uplink";
    case Stage::kQueued: return "queued";
    case Stage::kServing: return "serving";
    case Stage::kBroadcast: return "broadcast";
    case Stage::kDone: return "done";
  }
  return "?";
}

double path_loss_db(double d2d_m, const SimConfig& cfg) {
  const double d2d = std::max(d2d_m, 1.0);
  const double dh = cfg.bs_height_m - cfg.ue_height_m;
  const double d3d = std::sqrt(d2d * d2d + dh * dh);
  const double f_ghz = cfg.carrier_ghz;
  // Breakpoint with effective environment height 1 m.
  const double d_bp = 4.0 * (cfg.bs_height_m - 1.0) * (cfg.ue_height_m - 1.0) * f_ghz * 1e9 / kSpeedOfLight;
  if (d2d <= d_bp) return 32.4 + 21.0 * std::log10(d3d) + 20.0 * std::log10(f_ghz);
  return 32.4 + 40.0 * std::log10(d3d) + 20.0 * std::log10(f_ghz) - 9.5 * std::log10(d_bp * d_bp + dh * dh);
}

double data_rate_bps(double tx_dbm, double pl_db, double share_hz, const SimConfig& cfg) {
  if (!(share_hz > 0.0)) return 0.0;
  const double snr_db = tx_dbm - pl_db - (cfg.noise_dbm_per_hz + 10.0 * std::log10(share_hz));
  return share_hz * std::log2(1.0 + std::pow(10.0, snr_db / 10.0));
}

Engine::Engine(SimConfig cfg, scenario::ProfileTable profiles)
    : cfg_(std::move(cfg)), profiles_(std::move(profiles)), rng_(cfg_.seed) {
  cfg_.validate();
  profiles_.validate();
  next_redraw_ = cfg_.tx_redraw_ms;
}

void Engine::add_vehicle(VehicleId id, double capability_factor) {
  if (!(capability_factor > 0.0)) throw Error(ErrorKind::kConfig, "capability factor must be positive");
  Vehicle v;
  v.capability = capability_factor;
  std::uniform_real_distribution<double> tx(cfg_.tx_power_min_dbm, cfg_.tx_power_max_dbm);
  v.tx_power_dbm = tx(rng_);
  vehicles_[id] = v;
}

void Engine::set_position(VehicleId id, const Eigen::Vector3d& ground_position) {
  vehicles_.at(id).position = ground_position;
}

double Engine::tx_power_dbm(VehicleId id) const { return vehicles_.at(id).tx_power_dbm; }
void Engine::set_tx_power_dbm(VehicleId id, double dbm) { vehicles_.at(id).tx_power_dbm = dbm; }

double Engine::distance_2d(const Vehicle& v) const {
  return (v.position.head<2>() - cfg_.bs_position.head<2>()).norm();
}

double Engine::rss_dbm(VehicleId id) const {
  const auto& v = vehicles_.at(id);
  return v.tx_power_dbm - path_loss_db(distance_2d(v), cfg_);
}

double Engine::uplink_rate_estimate(VehicleId id) const {
  const auto& v = vehicles_.at(id);
  const double share = cfg_.uplink_bw_hz / static_cast<double>(count_in_stage(Stage::kUplink) + 1);
  return data_rate_bps(v.tx_power_dbm, path_loss_db(distance_2d(v), cfg_), share, cfg_);
}

void Engine::redraw_tx_powers() {
  std::uniform_real_distribution<double> tx(cfg_.tx_power_min_dbm, cfg_.tx_power_max_dbm);
  for (auto& [id, v] : vehicles_) v.tx_power_dbm = tx(rng_);
}

TaskId Engine::submit(VehicleId vehicle, int decision, int n_objects) {
  return submit(sample_task(vehicle, decision, n_objects, profiles_, rng_));
}

TaskId Engine::submit(Task task) {
  if (!vehicles_.count(task.vehicle_id)) throw Error(ErrorKind::kConfig, "unknown vehicle");
  profiles_.at(task.decision);
  task.id = next_task_++;
  task.stage = Stage::kOnboard;
  task.t_created = now_;
  task.t_completed.reset();
  task.stage_entered.fill(-1);
  task.stage_entered[static_cast<int>(Stage::kOnboard)] = now_;
  ++submitted_;
  const TaskId id = task.id;
  tasks_.emplace(id, std::move(task));
  return id;
}

std::size_t Engine::count_in_stage(Stage s) const {
  std::size_t n = 0;
  for (const auto& [id, t] : tasks_)
    if (t.stage == s) ++n;
  return n;
}

void Engine::transition(Task& t, Stage to, TickResult& out) {
  StageEvent ev{now_, t.id, t.vehicle_id, t.stage, to};
  t.stage = to;
  t.stage_entered[static_cast<int>(to)] = now_;
  out.transitions.push_back(ev);
  if (event_log_) {
    nlohmann::ordered_json j;
    j["tick"] = ev.time_ms;
    j["task"] = ev.task;
    j["vehicle"] = ev.vehicle;
    j["from"] = std::string(to_string(ev.from));
    j["to"] = std::string(to_string(ev.to));
    *event_log_ << j.dump() << '\n';
  }
}

TickResult Engine::tick() {
  TickResult out;
  while (now_ >= next_redraw_) {
    redraw_tx_powers();
    next_redraw_ += cfg_.tx_redraw_ms;
  }

  const std::size_t n_up = count_in_stage(Stage::kUplink);
  const std::size_t n_dl = count_in_stage(Stage::kBroadcast);
  const double up_share = n_up ? cfg_.uplink_bw_hz / static_cast<double>(n_up) : 0.0;
  const double dl_share = n_dl ? cfg_.downlink_bw_hz / static_cast<double>(n_dl) : 0.0;
  last_uplink_share_sum_ = up_share * static_cast<double>(n_up);
  const double dt_ms = static_cast<double>(cfg_.tick_ms);
  const double dt_s = dt_ms / 1000.0;

  std::vector<TaskId> finished;
  for (auto& [id, t] : tasks_) {
    bool done = false;
    switch (t.stage) {
      case Stage::kOnboard:
        t.remaining_onboard_ms = std::max(0.0, t.remaining_onboard_ms - dt_ms * vehicles_.at(t.vehicle_id).capability);
        done = t.remaining_onboard_ms <= kDoneEps;
        break;
      case Stage::kUplink: {
        const auto& v = vehicles_.at(t.vehicle_id);
        const double rate = data_rate_bps(v.tx_power_dbm, path_loss_db(distance_2d(v), cfg_), up_share, cfg_);
        t.uplink_bits_remaining = std::max(0.0, t.uplink_bits_remaining - rate * dt_s);
        done = t.uplink_bits_remaining <= kDoneEps;
        break;
      }
      case Stage::kServing:
        t.server_ms_remaining = std::max(0.0, t.server_ms_remaining - dt_ms * cfg_.server_speed);
        done = t.server_ms_remaining <= kDoneEps;
        break;
      case Stage::kBroadcast: {
        const auto& v = vehicles_.at(t.vehicle_id);
        const double rate = data_rate_bps(cfg_.bs_tx_power_dbm, path_loss_db(distance_2d(v), cfg_), dl_share, cfg_);
        t.broadcast_bits_remaining = std::max(0.0, t.broadcast_bits_remaining - rate * dt_s);
        done = t.broadcast_bits_remaining <= kDoneEps;
        break;
      }
      case Stage::kQueued:
      case Stage::kDone: break;
    }
    if (done) finished.push_back(id);
  }

  now_ += cfg_.tick_ms;

  for (TaskId id : finished) {
    Task& t = tasks_.at(id);
    switch (t.stage) {
      case Stage::kOnboard: transition(t, Stage::kUplink, out); break;
      case Stage::kUplink:
        transition(t, Stage::kQueued, out);
        fifo_.push_back(id);
        break;
      case Stage::kServing:
        --serving_;
        t.broadcast_bits_remaining =
            sizer_ ? sizer_(t) : 8.0 * profiles_.broadcast_bytes_per_record * static_cast<double>(t.n_objects);
        transition(t, Stage::kBroadcast, out);
        break;
      case Stage::kBroadcast: {
        transition(t, Stage::kDone, out);
        t.t_completed = now_;
        out.completions.push_back(
            {t.id, t.vehicle_id, t.decision, t.t_created, now_, static_cast<double>(now_ - t.t_created)});
        ++completed_;
        tasks_.erase(id);
        break;
      }
      default: break;
    }
  }

  while (serving_ < static_cast<std::size_t>(cfg_.server_count) && !fifo_.empty()) {
    const TaskId id = fifo_.front();
    fifo_.pop_front();
    transition(tasks_.at(id), Stage::kServing, out);
    service_order_.push_back(id);
    ++serving_;
  }
  return out;
}

}  // namespace livemap::simnet
