#include "livemap/agent.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace livemap::agent {

std::array<double, StateVector::kSize> StateVector::as_array() const {
  return {rss_dbm,           cpu_count,     cpu_freq_ghz, mem_gb, gpu_cores, gpu_freq_ghz, server_capability,
          wireless_bandwidth_hz, connected_vehicles, queued_tasks};
}

const std::array<const char*, StateVector::kSize>& StateBounds::field_names() {
  static const std::array<const char*, StateVector::kSize> names{
      "rss_dbm",           "cpu_count",          "cpu_freq_ghz",      "mem_gb",
      "gpu_cores",         "gpu_freq_ghz",       "server_capability", "wireless_bandwidth_hz",
      "connected_vehicles", "queued_tasks"};
  return names;
}

Eigen::VectorXf StateBounds::normalize(const StateVector& s) const {
  const auto raw = s.as_array();
  Eigen::VectorXf out(StateVector::kSize);
  for (int i = 0; i < StateVector::kSize; ++i) {
    const double span = hi[i] - lo[i];
    const double v = span > 0.0 ? 2.0 * (raw[i] - lo[i]) / span - 1.0 : 0.0;
    out(i) = static_cast<float>(std::clamp(v, -1.0, 1.0));
  }
  return out;
}

double EpsilonSchedule::at(std::int64_t step) const {
  if (steps <= 0 || step >= steps) return end;
  if (step <= 0) return start;
  return start + (end - start) * static_cast<double>(step) / static_cast<double>(steps);
}

int greedy_action(const Eigen::VectorXf& q_values) {
  int best = 0;
  for (int a = 1; a < q_values.size(); ++a)
    if (q_values(a) > q_values(best)) best = a;
  return best;
}

double td_target(double reward, const Eigen::VectorXf& next_state, const QNet& target, double gamma) {
  return reward + gamma * static_cast<double>(target.predict(next_state).maxCoeff());
}

void update_target(const QNet& online, QNet& target, double tau) {
  if (online.dims() != target.dims()) throw Error(ErrorKind::kArchitectureMismatch, "online/target dims differ");
  const auto t = static_cast<float>(tau);
  const auto& src = online.layers();
  auto& dst = target.mutable_layers();
  for (std::size_t l = 0; l < src.size(); ++l) {
    if (tau == 1.0) {
      dst[l] = src[l];
    } else if (tau != 0.0) {
      dst[l].weights = t * src[l].weights + (1.0f - t) * dst[l].weights;
      dst[l].bias = t * src[l].bias + (1.0f - t) * dst[l].bias;
    }
  }
}

DqnAgent::DqnAgent(int state_dim, int num_actions, DqnConfig cfg)
    : cfg_(std::move(cfg)), buffer_(cfg_.buffer_capacity, cfg_.alpha), rng_(cfg_.seed) {
  std::vector<int> dims{state_dim};
  dims.insert(dims.end(), cfg_.hidden.begin(), cfg_.hidden.end());
  dims.push_back(num_actions);
  q_ = QNet::random(dims, rng_, cfg_.leaky_slope);
  target_ = q_;
  opt_ = neural::AdamState<float>(q_, cfg_.learning_rate);
}

Eigen::VectorXf DqnAgent::q_values(const Eigen::VectorXf& s) const { return q_.predict(s).col(0); }

void DqnAgent::add_pending(std::uint64_t id, PendingRecord rec) {
  if (!pending_.emplace(id, std::move(rec)).second)
    throw Error(ErrorKind::kUnknownPending, "duplicate pending id " + std::to_string(id));
}

Transition DqnAgent::complete_reward(std::uint64_t id, double latency_s, const Eigen::VectorXf& next_state) {
  auto it = pending_.find(id);
  if (it == pending_.end()) throw Error(ErrorKind::kUnknownPending, "no pending record " + std::to_string(id));
  Transition t;
  t.state = std::move(it->second.state);
  t.action = it->second.action;
  t.reward = static_cast<float>(-latency_s);
  t.next_state = next_state;
  pending_.erase(it);
  t.priority = buffer_.max_priority();
  buffer_.push(t, t.priority);
  return t;
}

DqnAgent::StepResult DqnAgent::train_step() {
  const std::size_t batch = cfg_.batch_size;
  if (buffer_.size() < batch) throw Error(ErrorKind::kInsufficientBuffer, "buffer smaller than batch");

  StepResult result;
  result.indices = buffer_.sample(batch, rng_);
  const int dim = state_dim();
  neural::Matrix<float> states(dim, batch);
  neural::Matrix<float> next_states(dim, batch);
  for (std::size_t j = 0; j < batch; ++j) {
    const auto& t = buffer_.at(result.indices[j]);
    states.col(j) = t.state;
    next_states.col(j) = t.next_state;
  }

  const neural::Matrix<float> next_q = target_.predict(next_states);
  neural::Tape<float> tape;
  const neural::Matrix<float> q = q_.forward(states, tape);

  neural::Matrix<float> upstream = neural::Matrix<float>::Zero(q.rows(), q.cols());
  result.td_errors.resize(batch);
  double loss = 0.0;
  const float scale = 2.0f / static_cast<float>(batch);
  for (std::size_t j = 0; j < batch; ++j) {
    const auto& t = buffer_.at(result.indices[j]);
    const double h = static_cast<double>(t.reward) + cfg_.gamma * static_cast<double>(next_q.col(j).maxCoeff());
    const double td = h - static_cast<double>(q(t.action, j));
    result.td_errors[j] = td;
    loss += td * td;
    upstream(t.action, j) = -scale * static_cast<float>(td);
  }
  result.loss = loss / static_cast<double>(batch);

  auto grads = q_.backward(tape, upstream);
  if (cfg_.grad_clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& g : grads.grads) sq += static_cast<double>(g.weights.squaredNorm() + g.bias.squaredNorm());
    if (const double norm = std::sqrt(sq); norm > cfg_.grad_clip_norm) {
      const auto f = static_cast<float>(cfg_.grad_clip_norm / norm);
      for (auto& g : grads.grads) {
        g.weights *= f;
        g.bias *= f;
      }
    }
  }
  neural::step(q_, grads.grads, opt_);

  for (std::size_t j = 0; j < batch; ++j)
    buffer_.set_priority(result.indices[j], std::abs(result.td_errors[j]) + cfg_.priority_floor);

  ++train_steps_;
  if (cfg_.hard_update_period > 0) {
    if (train_steps_ % cfg_.hard_update_period == 0) update_target(q_, target_, 1.0);
  } else {
    update_target(q_, target_, cfg_.tau);
  }
  return result;
}

void save_checkpoint(const DqnAgent& agent, const StateBounds& bounds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  neural::save(agent.qnet(), dir / "qnet.bin");
  neural::save(agent.target_net(), dir / "target.bin");
  nlohmann::ordered_json j;
  const auto& cfg = agent.config();
  j["hidden"] = cfg.hidden;
  j["gamma"] = cfg.gamma;
  j["learning_rate"] = cfg.learning_rate;
  j["batch_size"] = cfg.batch_size;
  j["buffer_capacity"] = cfg.buffer_capacity;
  j["alpha"] = cfg.alpha;
  j["priority_floor"] = cfg.priority_floor;
  j["tau"] = cfg.tau;
  j["hard_update_period"] = cfg.hard_update_period;
  j["grad_clip_norm"] = cfg.grad_clip_norm;
  j["leaky_slope"] = cfg.leaky_slope;
  j["seed"] = cfg.seed;
  j["train_steps"] = agent.train_steps();
  auto& b = j["normalization"];
  for (int i = 0; i < StateVector::kSize; ++i)
    b[StateBounds::field_names()[i]] = {bounds.lo[i], bounds.hi[i]};
  std::ofstream out(dir / "checkpoint.json");
  if (!out) throw Error(ErrorKind::kIo, "cannot write checkpoint sidecar");
  out << j.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "checkpoint.json");
  if (!in) throw Error(ErrorKind::kMissingCheckpoint, "no checkpoint in " + dir.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kIo, std::string("bad checkpoint sidecar: ") + e.what());
  }
  Checkpoint ck;
  ck.config.hidden = j.at("hidden").get<std::vector<int>>();
  ck.config.gamma = j.at("gamma");
  ck.config.learning_rate = j.at("learning_rate");
  ck.config.batch_size = j.at("batch_size");
  ck.config.buffer_capacity = j.at("buffer_capacity");
  ck.config.alpha = j.at("alpha");
  ck.config.priority_floor = j.at("priority_floor");
  ck.config.tau = j.at("tau");
  ck.config.hard_update_period = j.at("hard_update_period");
  ck.config.grad_clip_norm = j.at("grad_clip_norm");
  ck.config.leaky_slope = j.at("leaky_slope");
  ck.config.seed = j.at("seed");
  for (int i = 0; i < StateVector::kSize; ++i) {
    const auto& pair = j.at("normalization").at(StateBounds::field_names()[i]);
    ck.bounds.lo[i] = pair.at(0);
    ck.bounds.hi[i] = pair.at(1);
  }
  ck.qnet = neural::load<float>(dir / "qnet.bin", ck.config.leaky_slope);
  ck.target = neural::load<float>(dir / "target.bin", ck.config.leaky_slope);
  return ck;
}

}  // namespace livemap::agent
