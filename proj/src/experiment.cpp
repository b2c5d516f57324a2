#include "livemap/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "livemap/error.hpp"
#include "livemap/geometry.hpp"

namespace livemap::experiment {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr std::array<const char*, 5> kPolicyNames = {"head", "eo", "lp", "ro", "rm"};

// Shortest decimal that reads back as the same float, so 0.01f prints as 0.01.
double decimal(float v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::strtod(std::string(buf, r.ptr).c_str(), nullptr);
}

std::string fmt(double v, int prec = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create " + p.string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + p.string());
  return out;
}

// Every key of `in` must exist in `ref`, recursively through objects.
void check_keys(const json& in, const json& ref, const std::string& path) {
  if (!in.is_object()) return;
  for (auto it = in.begin(); it != in.end(); ++it) {
    if (!ref.contains(it.key())) throw Error(ErrorKind::kConfig, "unknown config key '" + path + it.key() + "'");
    if (ref.at(it.key()).is_object()) check_keys(it.value(), ref.at(it.key()), path + it.key() + ".");
  }
}

}  // namespace

std::string to_string(PolicyKind p) { return kPolicyNames[static_cast<std::size_t>(p)]; }

PolicyKind policy_from_string(const std::string& s) {
  for (std::size_t i = 0; i < kPolicyNames.size(); ++i)
    if (s == kPolicyNames[i]) return static_cast<PolicyKind>(i);
  throw Error(ErrorKind::kConfig, "unknown policy '" + s + "'");
}

// ---------------------------------------------------------------- config

void ExperimentConfig::validate() const {
  scenario.validate();
  sim.validate();
  if (!(scheduler.beta >= 0.0 && scheduler.beta <= 1.0)) throw Error(ErrorKind::kConfig, "beta must lie in [0, 1]");
  if (scheduler.epoch_period_ms <= 0 || scheduler.backoff_ms < 0)
    throw Error(ErrorKind::kConfig, "scheduler periods must be positive");
  if (train_steps < 0 || train_every < 1 || train_episode_ms <= 0)
    throw Error(ErrorKind::kConfig, "bad training budget");
  if (dqn.batch_size == 0 || dqn.batch_size > dqn.buffer_capacity)
    throw Error(ErrorKind::kConfig, "batch size must be in [1, buffer capacity]");
  if (!(dqn.gamma >= 0.0 && dqn.gamma < 1.0)) throw Error(ErrorKind::kConfig, "gamma must lie in [0, 1)");
  for (int n : train_vehicle_counts)
    if (n < 1) throw Error(ErrorKind::kConfig, "training vehicle counts must be >= 1");
  for (const auto& p : policies) policy_from_string(p);
  if (eval_seeds.empty()) throw Error(ErrorKind::kConfig, "eval_seeds is empty");
  if (vae_samples < 1 || vae_epochs < 0) throw Error(ErrorKind::kConfig, "bad VAE budget");
}

std::string ExperimentConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["out_dir"] = out_dir;
  j["policies"] = policies;
  j["eval_seeds"] = eval_seeds;
  j["drain_ms"] = drain_ms;
  j["scenario"] = {{"kind", std::string(scenario::to_string(scenario.kind))},
                   {"n_vehicles", scenario.n_vehicles},
                   {"n_objects", scenario.n_objects},
                   {"duration_ms", scenario.duration_ms},
                   {"frame_period_ms", scenario.frame_period_ms},
                   {"seed", scenario.seed},
                   {"half_length_m", scenario.half_length_m}};
  j["sim"] = {{"tick_ms", sim.tick_ms},
              {"uplink_bw_hz", sim.uplink_bw_hz},
              {"downlink_bw_hz", sim.downlink_bw_hz},
              {"carrier_ghz", sim.carrier_ghz},
              {"bs_position", {sim.bs_position.x(), sim.bs_position.y(), sim.bs_position.z()}},
              {"bs_height_m", sim.bs_height_m},
              {"ue_height_m", sim.ue_height_m},
              {"tx_power_min_dbm", sim.tx_power_min_dbm},
              {"tx_power_max_dbm", sim.tx_power_max_dbm},
              {"tx_redraw_ms", sim.tx_redraw_ms},
              {"bs_tx_power_dbm", sim.bs_tx_power_dbm},
              {"noise_dbm_per_hz", sim.noise_dbm_per_hz},
              {"server_count", sim.server_count},
              {"server_speed", sim.server_speed},
              {"seed", sim.seed}};
  j["scheduler"] = {{"beta", scheduler.beta},
                    {"epoch_period_ms", scheduler.epoch_period_ms},
                    {"backoff_ms", scheduler.backoff_ms},
                    {"recompute_overlap", scheduler.recompute_overlap}};
  j["agent"] = {{"hidden", dqn.hidden},
                {"gamma", dqn.gamma},
                {"learning_rate", dqn.learning_rate},
                {"batch_size", dqn.batch_size},
                {"buffer_capacity", dqn.buffer_capacity},
                {"alpha", dqn.alpha},
                {"priority_floor", dqn.priority_floor},
                {"tau", dqn.tau},
                {"hard_update_period", dqn.hard_update_period},
                {"grad_clip_norm", dqn.grad_clip_norm},
                {"leaky_slope", decimal(dqn.leaky_slope)},
                {"seed", dqn.seed},
                {"epsilon_start", epsilon.start},
                {"epsilon_end", epsilon.end},
                {"epsilon_steps", epsilon.steps},
                {"train_steps", train_steps},
                {"train_every", train_every},
                {"train_vehicle_counts", train_vehicle_counts},
                {"train_episode_ms", train_episode_ms}};
  j["map"] = {{"match_threshold", map.match_threshold},
              {"location_weight", map.location_weight},
              {"history_len", map.history_len},
              {"latent_cap", map.latent_cap},
              {"ttl_ms", map.ttl_ms},
              {"vehicle_radius_m", map.vehicle_radius_m},
              {"person_radius_m", map.person_radius_m},
              {"default_radius_m", map.default_radius_m}};
  j["observe"] = {{"sigma_loc_m", observe.sigma_loc_m},
                  {"confidence_mean", observe.confidence_mean},
                  {"confidence_stdev", observe.confidence_stdev},
                  {"view_noise_sigma", observe.view_noise_sigma}};
  j["vae"] = {{"samples", vae_samples}, {"epochs", vae_epochs}};
  j["rm"] = {{"vehicle_counts", rm_vehicle_counts}, {"episode_ms", rm_episode_ms}, {"model_path", rm_model_path}};
  j["paths"] = {{"profiles", profiles_path}, {"trace", trace_path}, {"checkpoint", checkpoint_dir}};
  return j.dump(2);
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  ExperimentConfig c;
  try {
    const json in = json::parse(text, nullptr, true, true);
    if (!in.is_object()) throw Error(ErrorKind::kConfig, "config must be a JSON object");
    json j = json::parse(c.to_json());
    check_keys(in, j, "");
    j.merge_patch(in);

    c.seed = j.at("seed");
    c.out_dir = j.at("out_dir");
    c.policies = j.at("policies").get<std::vector<std::string>>();
    c.eval_seeds = j.at("eval_seeds").get<std::vector<std::uint64_t>>();
    c.drain_ms = j.at("drain_ms");

    const auto& s = j.at("scenario");
    c.scenario.kind = scenario::kind_from_string(s.at("kind").get<std::string>());
    c.scenario.n_vehicles = s.at("n_vehicles");
    c.scenario.n_objects = s.at("n_objects");
    c.scenario.duration_ms = s.at("duration_ms");
    c.scenario.frame_period_ms = s.at("frame_period_ms");
    c.scenario.seed = s.at("seed");
    c.scenario.half_length_m = s.at("half_length_m");

    const auto& m = j.at("sim");
    c.sim.tick_ms = m.at("tick_ms");
    c.sim.uplink_bw_hz = m.at("uplink_bw_hz");
    c.sim.downlink_bw_hz = m.at("downlink_bw_hz");
    c.sim.carrier_ghz = m.at("carrier_ghz");
    const auto bs = m.at("bs_position").get<std::vector<double>>();
    if (bs.size() != 3) throw Error(ErrorKind::kConfig, "bs_position needs 3 entries");
    c.sim.bs_position = {bs[0], bs[1], bs[2]};
    c.sim.bs_height_m = m.at("bs_height_m");
    c.sim.ue_height_m = m.at("ue_height_m");
    c.sim.tx_power_min_dbm = m.at("tx_power_min_dbm");
    c.sim.tx_power_max_dbm = m.at("tx_power_max_dbm");
    c.sim.tx_redraw_ms = m.at("tx_redraw_ms");
    c.sim.bs_tx_power_dbm = m.at("bs_tx_power_dbm");
    c.sim.noise_dbm_per_hz = m.at("noise_dbm_per_hz");
    c.sim.server_count = m.at("server_count");
    c.sim.server_speed = m.at("server_speed");
    c.sim.seed = m.at("seed");

    const auto& sc = j.at("scheduler");
    c.scheduler.beta = sc.at("beta");
    c.scheduler.epoch_period_ms = sc.at("epoch_period_ms");
    c.scheduler.backoff_ms = sc.at("backoff_ms");
    c.scheduler.recompute_overlap = sc.at("recompute_overlap");

    const auto& a = j.at("agent");
    c.dqn.hidden = a.at("hidden").get<std::vector<int>>();
    c.dqn.gamma = a.at("gamma");
    c.dqn.learning_rate = a.at("learning_rate");
    c.dqn.batch_size = a.at("batch_size");
    c.dqn.buffer_capacity = a.at("buffer_capacity");
    c.dqn.alpha = a.at("alpha");
    c.dqn.priority_floor = a.at("priority_floor");
    c.dqn.tau = a.at("tau");
    c.dqn.hard_update_period = a.at("hard_update_period");
    c.dqn.grad_clip_norm = a.at("grad_clip_norm");
    c.dqn.leaky_slope = a.at("leaky_slope");
    c.dqn.seed = a.at("seed");
    c.epsilon.start = a.at("epsilon_start");
    c.epsilon.end = a.at("epsilon_end");
    c.epsilon.steps = a.at("epsilon_steps");
    c.train_steps = a.at("train_steps");
    c.train_every = a.at("train_every");
    c.train_vehicle_counts = a.at("train_vehicle_counts").get<std::vector<int>>();
    c.train_episode_ms = a.at("train_episode_ms");
    // An explicit schedule length wins; otherwise it follows the budget.
    if (!in.contains("agent") || !in.at("agent").contains("epsilon_steps")) c.epsilon.steps = c.train_steps;

    const auto& mp = j.at("map");
    c.map.match_threshold = mp.at("match_threshold");
    c.map.location_weight = mp.at("location_weight");
    c.map.history_len = mp.at("history_len");
    c.map.latent_cap = mp.at("latent_cap");
    c.map.ttl_ms = mp.at("ttl_ms");
    c.map.vehicle_radius_m = mp.at("vehicle_radius_m");
    c.map.person_radius_m = mp.at("person_radius_m");
    c.map.default_radius_m = mp.at("default_radius_m");

    const auto& o = j.at("observe");
    c.observe.sigma_loc_m = o.at("sigma_loc_m");
    c.observe.confidence_mean = o.at("confidence_mean");
    c.observe.confidence_stdev = o.at("confidence_stdev");
    c.observe.view_noise_sigma = o.at("view_noise_sigma");

    c.vae_samples = j.at("vae").at("samples");
    c.vae_epochs = j.at("vae").at("epochs");
    c.rm_vehicle_counts = j.at("rm").at("vehicle_counts").get<std::vector<int>>();
    c.rm_episode_ms = j.at("rm").at("episode_ms");
    c.rm_model_path = j.at("rm").at("model_path");
    c.profiles_path = j.at("paths").at("profiles");
    c.trace_path = j.at("paths").at("trace");
    c.checkpoint_dir = j.at("paths").at("checkpoint");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kConfig, std::string("bad config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kConfig, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

void ExperimentConfig::apply_seed(std::uint64_t s) {
  seed = s;
  scenario.seed = s;
  sim.seed = s;
  dqn.seed = s;
}

fs::path ExperimentConfig::resolved_checkpoint_dir() const {
  return checkpoint_dir.empty() ? fs::path(out_dir) / "checkpoint" : fs::path(checkpoint_dir);
}

scenario::ProfileTable ExperimentConfig::profiles() const {
  return profiles_path.empty() ? scenario::default_profiles() : scenario::ProfileTable::load(profiles_path);
}

// ---------------------------------------------------------------- scoring

std::int64_t MatchScorer::identity(const scenario::TruthObservation& t) {
  constexpr double kMaxSpeedMps = 40.0, kSlackM = 10.0;
  auto [it, fresh] = tracks_.try_emplace(t.truth_id);
  Track& tr = it->second;
  const double dt = static_cast<double>(std::abs(t.obs.timestamp - tr.t_ms)) / 1000.0;
  if (fresh || (t.truth_location - tr.location).norm() > kMaxSpeedMps * dt + kSlackM) tr.arrival = arrivals_++;
  tr.t_ms = t.obs.timestamp;
  tr.location = t.truth_location;
  return tr.arrival;
}

void MatchScorer::score(std::span<const scenario::TruthObservation> batch,
                        const std::vector<mapcore::Assignment>& assignments, const mapcore::Database& db) {
  for (const auto& a : assignments) {
    const auto& t = batch[a.observation];
    const std::int64_t who = identity(t);
    bool correct = false;
    if (a.created) {
      correct = truth_seen_.insert(who).second;
      record_truth_[a.record] = who;
    } else {
      auto it = record_truth_.find(a.record);
      correct = it != record_truth_.end() && it->second == who;
    }
    ++stats_.observations;
    if (!correct) continue;
    ++stats_.correct_id;
    auto rec = db.find(a.record);
    if (rec != db.end() && (rec->second.geo_location - t.truth_location).norm() < max_error_m_) ++stats_.success;
  }
}

// ---------------------------------------------------------------- episode

agent::StateVector make_state(const simnet::Engine& engine, const scenario::VehicleInfo& v, int connected) {
  agent::StateVector s;
  s.rss_dbm = engine.rss_dbm(v.id);
  s.cpu_count = v.capability.cpu_count;
  s.cpu_freq_ghz = v.capability.cpu_freq_ghz;
  s.mem_gb = v.capability.mem_gb;
  s.gpu_cores = v.capability.gpu_cores;
  s.gpu_freq_ghz = v.capability.gpu_freq_ghz;
  s.server_capability = engine.config().server_speed;
  s.wireless_bandwidth_hz = engine.config().uplink_bw_hz;
  s.connected_vehicles = connected;
  s.queued_tasks = static_cast<double>(engine.count_in_stage(simnet::Stage::kUplink) +
                                       engine.count_in_stage(simnet::Stage::kQueued) +
                                       engine.count_in_stage(simnet::Stage::kServing));
  return s;
}

EpisodeResult run_episode(const scenario::Trace& trace, const ExperimentConfig& cfg,
                          const scenario::ProfileTable& profiles, const neural::VaeModel& vae, EpisodeOptions& opts) {
  if ((opts.policy == PolicyKind::kHead) && !opts.agent) throw Error(ErrorKind::kConfig, "HEAD needs an agent");
  if (opts.policy == PolicyKind::kRm && !opts.rm) throw Error(ErrorKind::kConfig, "RM needs a fitted model");
  if (opts.training && (!opts.step || opts.policy != PolicyKind::kHead))
    throw Error(ErrorKind::kConfig, "training needs HEAD and a step counter");

  EpisodeResult out;
  simnet::SimConfig sim = cfg.sim;
  sim.seed = opts.seed;
  simnet::Engine eng(sim, profiles);
  eng.set_event_log(opts.event_log);
  const int connected = static_cast<int>(trace.vehicles.size());
  const int num_actions = profiles.num_decisions();

  std::map<std::int64_t, std::size_t> index_of;
  for (std::size_t i = 0; i < trace.vehicles.size(); ++i) {
    eng.add_vehicle(trace.vehicles[i].id, trace.vehicles[i].capability.factor);
    eng.set_position(trace.vehicles[i].id, trace.frames.front().poses[i].position());
    index_of[trace.vehicles[i].id] = i;
  }

  std::mt19937_64 rng(opts.seed * 0x9E3779B97F4A7C15ULL + 17);
  mapcore::DataPlane dp(cfg.map);
  MatchScorer scorer;
  std::map<simnet::TaskId, std::vector<scenario::TruthObservation>> task_obs;
  std::map<mapcore::ObjectId, std::int64_t> touched;  // record -> last server update
  std::map<std::int64_t, std::int64_t> last_sync;
  const double record_bits = 8.0 * profiles.broadcast_bytes_per_record;

  eng.set_broadcast_sizer([&](const simnet::Task& task) {
    const std::int64_t now = eng.now_ms();
    if (auto it = task_obs.find(task.id); it != task_obs.end()) {
      std::vector<mapcore::Observation> batch;
      batch.reserve(it->second.size());
      for (const auto& t : it->second) batch.push_back(t.obs);
      const auto assigned = dp.ingest(batch);
      scorer.score(it->second, assigned, dp.database());
      for (const auto& a : assigned) touched[a.record] = now;
      task_obs.erase(it);
    }
    auto [ls, fresh] = last_sync.try_emplace(task.vehicle_id, -1);
    std::size_t delta = 0;
    for (const auto& [id, t] : touched)
      if (t > ls->second && dp.database().count(id)) ++delta;
    ls->second = now;
    return record_bits * static_cast<double>(delta);
  });

  struct VehicleState {
    bool busy = false;
    std::int64_t ready_at = 0;
  };
  std::vector<VehicleState> vstate(trace.vehicles.size());

  struct TaskMeta {
    double rate_bps = 0.0;
    int action = 0;
    std::int64_t step = -1;
    double epsilon = 0.0;
  };
  std::map<simnet::TaskId, TaskMeta> meta;

  scheduler::ScheduleState sched;
  sched.config = cfg.scheduler;
  const geometry::GridSpec grid = trace.coverage_grid();
  const bool head = opts.policy == PolicyKind::kHead;
  std::size_t frame = trace.frame_index(0);
  double last_loss = 0.0;
  const std::int64_t duration = trace.spec.duration_ms;
  std::int64_t next_epoch = 0;

  for (;;) {
    const std::int64_t t = eng.now_ms();
    const std::size_t f = trace.frame_index(t);
    if (f != frame) {
      frame = f;
      for (std::size_t i = 0; i < trace.vehicles.size(); ++i)
        eng.set_position(trace.vehicles[i].id, trace.frames[f].poses[i].position());
    }

    if (t >= next_epoch && t < duration) {
      next_epoch = t + cfg.scheduler.epoch_period_ms;
      dp.evict(t);
      if (head || opts.record_coverage) {
        const auto occ = trace.occluders(frame);
        sched.coverage.clear();
        for (std::size_t i = 0; i < trace.vehicles.size(); ++i)
          sched.coverage.emplace(trace.vehicles[i].id,
                                 geometry::vehicle_coverage(trace.frames[frame].poses[i], trace.intrinsics, occ, grid));
        if (head) {
          sched.next_epoch_ms = t;
          scheduler::maybe_reschedule(sched, t);
        } else {
          sched.scheduled.clear();
          for (const auto& [id, g] : sched.coverage) sched.scheduled[id] = true;
        }
        std::vector<bool> all(sched.coverage.size(), true), active;
        int n_sched = 0;
        for (const auto& [id, on] : sched.scheduled) {
          active.push_back(on);
          n_sched += on ? 1 : 0;
        }
        CoverageRecord cr;
        cr.seed = opts.seed;
        cr.t_ms = t;
        cr.connected = connected;
        cr.scheduled = n_sched;
        cr.total_area_m2 = scheduler::union_area(sched.coverage, all);
        cr.scheduled_area_m2 = scheduler::union_area(sched.coverage, active);
        if (head && cr.scheduled_area_m2 < cfg.scheduler.beta * cr.total_area_m2 - 1e-9) ++out.coverage_violations;
        if (opts.record_coverage) out.coverage.push_back(cr);
      }
    }

    const bool accepting = t < duration && (!opts.training || *opts.step < opts.step_limit);
    if (!accepting && eng.in_flight().empty()) break;
    if (t >= duration + cfg.drain_ms) {
      out.incomplete_tasks = static_cast<std::int64_t>(eng.in_flight().size());
      break;
    }

    for (std::size_t i = 0; accepting && i < trace.vehicles.size(); ++i) {
      auto& vs = vstate[i];
      if (vs.busy || vs.ready_at > t) continue;
      if (opts.training && *opts.step >= opts.step_limit) break;
      const auto& vinfo = trace.vehicles[i];
      int action = 0;
      Eigen::VectorXf features;
      double eps = 0.0;
      const double rate = eng.uplink_rate_estimate(vinfo.id);
      switch (opts.policy) {
        case PolicyKind::kHead: {
          features = opts.bounds.normalize(make_state(eng, vinfo, connected));
          eps = opts.training ? cfg.epsilon.at(*opts.step) : 0.0;
          const auto d = scheduler::head_decide(vinfo.id, features, sched, *opts.agent, eps, t);
          if (!d.scheduled) {
            vs.ready_at = t + cfg.scheduler.backoff_ms;
            ++out.unscheduled_requests;
            continue;
          }
          action = d.action;
          break;
        }
        case PolicyKind::kEo: action = policies::eo(); break;
        case PolicyKind::kLp: action = policies::lp(num_actions); break;
        case PolicyKind::kRo: action = policies::ro(rng, num_actions); break;
        case PolicyKind::kRm: action = policies::rm_decide(*opts.rm, rate, connected); break;
      }

      auto obs = scenario::observe(trace, frame, i, vae, cfg.observe, rng, t);
      const int n_obj = static_cast<int>(obs.size());
      const simnet::TaskId id = eng.submit(vinfo.id, action, n_obj);
      task_obs.emplace(id, std::move(obs));
      vs.busy = true;
      out.decisions.push_back({t, vinfo.id, action, connected});
      TaskMeta tm{rate, action, -1, eps};

      if (opts.training) {
        opts.agent->add_pending(id, {vinfo.id, features, action, t});
        tm.step = (*opts.step)++;
        const auto& dq = opts.agent->config();
        if (opts.agent->buffer().size() >= dq.batch_size && *opts.step % cfg.train_every == 0)
          last_loss = opts.agent->train_step().loss;
      }
      meta.emplace(id, tm);
    }

    const auto res = eng.tick();
    ++out.ticks;

    std::size_t staged = 0;
    for (auto s : {simnet::Stage::kOnboard, simnet::Stage::kUplink, simnet::Stage::kQueued, simnet::Stage::kServing,
                   simnet::Stage::kBroadcast})
      staged += eng.count_in_stage(s);
    if (eng.submitted() != eng.completed() + eng.in_flight().size() || staged != eng.in_flight().size())
      ++out.conservation_violations;

    for (const auto& c : res.completions) {
      const std::size_t i = index_of.at(c.vehicle);
      vstate[i].busy = false;
      vstate[i].ready_at = eng.now_ms();
      out.latencies.push_back({opts.seed, c.task, c.vehicle, c.decision, c.created_ms, c.completed_ms, c.latency_ms});
      const auto m = meta.at(c.task);
      out.rm_samples.push_back({m.rate_bps, static_cast<double>(connected), m.action, c.latency_ms});
      if (opts.training && opts.agent->has_pending(c.task)) {
        const Eigen::VectorXf next = opts.bounds.normalize(make_state(eng, trace.vehicles[i], connected));
        const auto tr = opts.agent->complete_reward(c.task, c.latency_ms / 1000.0, next);
        out.training.push_back({m.step, tr.reward, last_loss, m.epsilon});
      }
      meta.erase(c.task);
    }
  }
  if (opts.training) opts.agent->clear_pending();
  out.match = scorer.stats();
  return out;
}

// ---------------------------------------------------------------- summaries

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = std::clamp(q, 0.0, 100.0) / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

Summary summarize(const std::string& policy, std::span<const EpisodeResult> runs) {
  Summary s;
  s.policy = policy;
  std::vector<double> lat;
  double ratio_sum = 0.0, action_sum = 0.0;
  std::size_t epochs = 0, decisions = 0;
  s.min_coverage_ratio = 1.0;
  MatchStats m;
  for (const auto& r : runs) {
    for (const auto& l : r.latencies) lat.push_back(l.latency_ms);
    for (const auto& c : r.coverage) {
      ratio_sum += static_cast<double>(c.scheduled) / c.connected;
      ++epochs;
      if (c.total_area_m2 > 0) s.min_coverage_ratio = std::min(s.min_coverage_ratio, c.scheduled_area_m2 / c.total_area_m2);
    }
    for (const auto& d : r.decisions) action_sum += d.action;
    decisions += r.decisions.size();
    s.coverage_violations += r.coverage_violations;
    s.incomplete_tasks += r.incomplete_tasks;
    m.observations += r.match.observations;
    m.correct_id += r.match.correct_id;
    m.success += r.match.success;
  }
  s.tasks = lat.size();
  if (!lat.empty()) s.mean_latency_ms = std::accumulate(lat.begin(), lat.end(), 0.0) / static_cast<double>(lat.size());
  s.p50_latency_ms = percentile(lat, 50);
  s.p95_latency_ms = percentile(lat, 95);
  s.scheduled_ratio = epochs ? ratio_sum / static_cast<double>(epochs) : 1.0;
  s.mean_action = decisions ? action_sum / static_cast<double>(decisions) : 0.0;
  s.detection_success = m.success_rate();
  return s;
}

// ---------------------------------------------------------------- training

agent::DqnAgent make_agent(const ExperimentConfig& cfg) {
  return agent::DqnAgent(agent::StateVector::kSize, cfg.profiles().num_decisions(), cfg.dqn);
}

TrainOutput train_agent(agent::DqnAgent& agent, const ExperimentConfig& cfg, const scenario::ProfileTable& profiles,
                        const neural::VaeModel& vae, const agent::StateBounds& bounds,
                        const std::function<void(const std::string&)>& progress) {
  TrainOutput out;
  std::int64_t step = 0;
  std::optional<scenario::Trace> fixed;
  if (!cfg.trace_path.empty()) fixed = scenario::load_trace(cfg.trace_path);
  for (std::int64_t e = 0; step < cfg.train_steps; ++e) {
    scenario::Trace generated;
    if (!fixed) {
      scenario::ScenarioSpec spec = cfg.scenario;
      if (!cfg.train_vehicle_counts.empty())
        spec.n_vehicles = cfg.train_vehicle_counts[static_cast<std::size_t>(e) % cfg.train_vehicle_counts.size()];
      spec.duration_ms = cfg.train_episode_ms;
      spec.seed = cfg.scenario.seed * 1000003ULL + static_cast<std::uint64_t>(e) + 1;
      generated = scenario::generate(spec);
    }
    const scenario::Trace& trace = fixed ? *fixed : generated;
    EpisodeOptions opts;
    opts.policy = PolicyKind::kHead;
    opts.agent = &agent;
    opts.bounds = bounds;
    opts.seed = cfg.sim.seed * 7919ULL + static_cast<std::uint64_t>(e);
    opts.training = true;
    opts.step = &step;
    opts.step_limit = cfg.train_steps;
    opts.record_coverage = false;
    const std::int64_t before = step;
    auto res = run_episode(trace, cfg, profiles, vae, opts);
    if (step == before) throw Error(ErrorKind::kConfig, "training episode made no decisions");
    double lat = 0.0, act = 0.0;
    for (const auto& l : res.latencies) lat += l.latency_ms;
    for (const auto& d : res.decisions) act += d.action;
    const double n_lat = std::max<double>(1.0, static_cast<double>(res.latencies.size()));
    const double n_dec = std::max<double>(1.0, static_cast<double>(res.decisions.size()));
    std::string row = std::to_string(e) + "," + std::to_string(trace.vehicles.size()) + "," + std::to_string(step) +
                      "," + fmt(lat / n_lat, 3) + "," + fmt(act / n_dec, 4) + "," + fmt(cfg.epsilon.at(step), 4);
    out.episode_rows.push_back(row);
    if (progress) progress("episode " + row);
    out.curve.insert(out.curve.end(), res.training.begin(), res.training.end());
  }
  std::stable_sort(out.curve.begin(), out.curve.end(),
                   [](const TrainRecord& a, const TrainRecord& b) { return a.step < b.step; });
  return out;
}

// ---------------------------------------------------------------- evaluation

scenario::Trace trace_for_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (!cfg.trace_path.empty()) return scenario::load_trace(cfg.trace_path);
  scenario::ScenarioSpec spec = cfg.scenario;
  spec.seed = seed;
  return scenario::generate(spec);
}

policies::RegressionModel fit_rm(const ExperimentConfig& cfg, const scenario::ProfileTable& profiles,
                                 const neural::VaeModel& vae) {
  std::vector<policies::RmSample> data;
  for (std::size_t k = 0; k < cfg.rm_vehicle_counts.size(); ++k) {
    scenario::ScenarioSpec spec = cfg.scenario;
    spec.n_vehicles = cfg.rm_vehicle_counts[k];
    spec.duration_ms = cfg.rm_episode_ms;
    spec.seed = cfg.seed * 1000003ULL + 50000 + k;
    const auto trace = scenario::generate(spec);
    EpisodeOptions opts;
    opts.policy = PolicyKind::kRo;
    opts.seed = cfg.sim.seed * 7919ULL + 50000 + k;
    opts.record_coverage = false;
    auto res = run_episode(trace, cfg, profiles, vae, opts);
    data.insert(data.end(), res.rm_samples.begin(), res.rm_samples.end());
  }
  return policies::rm_fit(data, profiles.num_decisions(), 2);
}

EvalOutput evaluate(const ExperimentConfig& cfg, const scenario::ProfileTable& profiles, const neural::VaeModel& vae,
                    agent::DqnAgent* head_agent, const agent::StateBounds& bounds,
                    const policies::RegressionModel* rm) {
  EvalOutput out;
  std::map<std::uint64_t, scenario::Trace> traces;
  for (auto s : cfg.eval_seeds) traces.emplace(s, trace_for_seed(cfg, s));
  for (const auto& name : cfg.policies) {
    const PolicyKind kind = policy_from_string(name);
    auto& runs = out.runs[name];
    for (auto s : cfg.eval_seeds) {
      EpisodeOptions opts;
      opts.policy = kind;
      opts.agent = head_agent;
      opts.bounds = bounds;
      opts.rm = rm;
      opts.seed = cfg.sim.seed * 7919ULL + s;
      runs.push_back(run_episode(traces.at(s), cfg, profiles, vae, opts));
    }
    out.summaries[name] = summarize(name, runs);
  }
  return out;
}

// ---------------------------------------------------------------- writers

void write_latency_csv(const fs::path& path, std::span<const EpisodeResult> runs) {
  auto out = open_out(path);
  out << "seed,task,vehicle,decision,created_ms,completed_ms,latency_ms\n";
  for (const auto& r : runs)
    for (const auto& l : r.latencies)
      out << l.seed << ',' << l.task << ',' << l.vehicle << ',' << l.decision << ',' << l.created_ms << ','
          << l.completed_ms << ',' << fmt(l.latency_ms, 3) << '\n';
}

void write_coverage_csv(const fs::path& path, std::span<const EpisodeResult> runs) {
  auto out = open_out(path);
  out << "seed,t_ms,connected,scheduled,total_area_m2,scheduled_area_m2,coverage_ratio\n";
  for (const auto& r : runs)
    for (const auto& c : r.coverage)
      out << c.seed << ',' << c.t_ms << ',' << c.connected << ',' << c.scheduled << ',' << fmt(c.total_area_m2, 2)
          << ',' << fmt(c.scheduled_area_m2, 2) << ','
          << fmt(c.total_area_m2 > 0 ? c.scheduled_area_m2 / c.total_area_m2 : 1.0, 6) << '\n';
}

void write_summary_json(const fs::path& path, const Summary& s) {
  auto out = open_out(path);
  out << "{\n"
      << "  \"policy\": \"" << s.policy << "\",\n"
      << "  \"tasks\": " << s.tasks << ",\n"
      << "  \"mean_latency_ms\": " << fmt(s.mean_latency_ms, 4) << ",\n"
      << "  \"p50_latency_ms\": " << fmt(s.p50_latency_ms, 4) << ",\n"
      << "  \"p95_latency_ms\": " << fmt(s.p95_latency_ms, 4) << ",\n"
      << "  \"scheduled_ratio\": " << fmt(s.scheduled_ratio, 6) << ",\n"
      << "  \"min_coverage_ratio\": " << fmt(s.min_coverage_ratio, 6) << ",\n"
      << "  \"coverage_violations\": " << s.coverage_violations << ",\n"
      << "  \"mean_action\": " << fmt(s.mean_action, 4) << ",\n"
      << "  \"detection_success\": " << fmt(s.detection_success, 6) << ",\n"
      << "  \"incomplete_tasks\": " << s.incomplete_tasks << "\n"
      << "}\n";
}

void write_training_csv(const fs::path& path, const std::vector<TrainRecord>& curve) {
  auto out = open_out(path);
  out << "step,reward,loss,epsilon\n";
  for (const auto& r : curve)
    out << r.step << ',' << fmt(r.reward, 6) << ',' << fmt(r.loss, 6) << ',' << fmt(r.epsilon, 4) << '\n';
}

// ---------------------------------------------------------------- commands

namespace {

void write_config_echo(const ExperimentConfig& cfg) {
  ensure_dir(cfg.out_dir);
  auto out = open_out(fs::path(cfg.out_dir) / "config.json");
  out << cfg.to_json() << '\n';
}

neural::VaeModel vae_for(const ExperimentConfig& cfg) {
  const fs::path ck = cfg.resolved_checkpoint_dir();
  if (fs::exists(ck / "vae_encoder.bin")) return neural::load_vae(ck);
  return scenario::train_default_vae(cfg.seed, cfg.vae_samples, cfg.vae_epochs);
}

}  // namespace

void cmd_gen_traces(const ExperimentConfig& cfg) {
  cfg.validate();
  write_config_echo(cfg);
  scenario::save_trace(scenario::generate(cfg.scenario), fs::path(cfg.out_dir) / "trace.jsonl");
}

void cmd_train(const ExperimentConfig& cfg, const std::function<void(const std::string&)>& progress) {
  cfg.validate();
  write_config_echo(cfg);
  const auto profiles = cfg.profiles();
  const auto vae = scenario::train_default_vae(cfg.seed, cfg.vae_samples, cfg.vae_epochs);
  auto agent = make_agent(cfg);
  const agent::StateBounds bounds;
  const auto out = train_agent(agent, cfg, profiles, vae, bounds, progress);
  const fs::path ck = cfg.resolved_checkpoint_dir();
  agent::save_checkpoint(agent, bounds, ck);
  neural::save_vae(vae, ck);
  write_training_csv(fs::path(cfg.out_dir) / "training_curve.csv", out.curve);
  auto ep = open_out(fs::path(cfg.out_dir) / "training_episodes.csv");
  ep << "episode,vehicles,decisions_total,mean_latency_ms,mean_action,epsilon\n";
  for (const auto& r : out.episode_rows) ep << r << '\n';
}

void cmd_eval(const ExperimentConfig& cfg, const std::function<void(const std::string&)>& progress) {
  cfg.validate();
  const auto profiles = cfg.profiles();
  const bool want_head = std::find(cfg.policies.begin(), cfg.policies.end(), "head") != cfg.policies.end();
  const bool want_rm = std::find(cfg.policies.begin(), cfg.policies.end(), "rm") != cfg.policies.end();

  std::optional<agent::DqnAgent> head;
  agent::StateBounds bounds;
  if (want_head) {
    auto ck = agent::load_checkpoint(cfg.resolved_checkpoint_dir());
    head.emplace(agent::StateVector::kSize, profiles.num_decisions(), ck.config);
    if (ck.qnet.input_dim() != agent::StateVector::kSize || ck.qnet.output_dim() != profiles.num_decisions())
      throw Error(ErrorKind::kArchitectureMismatch, "checkpoint does not match the state/action sizes");
    head->mutable_qnet() = ck.qnet;
    head->mutable_target_net() = ck.target;
    bounds = ck.bounds;
  }
  write_config_echo(cfg);
  const auto vae = vae_for(cfg);

  std::optional<policies::RegressionModel> rm;
  if (want_rm) {
    if (!cfg.rm_model_path.empty()) {
      rm = policies::RegressionModel::load(cfg.rm_model_path);
    } else {
      if (progress) progress("fitting RM on RO runs");
      rm = fit_rm(cfg, profiles, vae);
    }
    rm->save(fs::path(cfg.out_dir) / "rm.json");
  }

  const auto res = evaluate(cfg, profiles, vae, head ? &*head : nullptr, bounds, rm ? &*rm : nullptr);
  auto table = open_out(fs::path(cfg.out_dir) / "summary.csv");
  table << "policy,tasks,mean_latency_ms,p50_latency_ms,p95_latency_ms,scheduled_ratio,min_coverage_ratio,"
           "coverage_violations,mean_action,detection_success,incomplete_tasks\n";
  for (const auto& name : cfg.policies) {
    const auto& s = res.summaries.at(name);
    const fs::path dir = fs::path(cfg.out_dir) / name;
    ensure_dir(dir);
    write_latency_csv(dir / "latency.csv", res.runs.at(name));
    write_coverage_csv(dir / "coverage.csv", res.runs.at(name));
    write_summary_json(dir / "summary.json", s);
    table << name << ',' << s.tasks << ',' << fmt(s.mean_latency_ms, 4) << ',' << fmt(s.p50_latency_ms, 4) << ','
          << fmt(s.p95_latency_ms, 4) << ',' << fmt(s.scheduled_ratio, 6) << ',' << fmt(s.min_coverage_ratio, 6)
          << ',' << s.coverage_violations << ',' << fmt(s.mean_action, 4) << ',' << fmt(s.detection_success, 6)
          << ',' << s.incomplete_tasks << '\n';
    if (progress) progress(name + ": mean " + fmt(s.mean_latency_ms, 2) + " ms over " + std::to_string(s.tasks) + " tasks");
  }
}

namespace {

std::vector<double> read_latency_column(const fs::path& csv) {
  std::ifstream in(csv);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + csv.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::kIo, csv.string() + " is empty");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  const auto col = std::find(header.begin(), header.end(), "latency_ms") - header.begin();
  if (col == static_cast<long>(header.size())) throw Error(ErrorKind::kIo, csv.string() + " has no latency_ms column");
  std::vector<double> v;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    for (long k = 0; k <= col; ++k)
      if (!std::getline(ss, cell, ',')) throw Error(ErrorKind::kIo, "short row in " + csv.string());
    try {
      v.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw Error(ErrorKind::kIo, "bad number in " + csv.string());
    }
  }
  return v;
}

}  // namespace

std::vector<CompareRow> cmd_compare(const std::vector<fs::path>& dirs, const std::optional<fs::path>& out) {
  std::vector<std::pair<std::string, fs::path>> runs;
  for (const auto& d : dirs) {
    if (!fs::is_directory(d)) throw Error(ErrorKind::kIo, d.string() + " is not a directory");
    if (fs::exists(d / "latency.csv")) {
      runs.emplace_back(d.filename().string(), d / "latency.csv");
      continue;
    }
    std::vector<fs::path> subs;
    for (const auto& e : fs::directory_iterator(d))
      if (e.is_directory() && fs::exists(e.path() / "latency.csv")) subs.push_back(e.path());
    std::sort(subs.begin(), subs.end());
    for (const auto& s : subs) runs.emplace_back(d.filename().string() + "/" + s.filename().string(), s / "latency.csv");
  }
  if (runs.empty()) throw Error(ErrorKind::kIo, "no runs found");

  std::vector<CompareRow> rows;
  for (const auto& [name, csv] : runs) {
    const auto v = read_latency_column(csv);
    CompareRow r;
    r.run = name;
    r.tasks = v.size();
    r.mean_ms = v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    r.p50_ms = percentile(v, 50);
    r.p95_ms = percentile(v, 95);
    rows.push_back(r);
  }
  const double ref = rows.front().mean_ms;
  for (auto& r : rows) r.reduction_vs_first = ref > 0 ? (ref - r.mean_ms) / ref : 0.0;

  if (out) {
    ensure_dir(*out);
    auto f = open_out(*out / "comparison.csv");
    f << "run,tasks,mean_latency_ms,p50_latency_ms,p95_latency_ms,reduction_vs_first\n";
    for (const auto& r : rows)
      f << r.run << ',' << r.tasks << ',' << fmt(r.mean_ms, 4) << ',' << fmt(r.p50_ms, 4) << ',' << fmt(r.p95_ms, 4)
        << ',' << fmt(r.reduction_vs_first, 6) << '\n';
  }
  return rows;
}

}  // namespace livemap::experiment
