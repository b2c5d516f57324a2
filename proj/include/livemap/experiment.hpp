#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "livemap/agent.hpp"
#include "livemap/mapcore.hpp"
#include "livemap/policies.hpp"
#include "livemap/profiles.hpp"
#include "livemap/scenario.hpp"
#include "livemap/scheduler.hpp"
#include "livemap/simnet.hpp"
#include "livemap/vae.hpp"

namespace livemap::experiment {

enum class PolicyKind { kHead, kEo, kLp, kRo, kRm };
std::string to_string(PolicyKind p);
PolicyKind policy_from_string(const std::string& s);  // throws kConfig

struct ExperimentConfig {
  scenario::ScenarioSpec scenario;
  simnet::SimConfig sim;
  scheduler::SchedulerConfig scheduler;
  agent::DqnConfig dqn;
  agent::EpsilonSchedule epsilon;  // steps follows train_steps unless set explicitly
  mapcore::MapConfig map;
  scenario::ObserveConfig observe;

  std::int64_t train_steps = 100000;       // agent decisions
  int train_every = 4;                      // decisions per gradient step
  std::vector<int> train_vehicle_counts;    // cycled per episode; empty = scenario.n_vehicles
  std::int64_t train_episode_ms = 30000;
  std::int64_t drain_ms = 10000;            // grace period for in-flight tasks after the last request

  int vae_samples = 1024;
  int vae_epochs = 40;

  std::vector<std::string> policies{"head", "eo", "lp", "ro", "rm"};
  std::vector<std::uint64_t> eval_seeds{1, 2, 3, 4, 5};
  std::vector<int> rm_vehicle_counts{5, 10, 20, 35, 50};
  std::int64_t rm_episode_ms = 20000;

  std::string profiles_path;   // empty: bundled table
  std::string trace_path;      // empty: generate from `scenario`
  std::string checkpoint_dir;  // empty: <out_dir>/checkpoint
  std::string rm_model_path;   // empty: fit from RO runs
  std::string out_dir = "out";
  std::uint64_t seed = 1;

  void validate() const;
  std::string to_json() const;
  // Missing keys keep their defaults; unknown keys are rejected.
  static ExperimentConfig from_json(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);
  // --seed: one master seed for scenario, network and agent.
  void apply_seed(std::uint64_t s);

  std::filesystem::path resolved_checkpoint_dir() const;
  scenario::ProfileTable profiles() const;
};

struct LatencyRecord {
  std::uint64_t seed = 0;
  std::uint64_t task = 0;
  std::int64_t vehicle = 0;
  int decision = 0;
  std::int64_t created_ms = 0;
  std::int64_t completed_ms = 0;
  double latency_ms = 0.0;
};

struct CoverageRecord {
  std::uint64_t seed = 0;
  std::int64_t t_ms = 0;
  int connected = 0;
  int scheduled = 0;
  double total_area_m2 = 0.0;
  double scheduled_area_m2 = 0.0;
};

struct DecisionRecord {
  std::int64_t t_ms = 0;
  std::int64_t vehicle = 0;
  int action = 0;
  int connected = 0;
};

struct TrainRecord {
  std::int64_t step = 0;  // decision index the reward belongs to
  double reward = 0.0;
  double loss = 0.0;
  double epsilon = 0.0;
};

struct MatchStats {
  std::int64_t observations = 0;
  std::int64_t correct_id = 0;
  std::int64_t success = 0;  // correct id and fused location within 1 m

  double success_rate() const { return observations ? static_cast<double>(success) / observations : 0.0; }
};

// Scores data-plane assignments against ground truth. A record belongs to
// the truth object whose observation created it; creating a record for an
// object that already has one counts as a miss. An object that jumps farther
// than any road user could move (a trace wrapping it around the road end)
// counts as a new arrival.
class MatchScorer {
 public:
  explicit MatchScorer(double max_error_m = 1.0) : max_error_m_(max_error_m) {}
  void score(std::span<const scenario::TruthObservation> batch, const std::vector<mapcore::Assignment>& assignments,
             const mapcore::Database& db);
  const MatchStats& stats() const { return stats_; }

 private:
  double max_error_m_;
  MatchStats stats_;
  struct Track {
    std::int64_t t_ms = 0;
    Eigen::Vector3d location = Eigen::Vector3d::Zero();
    std::int64_t arrival = 0;
  };
  std::int64_t identity(const scenario::TruthObservation& t);

  std::map<mapcore::ObjectId, std::int64_t> record_truth_;
  std::set<std::int64_t> truth_seen_;
  std::map<std::int64_t, Track> tracks_;
  std::int64_t arrivals_ = 0;
};

struct EpisodeOptions {
  PolicyKind policy = PolicyKind::kHead;
  agent::DqnAgent* agent = nullptr;  // head
  agent::StateBounds bounds;
  const policies::RegressionModel* rm = nullptr;
  std::uint64_t seed = 1;  // network, observation and RO streams
  bool training = false;
  std::int64_t* step = nullptr;  // shared decision counter while training
  std::int64_t step_limit = 0;
  bool record_coverage = true;
  std::ostream* event_log = nullptr;
};

struct EpisodeResult {
  std::vector<LatencyRecord> latencies;
  std::vector<CoverageRecord> coverage;
  std::vector<DecisionRecord> decisions;
  std::vector<TrainRecord> training;
  std::vector<policies::RmSample> rm_samples;
  MatchStats match;
  std::int64_t unscheduled_requests = 0;
  std::int64_t conservation_violations = 0;
  std::int64_t coverage_violations = 0;  // epochs with scheduled < beta * total
  std::int64_t incomplete_tasks = 0;
  std::int64_t ticks = 0;
};

// Raw agent observation for one vehicle at the current engine time.
agent::StateVector make_state(const simnet::Engine& engine, const scenario::VehicleInfo& v, int connected);

EpisodeResult run_episode(const scenario::Trace& trace, const ExperimentConfig& cfg,
                          const scenario::ProfileTable& profiles, const neural::VaeModel& vae, EpisodeOptions& opts);

struct Summary {
  std::string policy;
  std::size_t tasks = 0;
  double mean_latency_ms = 0.0;
  double p50_latency_ms = 0.0;
  double p95_latency_ms = 0.0;
  double scheduled_ratio = 0.0;  // mean over epochs of scheduled / connected
  double min_coverage_ratio = 0.0;
  std::int64_t coverage_violations = 0;
  double mean_action = 0.0;
  double detection_success = 0.0;
  std::int64_t incomplete_tasks = 0;
};

Summary summarize(const std::string& policy, std::span<const EpisodeResult> runs);

// Linear-interpolated percentile of an unsorted sample, q in [0, 100].
double percentile(std::vector<double> values, double q);

// Training across episodes; the curve holds one entry per rewarded decision.
struct TrainOutput {
  std::vector<TrainRecord> curve;
  std::vector<std::string> episode_rows;  // CSV rows without header
};
agent::DqnAgent make_agent(const ExperimentConfig& cfg);
TrainOutput train_agent(agent::DqnAgent& agent, const ExperimentConfig& cfg, const scenario::ProfileTable& profiles,
                        const neural::VaeModel& vae, const agent::StateBounds& bounds,
                        const std::function<void(const std::string&)>& progress = {});

// RM dataset from RO runs under varied load, then a fit.
policies::RegressionModel fit_rm(const ExperimentConfig& cfg, const scenario::ProfileTable& profiles,
                                 const neural::VaeModel& vae);

struct EvalOutput {
  std::map<std::string, Summary> summaries;
  std::map<std::string, std::vector<EpisodeResult>> runs;
};
// `head_agent` may be null when HEAD is not among the policies.
EvalOutput evaluate(const ExperimentConfig& cfg, const scenario::ProfileTable& profiles, const neural::VaeModel& vae,
                    agent::DqnAgent* head_agent, const agent::StateBounds& bounds,
                    const policies::RegressionModel* rm);

scenario::Trace trace_for_seed(const ExperimentConfig& cfg, std::uint64_t seed);

// Output writers; all numbers use fixed formatting so reruns are byte-identical.
void write_latency_csv(const std::filesystem::path& path, std::span<const EpisodeResult> runs);
void write_coverage_csv(const std::filesystem::path& path, std::span<const EpisodeResult> runs);
void write_summary_json(const std::filesystem::path& path, const Summary& s);
void write_training_csv(const std::filesystem::path& path, const std::vector<TrainRecord>& curve);

// Commands behind the CLI. Each writes into cfg.out_dir including config.json.
void cmd_gen_traces(const ExperimentConfig& cfg);
void cmd_train(const ExperimentConfig& cfg, const std::function<void(const std::string&)>& progress = {});
void cmd_eval(const ExperimentConfig& cfg, const std::function<void(const std::string&)>& progress = {});

struct CompareRow {
  std::string run;
  std::size_t tasks = 0;
  double mean_ms = 0.0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double reduction_vs_first = 0.0;  // (mean_first - mean) / mean_first
};
// Each directory is a run (holds latency.csv) or a parent of runs.
std::vector<CompareRow> cmd_compare(const std::vector<std::filesystem::path>& dirs,
                                    const std::optional<std::filesystem::path>& out);

}  // namespace livemap::experiment
