#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include <Eigen/Dense>

#include "livemap/agent.hpp"
#include "livemap/geometry.hpp"

namespace livemap::scheduler {

using VehicleId = std::int64_t;

struct SchedulerConfig {
  double beta = 0.8;
  std::int64_t epoch_period_ms = 1000;
  std::int64_t backoff_ms = 500;
  // false: average overlaps computed once over all vehicles and reused while
  // pruning; true: recomputed over the remaining active set each iteration.
  bool recompute_overlap = true;
};

struct ScheduleState {
  SchedulerConfig config;
  std::map<VehicleId, bool> scheduled;
  std::map<VehicleId, geometry::CoverageGrid> coverage;
  std::int64_t next_epoch_ms = 0;
  std::int64_t prune_runs = 0;
};

struct OverlapGraph {
  std::vector<VehicleId> vertices;  // ascending ids
  Eigen::MatrixXd ratio;            // symmetric, diagonal unused
};

// Jaccard index of the two footprints; 0 when both are empty.
double overlap_ratio(const geometry::CoverageGrid& a, const geometry::CoverageGrid& b);

OverlapGraph build_overlap_graph(const std::map<VehicleId, geometry::CoverageGrid>& coverage);

// Mean overlap of vertex `i` against the other active vertices; 0 when it is
// the only one.
double avg_overlap(std::size_t i, const OverlapGraph& graph, const std::vector<bool>& active);

// Union area (m^2) of the footprints whose flag is set.
double union_area(const std::map<VehicleId, geometry::CoverageGrid>& coverage, const std::vector<bool>& active);

// Start with every vehicle scheduled and repeatedly drop the one with the
// largest average overlap (lowest id on ties). When the remaining union
// coverage drops to beta times the full union or below, the last removal is
// restored and pruning stops. Writes and returns state.scheduled.
const std::map<VehicleId, bool>& greedy_prune(ScheduleState& state);

// Runs greedy_prune when `now_ms` has reached the next scheduling epoch.
bool maybe_reschedule(ScheduleState& state, std::int64_t now_ms);

struct Decision {
  int scheduled = 0;  // x
  int action = -1;    // y, -1 when not scheduled
};

// Upper layer: scheduling check (pruning first at epoch boundaries). Lower
// layer: DQN action for scheduled vehicles.
Decision head_decide(VehicleId vehicle, const Eigen::VectorXf& features, ScheduleState& state,
                     agent::DqnAgent& agent, double epsilon, std::int64_t now_ms);

}  // namespace livemap::scheduler
