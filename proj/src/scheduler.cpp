#include "livemap/scheduler.hpp"

#include <bit>

namespace livemap::scheduler {

namespace {

std::size_t popcount_union(const std::map<VehicleId, geometry::CoverageGrid>& coverage,
                           const std::vector<bool>& active) {
  std::vector<std::uint64_t> acc;
  std::size_t k = 0;
  for (const auto& [id, grid] : coverage) {
    if (acc.empty()) acc.assign(grid.words().size(), 0);
    if (grid.words().size() != acc.size()) throw Error(ErrorKind::kIncompatibleGrids, "grid sizes differ");
    if (active[k++]) {
      auto w = grid.words();
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] |= w[i];
    }
  }
  std::size_t n = 0;
  for (auto w : acc) n += static_cast<std::size_t>(std::popcount(w));
  return n;
}

}  // namespace

double overlap_ratio(const geometry::CoverageGrid& a, const geometry::CoverageGrid& b) {
  const double uni = geometry::grid_union(a, b).area_m2();
  if (uni == 0.0) return 0.0;
  return geometry::grid_intersection(a, b).area_m2() / uni;
}

OverlapGraph build_overlap_graph(const std::map<VehicleId, geometry::CoverageGrid>& coverage) {
  OverlapGraph g;
  std::vector<const geometry::CoverageGrid*> grids;
  for (const auto& [id, grid] : coverage) {
    g.vertices.push_back(id);
    grids.push_back(&grid);
  }
  const auto n = static_cast<Eigen::Index>(g.vertices.size());
  g.ratio = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) g.ratio(i, j) = g.ratio(j, i) = overlap_ratio(*grids[i], *grids[j]);
  return g;
}

double avg_overlap(std::size_t i, const OverlapGraph& graph, const std::vector<bool>& active) {
  double sum = 0.0;
  int others = 0;
  for (std::size_t j = 0; j < graph.vertices.size(); ++j) {
    if (j == i || !active[j]) continue;
    sum += graph.ratio(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    ++others;
  }
  return others == 0 ? 0.0 : sum / others;
}

double union_area(const std::map<VehicleId, geometry::CoverageGrid>& coverage, const std::vector<bool>& active) {
  if (coverage.empty()) return 0.0;
  const double cell = coverage.begin()->second.spec().cell_m;
  return static_cast<double>(popcount_union(coverage, active)) * cell * cell;
}

const std::map<VehicleId, bool>& greedy_prune(ScheduleState& state) {
  const auto& cov = state.coverage;
  const std::size_t n = cov.size();
  state.scheduled.clear();
  ++state.prune_runs;
  if (n == 0) return state.scheduled;

  const OverlapGraph graph = build_overlap_graph(cov);
  std::vector<bool> active(n, true);
  const double total = static_cast<double>(popcount_union(cov, active));
  const double floor = state.config.beta * total;

  std::vector<double> static_avg(n);
  for (std::size_t i = 0; i < n; ++i) static_avg[i] = avg_overlap(i, graph, active);

  for (std::size_t remaining = n; remaining > 0; --remaining) {
    std::size_t pick = n;
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!active[i]) continue;
      const double o = state.config.recompute_overlap ? avg_overlap(i, graph, active) : static_avg[i];
      if (o > best) {  // strict: lowest id wins ties
        best = o;
        pick = i;
      }
    }
    active[pick] = false;
    if (static_cast<double>(popcount_union(cov, active)) <= floor) {
      active[pick] = true;
      break;
    }
  }

  std::size_t k = 0;
  for (const auto& [id, grid] : cov) state.scheduled[id] = active[k++];
  return state.scheduled;
}

bool maybe_reschedule(ScheduleState& state, std::int64_t now_ms) {
  if (now_ms < state.next_epoch_ms) return false;
  greedy_prune(state);
  const std::int64_t period = std::max<std::int64_t>(1, state.config.epoch_period_ms);
  state.next_epoch_ms = (now_ms / period + 1) * period;
  return true;
}

Decision head_decide(VehicleId vehicle, const Eigen::VectorXf& features, ScheduleState& state,
                     agent::DqnAgent& agent, double epsilon, std::int64_t now_ms) {
  maybe_reschedule(state, now_ms);
  auto it = state.scheduled.find(vehicle);
  // A vehicle unknown to the last pruning pass is admitted.
  const bool scheduled = it == state.scheduled.end() || it->second;
  if (!scheduled) return {0, -1};
  return {1, agent.act(features, epsilon)};
}

}  // namespace livemap::scheduler
