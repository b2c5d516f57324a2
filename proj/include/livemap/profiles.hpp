#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "livemap/error.hpp"

namespace livemap::scenario {

// Per-decision task parameters. onboard_ms is for a reference vehicle
// (capability 1.0) and server_ms for a reference server (speed 1.0).
struct DecisionProfile {
  double onboard_ms_mean = 0.0;
  double onboard_ms_stdev = 0.0;
  double uplink_base_bytes = 0.0;
  double uplink_per_object_bytes = 0.0;
  double server_ms_mean = 0.0;
  double server_ms_stdev = 0.0;

  double uplink_bytes(int n_objects) const { return uplink_base_bytes + uplink_per_object_bytes * n_objects; }
};

struct ProfileTable {
  std::vector<DecisionProfile> decisions;  // index = offloading decision y
  double broadcast_bytes_per_record = 256.0;

  int num_decisions() const { return static_cast<int>(decisions.size()); }
  int max_decision() const { return num_decisions() - 1; }
  const DecisionProfile& at(int y) const;

  // Means non-negative, decision 0 minimal onboard and maximal uplink,
  // uplink non-increasing in y.
  void validate() const;

  std::string to_json() const;
  static ProfileTable from_json(const std::string& text);
  static ProfileTable load(const std::filesystem::path& path);
};

// Calibrated defaults from <config dir>/profiles.json (override with the
// LIVEMAP_PROFILES environment variable).
ProfileTable default_profiles();

}  // namespace livemap::scenario
