#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "livemap/error.hpp"

namespace livemap::mapcore {

enum class ObjectClass { kPerson, kBicycle, kCar, kMotorcycle, kBus, kTruck, kTrafficLight, kOther };

inline constexpr int kNumClasses = 8;
inline constexpr int kLatentDim = 25;

std::string_view to_string(ObjectClass c);
ObjectClass class_from_string(std::string_view s);

using LatentVector = Eigen::VectorXd;
using TimeMs = std::int64_t;
using ObjectId = std::int64_t;

struct HistoryEntry {
  TimeMs t_ms = 0;
  Eigen::Vector3d location = Eigen::Vector3d::Zero();
};

struct ObjectRecord {
  ObjectId object_id = 0;
  ObjectClass cls = ObjectClass::kOther;
  Eigen::Vector3d geo_location = Eigen::Vector3d::Zero();
  double confidence = 0.0;
  double speed_mps = 0.0;
  Eigen::Vector2d direction = Eigen::Vector2d::Zero();
  TimeMs update_time = 0;
  std::deque<LatentVector> latents;
  std::deque<HistoryEntry> history;  // oldest first
};

struct Observation {
  ObjectClass cls = ObjectClass::kOther;
  double confidence = 0.0;
  Eigen::Vector3d location = Eigen::Vector3d::Zero();
  LatentVector latent;
  std::int64_t source_vehicle = 0;
  TimeMs timestamp = 0;
};

struct MapConfig {
  double match_threshold = 5.0;
  double location_weight = 0.5;
  std::size_t history_len = 3;
  std::size_t latent_cap = 16;
  TimeMs ttl_ms = 3'600'000;
  double vehicle_radius_m = 100.0;
  double person_radius_m = 10.0;
  double default_radius_m = 30.0;

  double radius_for(ObjectClass c) const;
};

using Database = std::map<ObjectId, ObjectRecord>;

// Least-squares constant-velocity extrapolation over the recorded history.
Eigen::Vector3d predict_location(const ObjectRecord& rec, TimeMs t);

// Location-aware distance: nearest multi-view latent plus weighted squared
// distance to the predicted location.
double distance(const Observation& obs, const ObjectRecord& rec, TimeMs t, double w);

// nullopt means the observation starts a new object.
std::optional<ObjectId> match(const Observation& obs, const Database& db, TimeMs t, const MapConfig& cfg);

// Confidence-weighted fusion of one matched group into `rec`.
ObjectRecord combine(std::span<const Observation> group, const ObjectRecord& rec, const MapConfig& cfg);

std::size_t evict(Database& db, TimeMs now, TimeMs ttl);

std::vector<ObjectRecord> delta_since(const Database& db, TimeMs t);

// One JSON object per line: id, class, x, y, z, confidence, update_time, latent_count.
void write_snapshot(const Database& db, std::ostream& out);

struct Assignment {
  std::size_t observation = 0;
  ObjectId record = 0;
  bool created = false;
};

// Owns the global database; matches and fuses batches of observations.
class DataPlane {
 public:
  explicit DataPlane(MapConfig cfg = {}) : cfg_(cfg) {}

  std::vector<Assignment> ingest(std::span<const Observation> batch);
  std::size_t evict(TimeMs now) { return livemap::mapcore::evict(db_, now, cfg_.ttl_ms); }

  const Database& database() const { return db_; }
  const MapConfig& config() const { return cfg_; }

 private:
  MapConfig cfg_;
  Database db_;
  ObjectId next_id_ = 1;
};

}  // namespace livemap::mapcore
