#include "livemap/mapcore.hpp"

#include <algorithm>
#include <limits>
#include <ostream>

#include <json.hpp>

namespace livemap::mapcore {

namespace {
constexpr std::string_view kClassNames[kNumClasses] = {"person", "bicycle",      "car",  "motorcycle",
                                                       "bus",    "truck", "traffic_light", "other"};
}

std::string_view to_string(ObjectClass c) { return kClassNames[static_cast<int>(c)]; }

ObjectClass class_from_string(std::string_view s) {
  for (int i = 0; i < kNumClasses; ++i)
    if (kClassNames[i] == s) return static_cast<ObjectClass>(i);
  throw Error(ErrorKind::kConfig, "unknown object class '" + std::string(s) + "'");
}

double MapConfig::radius_for(ObjectClass c) const {
  switch (c) {
    case ObjectClass::kPerson: return person_radius_m;
    case ObjectClass::kBicycle:
    case ObjectClass::kCar:
    case ObjectClass::kMotorcycle:
    case ObjectClass::kBus:
    case ObjectClass::kTruck: return vehicle_radius_m;
    default: return default_radius_m;
  }
}

Eigen::Vector3d predict_location(const ObjectRecord& rec, TimeMs t) {
  if (rec.history.empty()) return rec.geo_location;
  if (rec.history.size() == 1) return rec.history.front().location;

  const double n = static_cast<double>(rec.history.size());
  double t_mean = 0.0;
  Eigen::Vector3d p_mean = Eigen::Vector3d::Zero();
  for (const auto& h : rec.history) {
    t_mean += static_cast<double>(h.t_ms);
    p_mean += h.location;
  }
  t_mean /= n;
  p_mean /= n;

  double stt = 0.0;
  Eigen::Vector3d stp = Eigen::Vector3d::Zero();
  for (const auto& h : rec.history) {
    const double dt = static_cast<double>(h.t_ms) - t_mean;
    stt += dt * dt;
    stp += dt * (h.location - p_mean);
  }
  if (stt == 0.0) return p_mean;
  const Eigen::Vector3d velocity = stp / stt;  // meters per ms
  return p_mean + velocity * (static_cast<double>(t) - t_mean);
}

double distance(const Observation& obs, const ObjectRecord& rec, TimeMs t, double w) {
  if (rec.latents.empty()) throw Error(ErrorKind::kInvalidRecord, "record has no latents");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& z : rec.latents) {
    if (z.size() != obs.latent.size()) throw Error(ErrorKind::kDimensionMismatch, "latent sizes differ");
    best = std::min(best, (obs.latent - z).squaredNorm());
  }
  return best + w * (obs.location - predict_location(rec, t)).squaredNorm();
}

std::optional<ObjectId> match(const Observation& obs, const Database& db, TimeMs t, const MapConfig& cfg) {
  const double radius = cfg.radius_for(obs.cls);
  std::optional<ObjectId> best_id;
  double best = std::numeric_limits<double>::infinity();
  // Map iteration is ordered by id, so strict < keeps the lower id on ties.
  for (const auto& [id, rec] : db) {
    if (rec.cls != obs.cls) continue;
    const Eigen::Vector3d predicted = predict_location(rec, t);
    if ((predicted - obs.location).norm() > radius) continue;
    const double d = distance(obs, rec, t, cfg.location_weight);
    if (d < best) {
      best = d;
      best_id = id;
    }
  }
  if (best_id && best <= cfg.match_threshold) return best_id;
  return std::nullopt;
}

ObjectRecord combine(std::span<const Observation> group, const ObjectRecord& rec, const MapConfig& cfg) {
  if (group.empty()) throw Error(ErrorKind::kDegenerateWeights, "empty observation group");
  double weight_sum = 0.0;
  Eigen::Vector3d weighted = Eigen::Vector3d::Zero();
  double conf = 0.0;
  TimeMs t_latest = std::numeric_limits<TimeMs>::min();
  for (const auto& o : group) {
    weight_sum += o.confidence;
    weighted += o.confidence * o.location;
    conf = std::max(conf, o.confidence);
    t_latest = std::max(t_latest, o.timestamp);
  }
  if (!(weight_sum > 0.0)) throw Error(ErrorKind::kDegenerateWeights, "all confidences are zero");

  ObjectRecord out = rec;
  if (out.latents.empty() && out.history.empty()) out.cls = group.front().cls;
  out.geo_location = weighted / weight_sum;
  out.confidence = std::clamp(conf, 0.0, 1.0);
  out.update_time = std::max(out.update_time, t_latest);

  for (const auto& o : group) {
    out.latents.push_back(o.latent);
    while (out.latents.size() > cfg.latent_cap) out.latents.pop_front();
  }

  // History stays sorted by time even when batches arrive out of order.
  HistoryEntry entry{t_latest, out.geo_location};
  auto pos = std::upper_bound(out.history.begin(), out.history.end(), entry.t_ms,
                              [](TimeMs t, const HistoryEntry& h) { return t < h.t_ms; });
  out.history.insert(pos, entry);
  while (out.history.size() > cfg.history_len) out.history.pop_front();

  out.speed_mps = 0.0;
  out.direction.setZero();
  if (out.history.size() >= 2) {
    const auto& a = out.history[out.history.size() - 2];
    const auto& b = out.history.back();
    const double dt_s = static_cast<double>(b.t_ms - a.t_ms) / 1000.0;
    if (dt_s > 0.0) {
      const Eigen::Vector2d v = (b.location - a.location).head<2>() / dt_s;
      out.speed_mps = v.norm();
      if (out.speed_mps > 0.0) out.direction = v / out.speed_mps;
    }
  }
  return out;
}

std::size_t evict(Database& db, TimeMs now, TimeMs ttl) {
  return std::erase_if(db, [&](const auto& kv) { return now - kv.second.update_time > ttl; });
}

std::vector<ObjectRecord> delta_since(const Database& db, TimeMs t) {
  std::vector<ObjectRecord> out;
  for (const auto& [id, rec] : db)
    if (rec.update_time > t) out.push_back(rec);
  return out;
}

void write_snapshot(const Database& db, std::ostream& out) {
  for (const auto& [id, rec] : db) {
    nlohmann::ordered_json j;
    j["id"] = id;
    j["class"] = std::string(to_string(rec.cls));
    j["x"] = rec.geo_location.x();
    j["y"] = rec.geo_location.y();
    j["z"] = rec.geo_location.z();
    j["confidence"] = rec.confidence;
    j["update_time"] = rec.update_time;
    j["latent_count"] = rec.latents.size();
    out << j.dump() << '\n';
  }
}

std::vector<Assignment> DataPlane::ingest(std::span<const Observation> batch) {
  std::vector<Assignment> out;
  out.reserve(batch.size());
  // Records as they were before this batch; new ids map to a fresh record.
  std::map<ObjectId, ObjectRecord> before;
  std::map<ObjectId, std::vector<Observation>> groups;

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& obs = batch[i];
    if (auto id = match(obs, db_, obs.timestamp, cfg_)) {
      if (!before.count(*id)) before.emplace(*id, db_.at(*id));
      groups[*id].push_back(obs);
      out.push_back({i, *id, false});
      continue;
    }
    // Insert immediately so later observations of the same object in this
    // batch match it instead of spawning duplicates.
    const ObjectId id = next_id_++;
    ObjectRecord fresh;
    fresh.object_id = id;
    fresh.cls = obs.cls;
    before.emplace(id, fresh);
    const Observation single[] = {obs};
    db_[id] = combine(single, fresh, cfg_);
    groups[id].push_back(obs);
    out.push_back({i, id, true});
  }

  for (const auto& [id, group] : groups) db_[id] = combine(group, before.at(id), cfg_);
  return out;
}

}  // namespace livemap::mapcore
