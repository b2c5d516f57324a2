#include "livemap/profiles.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "livemap/error.hpp"

namespace livemap::scenario {

namespace {
constexpr int kMaxCheckedObjects = 256;
}

const DecisionProfile& ProfileTable::at(int y) const {
  if (y < 0 || y >= num_decisions()) throw Error(ErrorKind::kUnknownDecision, "decision " + std::to_string(y));
  return decisions[static_cast<std::size_t>(y)];
}

void ProfileTable::validate() const {
  if (decisions.empty()) throw Error(ErrorKind::kConfig, "profile table has no decisions");
  for (const auto& d : decisions) {
    if (d.onboard_ms_mean < 0 || d.server_ms_mean < 0 || d.uplink_base_bytes < 0 || d.uplink_per_object_bytes < 0 ||
        d.onboard_ms_stdev < 0 || d.server_ms_stdev < 0)
      throw Error(ErrorKind::kConfig, "profile entries must be non-negative");
  }
  for (std::size_t y = 1; y < decisions.size(); ++y) {
    if (decisions[y].onboard_ms_mean < decisions[0].onboard_ms_mean)
      throw Error(ErrorKind::kConfig, "decision 0 must have the smallest onboard time");
    for (int n = 0; n <= kMaxCheckedObjects; ++n)
      if (decisions[y].uplink_bytes(n) > decisions[y - 1].uplink_bytes(n))
        throw Error(ErrorKind::kConfig, "uplink size must be non-increasing in the decision index");
  }
  if (broadcast_bytes_per_record < 0) throw Error(ErrorKind::kConfig, "broadcast size must be non-negative");
}

std::string ProfileTable::to_json() const {
  nlohmann::ordered_json j;
  j["broadcast_bytes_per_record"] = broadcast_bytes_per_record;
  auto& arr = j["decisions"] = nlohmann::ordered_json::array();
  for (const auto& d : decisions) {
    nlohmann::ordered_json e;
    e["onboard_ms_mean"] = d.onboard_ms_mean;
    e["onboard_ms_stdev"] = d.onboard_ms_stdev;
    e["uplink_base_bytes"] = d.uplink_base_bytes;
    e["uplink_per_object_bytes"] = d.uplink_per_object_bytes;
    e["server_ms_mean"] = d.server_ms_mean;
    e["server_ms_stdev"] = d.server_ms_stdev;
    arr.push_back(e);
  }
  return j.dump(2);
}

ProfileTable ProfileTable::from_json(const std::string& text) {
  ProfileTable t;
  try {
    const auto j = nlohmann::json::parse(text, nullptr, true, true);
    t.broadcast_bytes_per_record = j.value("broadcast_bytes_per_record", 256.0);
    for (const auto& e : j.at("decisions")) {
      DecisionProfile d;
      d.onboard_ms_mean = e.at("onboard_ms_mean");
      d.onboard_ms_stdev = e.value("onboard_ms_stdev", 0.0);
      d.uplink_base_bytes = e.at("uplink_base_bytes");
      d.uplink_per_object_bytes = e.value("uplink_per_object_bytes", 0.0);
      d.server_ms_mean = e.at("server_ms_mean");
      d.server_ms_stdev = e.value("server_ms_stdev", 0.0);
      t.decisions.push_back(d);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kConfig, std::string("bad profile table: ") + e.what());
  }
  t.validate();
  return t;
}

ProfileTable ProfileTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kConfig, "cannot open profile table " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

ProfileTable default_profiles() {
  if (const char* env = std::getenv("LIVEMAP_PROFILES")) return ProfileTable::load(env);
  return ProfileTable::load(std::filesystem::path(LIVEMAP_CONFIG_DIR) / "profiles.json");
}

}  // namespace livemap::scenario
