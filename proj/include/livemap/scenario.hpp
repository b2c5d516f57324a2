#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "livemap/geometry.hpp"
#include "livemap/mapcore.hpp"
#include "livemap/profiles.hpp"
#include "livemap/vae.hpp"

namespace livemap::scenario {

enum class Kind { kIntersection, kHighway, kCircle };

std::string_view to_string(Kind k);
Kind kind_from_string(std::string_view s);  // throws kConfig

struct ScenarioSpec {
  Kind kind = Kind::kIntersection;
  int n_vehicles = 20;
  int n_objects = 30;
  std::int64_t duration_ms = 60000;
  std::int64_t frame_period_ms = 100;
  std::uint64_t seed = 1;
  double half_length_m = 100.0;  // road half length (straight kinds), wrap-around beyond

  void validate() const;
  std::int64_t frame_count() const;
};

// Hardware description fed to the agent state; `factor` scales onboard time.
struct CapabilityRecord {
  double factor = 1.0;
  double cpu_count = 6.0;
  double cpu_freq_ghz = 1.9;
  double mem_gb = 8.0;
  double gpu_cores = 384.0;
  double gpu_freq_ghz = 1.1;

  bool operator==(const CapabilityRecord&) const = default;
};

// Factors 0.5, 1.0, 2.0 map to small, medium and large embedded boards.
CapabilityRecord capability_for(double factor);

struct VehicleInfo {
  std::int64_t id = 0;
  CapabilityRecord capability;
};

struct ObjectInfo {
  std::int64_t id = 0;
  mapcore::ObjectClass cls = mapcore::ObjectClass::kOther;
  double height_m = 0.0;
  double radius_m = 0.0;
  Eigen::VectorXd signature;  // time-invariant appearance
};

struct TraceFrame {
  std::int64_t t_ms = 0;
  std::vector<geometry::Pose> poses;                  // aligned with Trace::vehicles
  std::vector<Eigen::Vector3d> object_positions;      // aligned with Trace::objects, ground contact point
};

struct Trace {
  ScenarioSpec spec;
  geometry::CameraIntrinsics intrinsics;
  std::vector<VehicleInfo> vehicles;
  std::vector<ObjectInfo> objects;
  std::vector<TraceFrame> frames;

  // Frame in effect at time t (the latest frame not after t, clamped).
  std::size_t frame_index(std::int64_t t_ms) const;
  std::vector<geometry::Occluder> occluders(std::size_t frame) const;
  // Ground area worth covering; every footprint fits inside.
  geometry::GridSpec coverage_grid(double cell_m = 0.5) const;
};

inline constexpr int kSignatureDim = 64;
inline constexpr double kCameraHeightM = 1.5;

geometry::CameraIntrinsics default_intrinsics();

// Class prototype plus instance offset; prototypes are fixed per class.
Eigen::VectorXd class_prototype(mapcore::ObjectClass cls);
template <typename Rng>
Eigen::VectorXd sample_signature(mapcore::ObjectClass cls, Rng& rng, double instance_sigma = 0.3) {
  std::normal_distribution<double> n(0.0, instance_sigma);
  Eigen::VectorXd s = class_prototype(cls);
  for (Eigen::Index i = 0; i < s.size(); ++i) s[i] += n(rng);
  return s;
}

double class_height_m(mapcore::ObjectClass cls);
double class_radius_m(mapcore::ObjectClass cls);

Trace generate(const ScenarioSpec& spec);

struct ObserveConfig {
  double sigma_loc_m = 0.2;
  double confidence_mean = 0.8;
  double confidence_stdev = 0.1;
  double view_noise_sigma = 0.05;
};

// Observation plus the ground-truth object it came from; the truth id is for
// scoring only.
struct TruthObservation {
  mapcore::Observation obs;
  std::int64_t truth_id = 0;
  Eigen::Vector3d truth_location = Eigen::Vector3d::Zero();
};

std::vector<TruthObservation> observe(const Trace& trace, std::size_t frame, std::size_t vehicle,
                                      const neural::VaeModel& vae, const ObserveConfig& cfg, std::mt19937_64& rng,
                                      std::int64_t timestamp_ms);

// Ids of objects inside the vehicle's sector and outside every shadow.
std::vector<std::size_t> visible_objects(const Trace& trace, std::size_t frame, std::size_t vehicle);

// VAE fitted on a synthetic signature corpus drawn like the scenario objects.
neural::VaeModel train_default_vae(std::uint64_t seed, int samples = 1024, int epochs = 40);

// Line-delimited JSON: a header line (scenario, intrinsics, vehicles, objects)
// followed by one line per frame.
void write_trace(const Trace& trace, std::ostream& out);
Trace read_trace(std::istream& in);
void save_trace(const Trace& trace, const std::filesystem::path& path);
Trace load_trace(const std::filesystem::path& path);

}  // namespace livemap::scenario
