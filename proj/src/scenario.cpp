#include "livemap/scenario.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "livemap/error.hpp"

namespace livemap::scenario {

using mapcore::ObjectClass;

namespace {

using json = nlohmann::ordered_json;

constexpr std::array<std::string_view, 3> kKindNames = {"intersection", "highway", "circle"};

// Constant-velocity motion on a line (wrapping over the road length), on a
// circle around the origin, or no motion at all.
struct Path {
  enum Type { kLine, kArc, kStatic } type = kStatic;
  Eigen::Vector2d anchor = Eigen::Vector2d::Zero();  // line: lateral offset point; static: position
  Eigen::Vector2d dir = Eigen::Vector2d::UnitX();
  double s0 = 0.0;
  double speed = 0.0;  // m/s, signed for arcs (ccw > 0)
  double radius = 0.0;
  double half_length = 150.0;

  double wrap(double s) const {
    const double span = 2.0 * half_length;
    double r = std::fmod(s + half_length, span);
    if (r < 0) r += span;
    return r - half_length;
  }

  Eigen::Vector2d at(double t_s) const {
    switch (type) {
      case kLine: return anchor + wrap(s0 + speed * t_s) * dir;
      case kArc: {
        const double th = s0 + speed * t_s / radius;
        return {radius * std::cos(th), radius * std::sin(th)};
      }
      case kStatic: break;
    }
    return anchor;
  }

  double heading(double t_s) const {
    if (type == kArc) {
      const double th = s0 + speed * t_s / radius;
      return speed >= 0 ? th + geometry::kPi / 2 : th - geometry::kPi / 2;
    }
    return std::atan2(dir.y(), dir.x());
  }
};

template <typename Rng>
double uniform(Rng& rng, double a, double b) {
  return std::uniform_real_distribution<double>(a, b)(rng);
}

// Line along one of the four compass directions with right-hand lane offset.
Path lane_path(int stream, double offset, double s0, double speed, double half_length) {
  static const Eigen::Vector2d dirs[4] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  Path p;
  p.type = Path::kLine;
  p.dir = dirs[stream];
  p.anchor = Eigen::Vector2d(p.dir.y(), -p.dir.x()) * offset;  // right of travel
  p.s0 = s0;
  p.speed = speed;
  p.half_length = half_length;
  return p;
}

Path vehicle_path(const ScenarioSpec& spec, int i, std::mt19937_64& rng) {
  const double L = spec.half_length_m;
  switch (spec.kind) {
    case Kind::kIntersection:
      return lane_path(i % 4, i % 8 < 4 ? 2.0 : 5.5, uniform(rng, -L, L), uniform(rng, 8.0, 14.0), L);
    case Kind::kHighway: {
      static const double offsets[3] = {2.0, 5.5, 9.0};
      return lane_path(i % 2, offsets[(i / 2) % 3], uniform(rng, -L, L), uniform(rng, 20.0, 30.0), L);
    }
    case Kind::kCircle: {
      static const double radii[3] = {40.0, 55.0, 70.0};
      Path p;
      p.type = Path::kArc;
      p.radius = radii[i % 3];
      p.s0 = uniform(rng, -geometry::kPi, geometry::kPi);
      p.speed = uniform(rng, 8.0, 14.0) * ((i / 3) % 2 == 0 ? 1.0 : -1.0);
      return p;
    }
  }
  return {};
}

constexpr double kMinStaticSpacingM = 4.0;

constexpr std::array<ObjectClass, 10> kObjectMix = {
    ObjectClass::kPerson, ObjectClass::kCar,     ObjectClass::kPerson, ObjectClass::kTrafficLight,
    ObjectClass::kCar,    ObjectClass::kBicycle, ObjectClass::kPerson, ObjectClass::kBus,
    ObjectClass::kCar,    ObjectClass::kTruck};

double class_speed(ObjectClass c, std::mt19937_64& rng) {
  switch (c) {
    case ObjectClass::kPerson: return uniform(rng, 1.0, 1.6);
    case ObjectClass::kBicycle: return uniform(rng, 3.0, 5.0);
    case ObjectClass::kMotorcycle:
    case ObjectClass::kCar: return uniform(rng, 6.0, 12.0);
    case ObjectClass::kBus:
    case ObjectClass::kTruck: return uniform(rng, 5.0, 9.0);
    default: return 0.0;
  }
}

Path object_path(const ScenarioSpec& spec, ObjectClass c, std::mt19937_64& rng) {
  const double L = spec.half_length_m;
  const double v = class_speed(c, rng);
  const bool person = c == ObjectClass::kPerson;
  const bool fixed = v == 0.0;
  std::uniform_int_distribution<int> pick4(0, 3);
  switch (spec.kind) {
    case Kind::kIntersection: {
      const int stream = pick4(rng);
      if (fixed) {
        Path p;
        const double sx = pick4(rng) % 2 ? 1.0 : -1.0, sy = pick4(rng) % 2 ? 1.0 : -1.0;
        p.anchor = {sx * uniform(rng, 9.0, 15.0), sy * uniform(rng, 9.0, 15.0)};
        return p;
      }
      // People walk the sidewalks near the junction, traffic uses the outer lanes.
      if (person) return lane_path(stream, uniform(rng, 8.0, 10.0), uniform(rng, -60.0, 60.0), v, L);
      return lane_path(stream, uniform(rng, 3.0, 7.0), uniform(rng, -L, L), v, L);
    }
    case Kind::kHighway: {
      const int stream = pick4(rng) % 2;
      if (fixed) {
        Path p;
        p.anchor = {uniform(rng, -L, L), (pick4(rng) % 2 ? 1.0 : -1.0) * uniform(rng, 12.0, 14.0)};
        return p;
      }
      if (person) return lane_path(stream, uniform(rng, 12.0, 14.0), uniform(rng, -L, L), v, L);
      return lane_path(stream, uniform(rng, 3.0, 10.0), uniform(rng, -L, L), 2.0 * v, L);
    }
    case Kind::kCircle: {
      Path p;
      const double th = uniform(rng, -geometry::kPi, geometry::kPi);
      if (fixed) {
        const double r = uniform(rng, 25.0, 30.0);
        p.anchor = {r * std::cos(th), r * std::sin(th)};
        return p;
      }
      p.type = Path::kArc;
      p.radius = person ? uniform(rng, 80.0, 85.0) : uniform(rng, 45.0, 65.0);
      p.s0 = th;
      p.speed = v * (pick4(rng) % 2 ? 1.0 : -1.0);
      return p;
    }
  }
  return {};
}

json intrinsics_json(const geometry::CameraIntrinsics& c) {
  return {{"width_px", c.image_width_px}, {"height_px", c.image_height_px}, {"fov_deg", c.fov_deg},
          {"focal_px", c.focal_px},       {"max_range_m", c.max_range_m}};
}

json capability_json(const CapabilityRecord& c) {
  return {{"factor", c.factor},   {"cpu_count", c.cpu_count}, {"cpu_freq_ghz", c.cpu_freq_ghz},
          {"mem_gb", c.mem_gb},   {"gpu_cores", c.gpu_cores}, {"gpu_freq_ghz", c.gpu_freq_ghz}};
}

}  // namespace

std::string_view to_string(Kind k) { return kKindNames[static_cast<std::size_t>(k)]; }

Kind kind_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kKindNames.size(); ++i)
    if (kKindNames[i] == s) return static_cast<Kind>(i);
  throw Error(ErrorKind::kConfig, "unknown scenario kind '" + std::string(s) + "'");
}

void ScenarioSpec::validate() const {
  if (n_vehicles < 1) throw Error(ErrorKind::kConfig, "n_vehicles must be >= 1");
  if (n_objects < 0) throw Error(ErrorKind::kConfig, "n_objects must be >= 0");
  if (duration_ms <= 0 || frame_period_ms <= 0) throw Error(ErrorKind::kConfig, "durations must be positive");
  if (!(half_length_m > 0)) throw Error(ErrorKind::kConfig, "half_length_m must be positive");
}

std::int64_t ScenarioSpec::frame_count() const { return (duration_ms + frame_period_ms - 1) / frame_period_ms; }

CapabilityRecord capability_for(double factor) {
  if (factor <= 0.5) return {factor, 4, 1.2, 4, 128, 0.6};
  if (factor >= 2.0) return {factor, 8, 2.2, 32, 512, 1.4};
  return {factor, 6, 1.9, 8, 384, 1.1};
}

geometry::CameraIntrinsics default_intrinsics() { return geometry::CameraIntrinsics::from_fov(741, 540, 54.04, 50.0); }

Eigen::VectorXd class_prototype(ObjectClass cls) {
  // Seeded by class index only, so every trace and model agrees.
  std::mt19937_64 rng(0x5eed0000u + static_cast<unsigned>(cls));
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::VectorXd p(kSignatureDim);
  for (int i = 0; i < kSignatureDim; ++i) p[i] = n(rng);
  return p;
}

double class_height_m(ObjectClass cls) {
  switch (cls) {
    case ObjectClass::kPerson: return 1.7;
    case ObjectClass::kBicycle:
    case ObjectClass::kMotorcycle: return 1.2;
    case ObjectClass::kCar: return 1.45;
    case ObjectClass::kBus: return 3.2;
    case ObjectClass::kTruck: return 3.5;
    case ObjectClass::kTrafficLight: return 4.0;
    default: return 1.0;
  }
}

double class_radius_m(ObjectClass cls) {
  switch (cls) {
    case ObjectClass::kPerson: return 0.3;
    case ObjectClass::kBicycle:
    case ObjectClass::kMotorcycle: return 0.5;
    case ObjectClass::kCar: return 1.0;
    case ObjectClass::kBus:
    case ObjectClass::kTruck: return 1.4;
    case ObjectClass::kTrafficLight: return 0.2;
    default: return 0.5;
  }
}

std::size_t Trace::frame_index(std::int64_t t_ms) const {
  if (frames.empty()) throw Error(ErrorKind::kConfig, "trace has no frames");
  if (t_ms <= frames.front().t_ms) return 0;
  const auto idx = static_cast<std::size_t>((t_ms - frames.front().t_ms) / spec.frame_period_ms);
  return std::min(idx, frames.size() - 1);
}

std::vector<geometry::Occluder> Trace::occluders(std::size_t frame) const {
  const auto& f = frames.at(frame);
  std::vector<geometry::Occluder> out(objects.size());
  for (std::size_t j = 0; j < objects.size(); ++j)
    out[j] = {f.object_positions[j], objects[j].height_m, objects[j].radius_m};
  return out;
}

geometry::GridSpec Trace::coverage_grid(double cell_m) const {
  double x_lo = 1e300, x_hi = -1e300, y_lo = 1e300, y_hi = -1e300;
  for (const auto& f : frames)
    for (const auto& p : f.poses) {
      const Eigen::Vector3d q = p.position();
      x_lo = std::min(x_lo, q.x());
      x_hi = std::max(x_hi, q.x());
      y_lo = std::min(y_lo, q.y());
      y_hi = std::max(y_hi, q.y());
    }
  const double pad = intrinsics.max_range_m + cell_m;
  geometry::GridSpec g;
  g.cell_m = cell_m;
  g.x0 = std::floor((x_lo - pad) / cell_m) * cell_m;
  g.y0 = std::floor((y_lo - pad) / cell_m) * cell_m;
  g.width = static_cast<int>(std::ceil((x_hi + pad - g.x0) / cell_m));
  g.height = static_cast<int>(std::ceil((y_hi + pad - g.y0) / cell_m));
  return g;
}

Trace generate(const ScenarioSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  Trace tr;
  tr.spec = spec;
  tr.intrinsics = default_intrinsics();

  static const double factors[3] = {0.5, 1.0, 2.0};
  std::uniform_int_distribution<int> pick3(0, 2);
  std::vector<Path> vpaths;
  for (int i = 0; i < spec.n_vehicles; ++i) {
    tr.vehicles.push_back({i, capability_for(factors[pick3(rng)])});
    vpaths.push_back(vehicle_path(spec, i, rng));
  }

  std::vector<Path> opaths;
  for (int j = 0; j < spec.n_objects; ++j) {
    ObjectInfo o;
    o.id = j;
    o.cls = kObjectMix[static_cast<std::size_t>(j) % kObjectMix.size()];
    o.height_m = class_height_m(o.cls);
    o.radius_m = class_radius_m(o.cls);
    o.signature = sample_signature(o.cls, rng);
    tr.objects.push_back(std::move(o));
    // Fixed objects stand on distinct poles: redraw until clear of the others.
    Path path = object_path(spec, tr.objects.back().cls, rng);
    for (int attempt = 0; path.type == Path::kStatic && attempt < 100; ++attempt) {
      const bool clear = std::none_of(opaths.begin(), opaths.end(), [&](const Path& q) {
        return q.type == Path::kStatic && (q.anchor - path.anchor).norm() < kMinStaticSpacingM;
      });
      if (clear) break;
      path = object_path(spec, tr.objects.back().cls, rng);
    }
    opaths.push_back(path);
  }

  const std::int64_t n = spec.frame_count();
  tr.frames.reserve(static_cast<std::size_t>(n));
  for (std::int64_t k = 0; k < n; ++k) {
    TraceFrame f;
    f.t_ms = k * spec.frame_period_ms;
    const double t_s = static_cast<double>(f.t_ms) / 1000.0;
    for (const auto& p : vpaths) {
      const Eigen::Vector2d xy = p.at(t_s);
      f.poses.push_back(geometry::Pose::level({xy.x(), xy.y(), kCameraHeightM}, p.heading(t_s)));
    }
    for (const auto& p : opaths) {
      const Eigen::Vector2d xy = p.at(t_s);
      f.object_positions.emplace_back(xy.x(), xy.y(), 0.0);
    }
    tr.frames.push_back(std::move(f));
  }
  return tr;
}

std::vector<std::size_t> visible_objects(const Trace& trace, std::size_t frame, std::size_t vehicle) {
  const auto& f = trace.frames.at(frame);
  const auto occ = trace.occluders(frame);
  const auto& pose = f.poses.at(vehicle);
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < occ.size(); ++j) {
    const Eigen::Vector3d& p = f.object_positions[j];
    if (geometry::point_covered(pose, trace.intrinsics, occ, p.x(), p.y(), j)) out.push_back(j);
  }
  return out;
}

std::vector<TruthObservation> observe(const Trace& trace, std::size_t frame, std::size_t vehicle,
                                      const neural::VaeModel& vae, const ObserveConfig& cfg, std::mt19937_64& rng,
                                      std::int64_t timestamp_ms) {
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<TruthObservation> out;
  for (std::size_t j : visible_objects(trace, frame, vehicle)) {
    const auto& obj = trace.objects[j];
    TruthObservation t;
    t.truth_id = obj.id;
    t.obs.cls = obj.cls;
    t.obs.source_vehicle = trace.vehicles[vehicle].id;
    t.obs.timestamp = timestamp_ms;
    t.truth_location = trace.frames[frame].object_positions[j];
    t.obs.location = t.truth_location;
    for (int a = 0; a < 3; ++a) t.obs.location[a] += cfg.sigma_loc_m * unit(rng);
    t.obs.confidence = std::clamp(cfg.confidence_mean + cfg.confidence_stdev * unit(rng), 0.01, 1.0);
    Eigen::VectorXd view = obj.signature;
    for (Eigen::Index i = 0; i < view.size(); ++i) view[i] += cfg.view_noise_sigma * unit(rng);
    t.obs.latent = neural::extract_feature(vae, view);
    out.push_back(std::move(t));
  }
  return out;
}

neural::VaeModel train_default_vae(std::uint64_t seed, int samples, int epochs) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> cls(0, mapcore::kNumClasses - 1);
  std::normal_distribution<double> view(0.0, 0.05);
  neural::Matrix<double> data(kSignatureDim, samples);
  for (int i = 0; i < samples; ++i) {
    Eigen::VectorXd s = sample_signature(static_cast<ObjectClass>(cls(rng)), rng);
    for (Eigen::Index k = 0; k < s.size(); ++k) s[k] += view(rng);
    data.col(i) = s;
  }
  neural::VaeModel model = neural::VaeModel::random(neural::VaeConfig{}, rng);
  neural::VaeTrainConfig tc;
  tc.epochs = epochs;
  tc.seed = seed + 1;
  neural::train_vae(model, data, tc);
  return model;
}

void write_trace(const Trace& trace, std::ostream& out) {
  json h;
  h["format"] = "livemap-trace";
  h["scenario"] = {{"kind", std::string(to_string(trace.spec.kind))},
                   {"n_vehicles", trace.spec.n_vehicles},
                   {"n_objects", trace.spec.n_objects},
                   {"duration_ms", trace.spec.duration_ms},
                   {"frame_period_ms", trace.spec.frame_period_ms},
                   {"seed", trace.spec.seed},
                   {"half_length_m", trace.spec.half_length_m}};
  h["intrinsics"] = intrinsics_json(trace.intrinsics);
  auto& vs = h["vehicles"] = json::array();
  for (const auto& v : trace.vehicles) vs.push_back({{"id", v.id}, {"capability", capability_json(v.capability)}});
  auto& os = h["objects"] = json::array();
  for (const auto& o : trace.objects) {
    std::vector<double> sig(o.signature.data(), o.signature.data() + o.signature.size());
    os.push_back({{"id", o.id},
                  {"class", std::string(mapcore::to_string(o.cls))},
                  {"height_m", o.height_m},
                  {"radius_m", o.radius_m},
                  {"signature", sig}});
  }
  out << h.dump() << '\n';

  for (const auto& f : trace.frames) {
    json j;
    j["t_ms"] = f.t_ms;
    auto& poses = j["poses"] = json::array();
    for (const auto& p : f.poses) {
      std::vector<double> m(16);
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) m[static_cast<std::size_t>(4 * r + c)] = p.cam_to_world(r, c);
      poses.push_back(m);
    }
    auto& objs = j["objects"] = json::array();
    for (const auto& p : f.object_positions) objs.push_back({p.x(), p.y(), p.z()});
    out << j.dump() << '\n';
  }
}

Trace read_trace(std::istream& in) {
  Trace tr;
  std::string line;
  try {
    if (!std::getline(in, line)) throw Error(ErrorKind::kIo, "empty trace");
    const auto h = json::parse(line);
    if (h.value("format", "") != "livemap-trace") throw Error(ErrorKind::kIo, "not a trace file");
    const auto& s = h.at("scenario");
    tr.spec.kind = kind_from_string(s.at("kind").get<std::string>());
    tr.spec.n_vehicles = s.at("n_vehicles");
    tr.spec.n_objects = s.at("n_objects");
    tr.spec.duration_ms = s.at("duration_ms");
    tr.spec.frame_period_ms = s.at("frame_period_ms");
    tr.spec.seed = s.at("seed");
    tr.spec.half_length_m = s.at("half_length_m");
    const auto& c = h.at("intrinsics");
    tr.intrinsics.image_width_px = c.at("width_px");
    tr.intrinsics.image_height_px = c.at("height_px");
    tr.intrinsics.fov_deg = c.at("fov_deg");
    tr.intrinsics.focal_px = c.at("focal_px");
    tr.intrinsics.max_range_m = c.at("max_range_m");
    tr.intrinsics.validate();
    for (const auto& v : h.at("vehicles")) {
      const auto& cap = v.at("capability");
      tr.vehicles.push_back({v.at("id"),
                             {cap.at("factor"), cap.at("cpu_count"), cap.at("cpu_freq_ghz"), cap.at("mem_gb"),
                              cap.at("gpu_cores"), cap.at("gpu_freq_ghz")}});
    }
    for (const auto& o : h.at("objects")) {
      ObjectInfo info;
      info.id = o.at("id");
      info.cls = mapcore::class_from_string(o.at("class").get<std::string>());
      info.height_m = o.at("height_m");
      info.radius_m = o.at("radius_m");
      const auto sig = o.at("signature").get<std::vector<double>>();
      info.signature = Eigen::Map<const Eigen::VectorXd>(sig.data(), static_cast<Eigen::Index>(sig.size()));
      tr.objects.push_back(std::move(info));
    }
    std::int64_t last_t = -1;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = json::parse(line);
      TraceFrame f;
      f.t_ms = j.at("t_ms");
      if (f.t_ms <= last_t && !tr.frames.empty()) throw Error(ErrorKind::kIo, "frame times must increase");
      last_t = f.t_ms;
      for (const auto& m : j.at("poses")) {
        const auto v = m.get<std::vector<double>>();
        if (v.size() != 16) throw Error(ErrorKind::kIo, "pose needs 16 entries");
        geometry::Pose p;
        for (int r = 0; r < 4; ++r)
          for (int c2 = 0; c2 < 4; ++c2) p.cam_to_world(r, c2) = v[static_cast<std::size_t>(4 * r + c2)];
        p.validate();
        f.poses.push_back(p);
      }
      for (const auto& o : j.at("objects")) {
        const auto v = o.get<std::vector<double>>();
        f.object_positions.emplace_back(v.at(0), v.at(1), v.at(2));
      }
      if (f.poses.size() != tr.vehicles.size() || f.object_positions.size() != tr.objects.size())
        throw Error(ErrorKind::kIo, "frame does not match header");
      tr.frames.push_back(std::move(f));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kIo, std::string("bad trace: ") + e.what());
  }
  return tr;
}

void save_trace(const Trace& trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  write_trace(trace, out);
}

Trace load_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  return read_trace(in);
}

}  // namespace livemap::scenario
