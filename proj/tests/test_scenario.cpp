#include <doctest.h>

#include <cmath>
#include <sstream>

#include "livemap/profiles.hpp"
#include "livemap/scenario.hpp"

using namespace livemap;
using namespace livemap::scenario;
using mapcore::ObjectClass;

namespace {

ScenarioSpec small_spec(Kind kind, std::uint64_t seed = 4) {
  ScenarioSpec s;
  s.kind = kind;
  s.n_vehicles = 8;
  s.n_objects = 20;
  s.duration_ms = 3000;
  s.seed = seed;
  return s;
}

// One vehicle at the origin looking along +x, objects placed by hand.
Trace hand_trace(const std::vector<std::pair<ObjectClass, Eigen::Vector3d>>& objects) {
  Trace t;
  t.spec.n_vehicles = 1;
  t.spec.n_objects = static_cast<int>(objects.size());
  t.intrinsics = default_intrinsics();
  t.vehicles.push_back({0, capability_for(1.0)});
  TraceFrame f;
  f.poses.push_back(geometry::Pose::level({0, 0, kCameraHeightM}, 0.0));
  std::mt19937_64 rng(1);
  for (std::size_t j = 0; j < objects.size(); ++j) {
    ObjectInfo o;
    o.id = static_cast<std::int64_t>(j);
    o.cls = objects[j].first;
    o.height_m = class_height_m(o.cls);
    o.radius_m = class_radius_m(o.cls);
    o.signature = sample_signature(o.cls, rng);
    t.objects.push_back(o);
    f.object_positions.push_back(objects[j].second);
  }
  t.frames.push_back(f);
  return t;
}

}  // namespace

TEST_SUITE("scenario") {

TEST_CASE("one vehicle, one frame") {
  ScenarioSpec s;
  s.n_vehicles = 1;
  s.duration_ms = s.frame_period_ms;
  const auto t = generate(s);
  REQUIRE(t.frames.size() == 1);
  CHECK(t.frames[0].poses.size() == 1);
  CHECK(t.vehicles.size() == 1);
}

TEST_CASE("generation is deterministic per seed") {
  for (Kind k : {Kind::kIntersection, Kind::kHighway, Kind::kCircle}) {
    std::ostringstream a, b, c;
    write_trace(generate(small_spec(k)), a);
    write_trace(generate(small_spec(k)), b);
    write_trace(generate(small_spec(k, 5)), c);
    CHECK(a.str() == b.str());
    CHECK(a.str() != c.str());
  }
}

TEST_CASE("highway headings follow the two lane directions") {
  const auto t = generate(small_spec(Kind::kHighway));
  for (const auto& f : t.frames) {
    for (const auto& p : f.poses) {
      const double h = p.heading_rad();
      const bool east = std::abs(h) < 1e-9;
      const bool west = std::abs(std::abs(h) - geometry::kPi) < 1e-9;
      CHECK((east || west));
      CHECK(p.position().z() == kCameraHeightM);
    }
  }
}

TEST_CASE("fixed objects keep their distance") {
  for (auto kind : {Kind::kIntersection, Kind::kHighway, Kind::kCircle}) {
    auto spec = small_spec(kind, 12);
    spec.n_objects = 50;
    const auto t = generate(spec);
    std::vector<Eigen::Vector3d> fixed;
    for (std::size_t j = 0; j < t.objects.size(); ++j)
      if (t.frames.front().object_positions[j] == t.frames.back().object_positions[j])
        fixed.push_back(t.frames.front().object_positions[j]);
    REQUIRE(fixed.size() >= 5);
    for (std::size_t a = 0; a < fixed.size(); ++a)
      for (std::size_t b = a + 1; b < fixed.size(); ++b) CHECK((fixed[a] - fixed[b]).norm() >= 4.0);
  }
}

TEST_CASE("circle vehicles stay on their loops") {
  const auto t = generate(small_spec(Kind::kCircle));
  for (std::size_t i = 0; i < t.vehicles.size(); ++i) {
    const double r0 = t.frames.front().poses[i].position().head<2>().norm();
    CHECK((std::abs(r0 - 40) < 1e-9 || std::abs(r0 - 55) < 1e-9 || std::abs(r0 - 70) < 1e-9));
    for (const auto& f : t.frames) CHECK(f.poses[i].position().head<2>().norm() == doctest::Approx(r0));
  }
}

TEST_CASE("frames are strictly increasing and capabilities come from the three boards") {
  const auto t = generate(small_spec(Kind::kIntersection));
  for (std::size_t k = 1; k < t.frames.size(); ++k) CHECK(t.frames[k].t_ms > t.frames[k - 1].t_ms);
  for (const auto& v : t.vehicles) CHECK(v.capability == capability_for(v.capability.factor));
  CHECK(t.frame_index(150) == 1);
  CHECK(t.frame_index(-5) == 0);
  CHECK(t.frame_index(1'000'000) == t.frames.size() - 1);
}

TEST_CASE("invalid specs are config errors") {
  try {
    kind_from_string("roundabout");
    FAIL("expected config error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kConfig);
  }
  ScenarioSpec s;
  s.n_vehicles = 0;
  CHECK_THROWS_AS(generate(s), Error);
}

TEST_CASE("trace files round trip") {
  const auto t = generate(small_spec(Kind::kCircle));
  std::stringstream io;
  write_trace(t, io);
  const auto back = read_trace(io);
  CHECK(back.spec.kind == t.spec.kind);
  CHECK(back.spec.seed == t.spec.seed);
  CHECK(back.intrinsics.focal_px == t.intrinsics.focal_px);
  REQUIRE(back.frames.size() == t.frames.size());
  for (std::size_t k = 0; k < t.frames.size(); ++k) {
    CHECK(back.frames[k].t_ms == t.frames[k].t_ms);
    for (std::size_t i = 0; i < t.vehicles.size(); ++i)
      CHECK(back.frames[k].poses[i].cam_to_world == t.frames[k].poses[i].cam_to_world);
    CHECK(back.frames[k].object_positions == t.frames[k].object_positions);
  }
  for (std::size_t j = 0; j < t.objects.size(); ++j) {
    CHECK(back.objects[j].cls == t.objects[j].cls);
    CHECK(back.objects[j].signature == t.objects[j].signature);
  }
  std::ostringstream again;
  write_trace(back, again);
  std::ostringstream first;
  write_trace(t, first);
  CHECK(again.str() == first.str());

  std::istringstream junk("{\"format\":\"other\"}\n");
  CHECK_THROWS_AS(read_trace(junk), Error);
}

TEST_CASE("visibility follows sector and shadows") {
  const auto t = hand_trace({{ObjectClass::kCar, {10, 0, 0}},
                             {ObjectClass::kCar, {-10, 0, 0}},
                             {ObjectClass::kPerson, {60, 0, 0}},
                             {ObjectClass::kTruck, {20, 8, 0}},
                             {ObjectClass::kPerson, {30, 12, 0}}});
  const auto vis = visible_objects(t, 0, 0);
  CHECK(vis == std::vector<std::size_t>{0, 3});
}

TEST_CASE("low objects do not hide what is behind them") {
  // A car is lower than the camera; the person behind it stays visible.
  const auto t = hand_trace({{ObjectClass::kCar, {10, 0, 0}}, {ObjectClass::kPerson, {20, 0, 0}}});
  CHECK(visible_objects(t, 0, 0) == std::vector<std::size_t>{0, 1});
}

TEST_CASE("noiseless observation reports the truth") {
  const auto t = hand_trace({{ObjectClass::kCar, {10, 1, 0}}, {ObjectClass::kBus, {25, -3, 0}}});
  std::mt19937_64 rng(3);
  const auto vae = neural::VaeModel::random({}, rng);
  ObserveConfig cfg;
  cfg.sigma_loc_m = 0.0;
  cfg.view_noise_sigma = 0.0;
  const auto obs = observe(t, 0, 0, vae, cfg, rng, 100);
  REQUIRE(obs.size() == 2);
  for (const auto& o : obs) {
    CHECK(o.obs.location == o.truth_location);
    CHECK(o.obs.latent == neural::extract_feature(vae, t.objects[static_cast<std::size_t>(o.truth_id)].signature));
    CHECK(o.obs.timestamp == 100);
    CHECK(o.obs.confidence > 0.0);
    CHECK(o.obs.confidence <= 1.0);
  }
  CHECK(obs[1].obs.cls == ObjectClass::kBus);
}

TEST_CASE("observations stay inside the sensing sector") {
  const auto t = generate(small_spec(Kind::kIntersection));
  std::mt19937_64 rng(2);
  const auto vae = neural::VaeModel::random({}, rng);
  const double half_fov = geometry::deg_to_rad(t.intrinsics.fov_deg) / 2;
  std::size_t seen = 0;
  for (std::size_t k = 0; k < t.frames.size(); k += 5) {
    for (std::size_t v = 0; v < t.vehicles.size(); ++v) {
      const auto& pose = t.frames[k].poses[v];
      for (const auto& o : observe(t, k, v, vae, {}, rng, 0)) {
        const Eigen::Vector2d rel = o.truth_location.head<2>() - pose.position().head<2>();
        CHECK(rel.norm() <= t.intrinsics.max_range_m);
        const double off = std::remainder(std::atan2(rel.y(), rel.x()) - pose.heading_rad(), 2 * geometry::kPi);
        CHECK(std::abs(off) <= half_fov + 1e-12);
        ++seen;
      }
    }
  }
  CHECK(seen > 0);
}

TEST_CASE("default profile table") {
  const auto p = default_profiles();
  REQUIRE(p.num_decisions() == 5);
  CHECK(p.at(0).uplink_bytes(0) == 741.0 * 540.0 * 5.0);
  CHECK(p.at(1).onboard_ms_mean - p.at(0).onboard_ms_mean == doctest::Approx(72.4));
  const double y3 = p.at(3).uplink_bytes(4);
  CHECK(y3 >= 4 * 200.0);
  CHECK(y3 <= 4 * 400.0);
  for (int n : {0, 1, 4, 30})
    for (int y = 1; y < 5; ++y) CHECK(p.at(y).uplink_bytes(n) <= p.at(y - 1).uplink_bytes(n));
  CHECK(p.at(4).onboard_ms_mean > p.at(0).onboard_ms_mean);
  CHECK(p.broadcast_bytes_per_record == 256.0);

  const auto back = ProfileTable::from_json(p.to_json());
  CHECK(back.to_json() == p.to_json());

  auto bad = p;
  bad.decisions[3].uplink_per_object_bytes = 1e6;
  CHECK_THROWS_AS(bad.validate(), Error);
  try {
    p.at(5);
    FAIL("expected unknown-decision");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kUnknownDecision);
  }
}

TEST_CASE("coverage grid contains every footprint") {
  const auto t = generate(small_spec(Kind::kHighway));
  const auto spec = t.coverage_grid();
  for (const auto& f : t.frames) {
    for (const auto& p : f.poses) {
      const Eigen::Vector3d q = p.position();
      CHECK(spec.cell_of(q.x() - 50, q.y() - 50).has_value());
      CHECK(spec.cell_of(q.x() + 50, q.y() + 50).has_value());
    }
  }
}

}  // TEST_SUITE
