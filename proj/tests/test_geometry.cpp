#include <doctest.h>

#include <cmath>
#include <random>

#include "livemap/geometry.hpp"

using namespace livemap;
using namespace livemap::geometry;

namespace {

CameraIntrinsics intr() { return CameraIntrinsics::from_fov(741, 540, 54.04, 50.0); }

GridSpec square_grid(double x0, double y0, int n, double cell = 0.5) { return {x0, y0, cell, n, n}; }

CoverageGrid random_grid(const GridSpec& spec, std::mt19937_64& rng, double p) {
  CoverageGrid g(spec);
  std::bernoulli_distribution bit(p);
  for (int iy = 0; iy < spec.height; ++iy)
    for (int ix = 0; ix < spec.width; ++ix)
      if (bit(rng)) g.set(ix, iy);
  return g;
}

}  // namespace

TEST_SUITE("geometry") {

TEST_CASE("focal length follows from the field of view") {
  // 370.5 / tan(27.02 deg) = 726.52; 726.3 is the four-digit rounding.
  CHECK(intr().focal_px == doctest::Approx(726.3).epsilon(5e-4));
}

TEST_CASE("pixel_to_camera hand-evaluated points") {
  const auto c = pixel_to_camera(370.5, 270.0, 10.0, intr());
  CHECK(c.x() == doctest::Approx(0.0));
  CHECK(c.y() == doctest::Approx(0.0));
  CHECK(c.z() == doctest::Approx(10.0));

  const auto right = pixel_to_camera(741.0, 270.0, 10.0, intr());
  CHECK(right.x() == doctest::Approx(0.0));
  CHECK(right.y() == doctest::Approx(5.101).epsilon(5e-4));

  const auto top = pixel_to_camera(370.5, 0.0, 10.0, intr());
  CHECK(top.x() == doctest::Approx(3.717).epsilon(1e-3));
  CHECK(top.y() == doctest::Approx(0.0));

  CHECK_THROWS_AS(pixel_to_camera(1.0, 1.0, 0.0, intr()), Error);
  try {
    pixel_to_camera(1.0, 1.0, -2.0, intr());
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kInvalidDepth);
  }
}

TEST_CASE("pixel_to_camera is linear in depth") {
  const auto a = pixel_to_camera(100.0, 400.0, 3.0, intr());
  const auto b = pixel_to_camera(100.0, 400.0, 6.0, intr());
  CHECK((b - 2.0 * a).norm() < 1e-12);
}

TEST_CASE("camera_to_world identity, translation and yaw") {
  Pose id;
  const CameraPoint<double> p(1, 2, 3);
  CHECK((camera_to_world(p, id) - Eigen::Vector3d(1, 2, 3)).norm() < 1e-12);

  Pose t;
  t.cam_to_world(0, 3) = 10.0;
  CHECK((camera_to_world(p, t) - Eigen::Vector3d(11, 2, 3)).norm() < 1e-12);

  // 90 degree rotation about z: (x, y) -> (-y, x).
  Pose yaw;
  yaw.cam_to_world.block<3, 3>(0, 0) << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  const auto w = camera_to_world(CameraPoint<double>(0, 1, 0), yaw);
  CHECK((w - Eigen::Vector3d(-1, 0, 0)).norm() < 1e-12);
}

TEST_CASE("world to pixel to world round trip") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> pos(-50.0, 50.0), head(-kPi, kPi), u(0.0, 741.0), v(0.0, 540.0),
      d(0.5, 50.0);
  for (int i = 0; i < 200; ++i) {
    const Pose pose = Pose::level({pos(rng), pos(rng), 1.5}, head(rng));
    const auto world = camera_to_world(pixel_to_camera(u(rng), v(rng), d(rng), intr()), pose);
    const auto px = world_to_pixel(world, pose, intr());
    REQUIRE(px.has_value());
    const auto back = camera_to_world(pixel_to_camera(px->u, px->v, px->depth, intr()), pose);
    CHECK((back - world).norm() < 1e-6);
  }
  const Pose pose = Pose::level({0, 0, 1.5}, 0.0);
  CHECK_FALSE(world_to_pixel(Eigen::Vector3d(-5, 0, 1.5), pose, intr()).has_value());
}

TEST_CASE("robust_depth trims the extremes") {
  DepthImage flat(40, 40, 8.0);
  CHECK(robust_depth(flat, {0, 0, 40, 40}) == doctest::Approx(8.0));

  // Center square at 50, the four neighbours at 10.
  DepthImage img(40, 40, 10.0);
  const int cu = 19, cv = 19;
  for (int dv = -2; dv <= 2; ++dv)
    for (int du = -2; du <= 2; ++du) img.depths(cv + dv, cu + du) = 50.0;
  CHECK(robust_depth(img, {0, 0, 40, 40}) == doctest::Approx(10.0));

  DepthImage zero(40, 40, 0.0);
  try {
    robust_depth(zero, {0, 0, 40, 40});
    FAIL("expected no-depth");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kNoDepth);
  }
  try {
    robust_depth(flat, {0, 0, 4, 40});
    FAIL("expected degenerate-box");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kDegenerateBox);
  }
}

TEST_CASE("unoccluded footprint matches the analytic sector area") {
  const Pose pose = Pose::level({0, 0, 1.5}, 0.3);
  const GridSpec spec = square_grid(-55.0, -55.0, 220);
  const auto g = vehicle_coverage(pose, intr(), {}, spec);
  const double r = intr().max_range_m;
  const double analytic = intr().fov_deg / 360.0 * kPi * r * r;
  CHECK(std::abs(g.area_m2() - analytic) / analytic < 0.02);
  CHECK(g.area_m2() == doctest::Approx(static_cast<double>(g.count()) * 0.25));
}

TEST_CASE("low occluders cast no shadow") {
  const Pose pose = Pose::level({0, 0, 1.5}, 0.0);
  const GridSpec spec = square_grid(-1.0, -26.0, 110);
  const Occluder low{{10.0, 0.0, 0.0}, 1.0, 1.0};
  CHECK(vehicle_coverage(pose, intr(), {&low, 1}, spec) == vehicle_coverage(pose, intr(), {}, spec));
}

TEST_CASE("boresight occluder clears the cells behind it") {
  const Pose pose = Pose::level({0, 0, 1.5}, 0.0);
  const GridSpec spec = square_grid(0.0, -5.0, 20);
  const Occluder tall{{4.0, 0.0, 0.0}, 3.0, 0.6};
  const auto g = vehicle_coverage(pose, intr(), {&tall, 1}, spec);
  const auto open = vehicle_coverage(pose, intr(), {}, spec);
  const double d = 4.0;
  const double half_span = std::asin(tall.radius_m / d);
  int behind = 0;
  for (int iy = 0; iy < spec.height; ++iy) {
    for (int ix = 0; ix < spec.width; ++ix) {
      const Eigen::Vector2d c = spec.cell_center(ix, iy);
      const double r = c.norm();
      const double angle = std::abs(std::atan2(c.y(), c.x()));
      const bool in_cone = angle <= half_span;
      if (in_cone && r > d + tall.radius_m) {
        CHECK_FALSE(g.test(ix, iy));
        ++behind;
      } else if (!in_cone || r < d - tall.radius_m) {
        CHECK(g.test(ix, iy) == open.test(ix, iy));
      }
    }
  }
  CHECK(behind > 0);
}

TEST_CASE("adding occluders never grows the footprint") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> xy(-30.0, 30.0), h(0.5, 4.0), rad(0.2, 2.0);
  const Pose pose = Pose::level({0, 0, 1.5}, 0.7);
  const GridSpec spec = square_grid(-52.0, -52.0, 208);
  std::vector<Occluder> occ;
  double last = vehicle_coverage(pose, intr(), occ, spec).area_m2();
  for (int i = 0; i < 8; ++i) {
    occ.push_back({{xy(rng), xy(rng), 0.0}, h(rng), rad(rng)});
    const double now = vehicle_coverage(pose, intr(), occ, spec).area_m2();
    CHECK(now <= last);
    last = now;
  }
}

TEST_CASE("grid set algebra") {
  std::mt19937_64 rng(5);
  const GridSpec spec = square_grid(0, 0, 37);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_grid(spec, rng, 0.3);
    const auto b = random_grid(spec, rng, 0.5);
    const auto c = random_grid(spec, rng, 0.2);
    CHECK(grid_union(a, a) == a);
    CHECK(grid_intersection(a, a) == a);
    CHECK(grid_union(a, b) == grid_union(b, a));
    CHECK(grid_intersection(a, b) == grid_intersection(b, a));
    CHECK(grid_union(grid_union(a, b), c) == grid_union(a, grid_union(b, c)));
    CHECK(grid_intersection(grid_intersection(a, b), c) == grid_intersection(a, grid_intersection(b, c)));
    CHECK(grid_area(grid_union(a, b)) ==
          doctest::Approx(grid_area(a) + grid_area(b) - grid_area(grid_intersection(a, b))));
  }

  CoverageGrid left(spec), right(spec);
  for (int iy = 0; iy < 37; ++iy) {
    for (int ix = 0; ix < 10; ++ix) left.set(ix, iy);
    for (int ix = 20; ix < 30; ++ix) right.set(ix, iy);
  }
  CHECK(grid_area(grid_union(left, right)) == doctest::Approx(grid_area(left) + grid_area(right)));

  CoverageGrid other(square_grid(1, 0, 37));
  try {
    grid_union(left, other);
    FAIL("expected incompatible-grids");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kIncompatibleGrids);
  }
}

}  // TEST_SUITE
