#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "livemap/error.hpp"

namespace livemap::geometry {

template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;

// Camera frame: x points up, y points right (increasing pixel column), z is
// depth along the optical axis.
template <typename Scalar = double>
using CameraPoint = Vec3<Scalar>;

template <typename Scalar = double>
using WorldPoint = Vec3<Scalar>;

constexpr double kPi = 3.14159265358979323846;

inline double deg_to_rad(double deg) { return deg * kPi / 180.0; }

struct CameraIntrinsics {
  int image_width_px = 741;
  int image_height_px = 540;
  double fov_deg = 54.04;
  double focal_px = 0.0;
  double max_range_m = 50.0;

  // Focal length follows from the horizontal field of view and image width.
  static CameraIntrinsics from_fov(int width_px, int height_px, double fov_deg, double max_range_m);

  void validate() const;
};

struct Pose {
  Eigen::Matrix4d cam_to_world = Eigen::Matrix4d::Identity();

  // Level camera at `position` looking along `heading_rad` (counter-clockwise
  // from world +x). World z is up.
  static Pose level(const Eigen::Vector3d& position, double heading_rad);

  void validate() const;

  Eigen::Vector3d position() const { return cam_to_world.block<3, 1>(0, 3); }
  // Heading of the optical axis projected on the ground plane.
  double heading_rad() const;
  Eigen::Matrix4d world_to_cam() const;
};

struct DepthImage {
  int width = 0;
  int height = 0;
  Eigen::MatrixXd depths;  // height x width, meters, 0 = no return

  DepthImage() = default;
  DepthImage(int w, int h, double fill = 0.0)
      : width(w), height(h), depths(Eigen::MatrixXd::Constant(h, w, fill)) {}
};

// Half-open pixel rectangle [u_min, u_max) x [v_min, v_max).
struct PixelBox {
  int u_min = 0;
  int v_min = 0;
  int u_max = 0;
  int v_max = 0;
};

struct PixelDepth {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
};

template <typename Scalar>
CameraPoint<Scalar> pixel_to_camera(Scalar u0, Scalar v0, Scalar depth, const CameraIntrinsics& intr) {
  if (!(depth > Scalar(0))) throw Error(ErrorKind::kInvalidDepth, "depth must be positive");
  const Scalar f = static_cast<Scalar>(intr.focal_px);
  const Scalar half_w = Scalar(0.5) * static_cast<Scalar>(intr.image_width_px);
  const Scalar half_h = Scalar(0.5) * static_cast<Scalar>(intr.image_height_px);
  return CameraPoint<Scalar>(-(depth * (v0 - half_h)) / f, (depth * (u0 - half_w)) / f, depth);
}

template <typename Scalar>
WorldPoint<Scalar> camera_to_world(const CameraPoint<Scalar>& p, const Pose& pose) {
  const Eigen::Matrix<Scalar, 4, 4> m = pose.cam_to_world.cast<Scalar>();
  return (m * p.homogeneous()).template head<3>();
}

template <typename Scalar>
CameraPoint<Scalar> world_to_camera(const WorldPoint<Scalar>& w, const Pose& pose) {
  const Eigen::Matrix<Scalar, 4, 4> m = pose.world_to_cam().cast<Scalar>();
  return (m * w.homogeneous()).template head<3>();
}

// Inverse of pixel_to_camera; nullopt when the point is behind the camera.
std::optional<PixelDepth> camera_to_pixel(const CameraPoint<double>& p, const CameraIntrinsics& intr);

std::optional<PixelDepth> world_to_pixel(const WorldPoint<double>& w, const Pose& pose,
                                         const CameraIntrinsics& intr);

// Trimmed mean of `samples` 5x5 square averages around the box center.
double robust_depth(const DepthImage& depth, const PixelBox& box, int samples = 5);

struct Occluder {
  WorldPoint<double> base = WorldPoint<double>::Zero();  // ground contact point
  double height_m = 0.0;
  double radius_m = 0.0;
};

struct GridSpec {
  double x0 = 0.0;
  double y0 = 0.0;
  double cell_m = 0.5;
  int width = 0;
  int height = 0;

  bool operator==(const GridSpec&) const = default;
  Eigen::Vector2d cell_center(int ix, int iy) const {
    return {x0 + (ix + 0.5) * cell_m, y0 + (iy + 0.5) * cell_m};
  }
  // Cell index containing a world point, or nullopt outside the grid.
  std::optional<std::pair<int, int>> cell_of(double x, double y) const;
};

class CoverageGrid {
 public:
  CoverageGrid() = default;
  explicit CoverageGrid(const GridSpec& spec);

  const GridSpec& spec() const { return spec_; }
  bool test(int ix, int iy) const;
  void set(int ix, int iy, bool value = true);
  std::size_t count() const;
  double area_m2() const;
  bool empty() const { return count() == 0; }

  std::span<const std::uint64_t> words() const { return words_; }
  std::span<std::uint64_t> words() { return words_; }

  bool operator==(const CoverageGrid&) const = default;

 private:
  GridSpec spec_;
  std::vector<std::uint64_t> words_;
};

CoverageGrid grid_union(const CoverageGrid& a, const CoverageGrid& b);
CoverageGrid grid_intersection(const CoverageGrid& a, const CoverageGrid& b);
double grid_area(const CoverageGrid& g);

// Whether a ground point lies inside the sensing sector and outside every
// occluder shadow. Occluders whose top sits below the camera (x < 0 in camera
// coordinates) cast no shadow. `skip` excludes one occluder (the object itself).
bool point_covered(const Pose& pose, const CameraIntrinsics& intr, std::span<const Occluder> occluders,
                   double x, double y, std::optional<std::size_t> skip = std::nullopt);

CoverageGrid vehicle_coverage(const Pose& pose, const CameraIntrinsics& intr,
                              std::span<const Occluder> occluders, const GridSpec& spec);

}  // namespace livemap::geometry
