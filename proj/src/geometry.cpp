#include "livemap/geometry.hpp"

#include <algorithm>
#include <bit>
#include <numeric>

namespace livemap::geometry {

CameraIntrinsics CameraIntrinsics::from_fov(int width_px, int height_px, double fov_deg, double max_range_m) {
  CameraIntrinsics intr;
  intr.image_width_px = width_px;
  intr.image_height_px = height_px;
  intr.fov_deg = fov_deg;
  intr.max_range_m = max_range_m;
  intr.focal_px = (0.5 * width_px) / std::tan(0.5 * deg_to_rad(fov_deg));
  intr.validate();
  return intr;
}

void CameraIntrinsics::validate() const {
  if (image_width_px <= 0 || image_height_px <= 0) throw Error(ErrorKind::kConfig, "image size must be positive");
  if (!(fov_deg > 0.0 && fov_deg < 180.0)) throw Error(ErrorKind::kConfig, "fov_deg must lie in (0, 180)");
  if (!(focal_px > 0.0)) throw Error(ErrorKind::kConfig, "focal_px must be positive");
  if (!(max_range_m > 0.0)) throw Error(ErrorKind::kConfig, "max_range_m must be positive");
  const double expected = (0.5 * image_width_px) / std::tan(0.5 * deg_to_rad(fov_deg));
  if (std::abs(focal_px - expected) > 1e-6 * expected)
    throw Error(ErrorKind::kConfig, "focal_px inconsistent with fov_deg and image width");
}

Pose Pose::level(const Eigen::Vector3d& position, double heading_rad) {
  const Eigen::Vector3d forward(std::cos(heading_rad), std::sin(heading_rad), 0.0);
  const Eigen::Vector3d right(std::sin(heading_rad), -std::cos(heading_rad), 0.0);
  const Eigen::Vector3d up(0.0, 0.0, 1.0);
  Pose pose;
  pose.cam_to_world.block<3, 1>(0, 0) = up;
  pose.cam_to_world.block<3, 1>(0, 1) = right;
  pose.cam_to_world.block<3, 1>(0, 2) = forward;
  pose.cam_to_world.block<3, 1>(0, 3) = position;
  return pose;
}

void Pose::validate() const {
  if (!cam_to_world.allFinite()) throw Error(ErrorKind::kConfig, "pose has non-finite entries");
  const Eigen::RowVector4d last = cam_to_world.row(3);
  if (last != Eigen::RowVector4d(0, 0, 0, 1))
    throw Error(ErrorKind::kConfig, "pose last row must be [0 0 0 1]");
  const Eigen::Matrix3d r = cam_to_world.topLeftCorner<3, 3>();
  if ((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-6)
    throw Error(ErrorKind::kConfig, "pose rotation is not orthonormal");
}

double Pose::heading_rad() const {
  const Eigen::Vector3d forward = cam_to_world.block<3, 1>(0, 2);
  return std::atan2(forward.y(), forward.x());
}

Eigen::Matrix4d Pose::world_to_cam() const {
  // Rigid inverse: [R^T, -R^T t].
  Eigen::Matrix4d inv = Eigen::Matrix4d::Identity();
  const Eigen::Matrix3d rt = cam_to_world.topLeftCorner<3, 3>().transpose();
  inv.topLeftCorner<3, 3>() = rt;
  inv.block<3, 1>(0, 3) = -rt * cam_to_world.block<3, 1>(0, 3);
  return inv;
}

std::optional<PixelDepth> camera_to_pixel(const CameraPoint<double>& p, const CameraIntrinsics& intr) {
  if (!(p.z() > 0.0)) return std::nullopt;
  PixelDepth px;
  px.depth = p.z();
  px.u = p.y() * intr.focal_px / p.z() + 0.5 * intr.image_width_px;
  px.v = -p.x() * intr.focal_px / p.z() + 0.5 * intr.image_height_px;
  return px;
}

std::optional<PixelDepth> world_to_pixel(const WorldPoint<double>& w, const Pose& pose,
                                         const CameraIntrinsics& intr) {
  return camera_to_pixel(world_to_camera<double>(w, pose), intr);
}

namespace {

// Mean of the non-zero depths in the 5x5 square centered at (cu, cv).
std::optional<double> square_mean(const DepthImage& img, int cu, int cv) {
  double sum = 0.0;
  int n = 0;
  for (int v = cv - 2; v <= cv + 2; ++v) {
    for (int u = cu - 2; u <= cu + 2; ++u) {
      const double d = img.depths(v, u);
      if (d > 0.0) {
        sum += d;
        ++n;
      }
    }
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

}  // namespace

double robust_depth(const DepthImage& depth, const PixelBox& box, int samples) {
  if ((depth.depths.array() < 0.0).any()) throw Error(ErrorKind::kInvalidDepth, "negative depth sample");
  const int u0 = std::max(box.u_min, 0);
  const int v0 = std::max(box.v_min, 0);
  const int u1 = std::min(box.u_max, depth.width);
  const int v1 = std::min(box.v_max, depth.height);
  if (u1 - u0 < 5 || v1 - v0 < 5) throw Error(ErrorKind::kDegenerateBox, "box smaller than 5x5 after clamping");

  const int cu = (u0 + u1 - 1) / 2;
  const int cv = (v0 + v1 - 1) / 2;
  // Center, the four +-5 px neighbours, then the diagonals.
  static constexpr int kOffsets[][2] = {{0, 0},  {5, 0},  {-5, 0}, {0, 5},  {0, -5},
                                        {5, 5},  {-5, 5}, {5, -5}, {-5, -5}};
  const int k = std::clamp(samples, 1, static_cast<int>(std::size(kOffsets)));

  std::vector<double> means;
  means.reserve(k);
  for (int i = 0; i < k; ++i) {
    // Keep every square inside the box.
    const int su = std::clamp(cu + kOffsets[i][0], u0 + 2, u1 - 3);
    const int sv = std::clamp(cv + kOffsets[i][1], v0 + 2, v1 - 3);
    if (auto m = square_mean(depth, su, sv)) means.push_back(*m);
  }
  if (means.empty()) throw Error(ErrorKind::kNoDepth, "every sampled square is empty");

  if (means.size() >= 3) {
    std::sort(means.begin(), means.end());
    means.erase(means.begin());
    means.pop_back();
  }
  return std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(means.size());
}

std::optional<std::pair<int, int>> GridSpec::cell_of(double x, double y) const {
  const double fx = std::floor((x - x0) / cell_m);
  const double fy = std::floor((y - y0) / cell_m);
  if (fx < 0 || fy < 0 || fx >= width || fy >= height) return std::nullopt;
  return std::pair<int, int>{static_cast<int>(fx), static_cast<int>(fy)};
}

CoverageGrid::CoverageGrid(const GridSpec& spec) : spec_(spec) {
  if (!(spec.cell_m > 0.0) || spec.width < 0 || spec.height < 0)
    throw Error(ErrorKind::kConfig, "grid spec needs cell_m > 0 and non-negative size");
  const std::size_t cells = static_cast<std::size_t>(spec.width) * static_cast<std::size_t>(spec.height);
  words_.assign((cells + 63) / 64, 0);
}

bool CoverageGrid::test(int ix, int iy) const {
  const std::size_t idx = static_cast<std::size_t>(iy) * spec_.width + ix;
  return (words_[idx / 64] >> (idx % 64)) & 1u;
}

void CoverageGrid::set(int ix, int iy, bool value) {
  const std::size_t idx = static_cast<std::size_t>(iy) * spec_.width + ix;
  const std::uint64_t bit = std::uint64_t{1} << (idx % 64);
  if (value)
    words_[idx / 64] |= bit;
  else
    words_[idx / 64] &= ~bit;
}

std::size_t CoverageGrid::count() const {
  std::size_t n = 0;
  for (auto w : words_) n += static_cast<std::size_t>(std::popcount(w));
  return n;
}

double CoverageGrid::area_m2() const { return static_cast<double>(count()) * spec_.cell_m * spec_.cell_m; }

namespace {

template <typename Op>
CoverageGrid combine(const CoverageGrid& a, const CoverageGrid& b, Op op) {
  if (!(a.spec() == b.spec())) throw Error(ErrorKind::kIncompatibleGrids, "grid specs differ");
  CoverageGrid out(a.spec());
  auto wa = a.words();
  auto wb = b.words();
  auto wo = out.words();
  for (std::size_t i = 0; i < wo.size(); ++i) wo[i] = op(wa[i], wb[i]);
  return out;
}

double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a < 0) a += 2.0 * kPi;
  return a - kPi;
}

struct Shadow {
  double distance;
  double bearing;
  double half_span;
};

struct Sector {
  Eigen::Vector2d apex;
  double heading;
  double half_fov;
  double range;
  std::vector<Shadow> shadows;
  std::vector<std::size_t> shadow_owner;
};

Sector make_sector(const Pose& pose, const CameraIntrinsics& intr, std::span<const Occluder> occluders) {
  Sector s;
  const Eigen::Vector3d pos = pose.position();
  s.apex = pos.head<2>();
  s.heading = pose.heading_rad();
  s.half_fov = 0.5 * deg_to_rad(intr.fov_deg);
  s.range = intr.max_range_m;
  for (std::size_t i = 0; i < occluders.size(); ++i) {
    const auto& occ = occluders[i];
    const Eigen::Vector3d top = occ.base + Eigen::Vector3d(0, 0, occ.height_m);
    if (world_to_camera<double>(top, pose).x() < 0.0) continue;
    const Eigen::Vector2d rel = occ.base.head<2>() - s.apex;
    const double d = rel.norm();
    // An occluder enclosing the apex has no well-defined shadow.
    if (d <= occ.radius_m) continue;
    s.shadows.push_back({d, std::atan2(rel.y(), rel.x()), std::asin(occ.radius_m / d)});
    s.shadow_owner.push_back(i);
  }
  return s;
}

bool sector_covers(const Sector& s, double x, double y, std::optional<std::size_t> skip) {
  const Eigen::Vector2d rel = Eigen::Vector2d(x, y) - s.apex;
  const double r = rel.norm();
  if (r > s.range) return false;
  const double bearing = std::atan2(rel.y(), rel.x());
  if (r > 0.0 && std::abs(wrap_angle(bearing - s.heading)) > s.half_fov) return false;
  for (std::size_t k = 0; k < s.shadows.size(); ++k) {
    if (skip && s.shadow_owner[k] == *skip) continue;
    const auto& sh = s.shadows[k];
    if (r > sh.distance && std::abs(wrap_angle(bearing - sh.bearing)) <= sh.half_span) return false;
  }
  return true;
}

}  // namespace

CoverageGrid grid_union(const CoverageGrid& a, const CoverageGrid& b) {
  return combine(a, b, [](std::uint64_t x, std::uint64_t y) { return x | y; });
}

CoverageGrid grid_intersection(const CoverageGrid& a, const CoverageGrid& b) {
  return combine(a, b, [](std::uint64_t x, std::uint64_t y) { return x & y; });
}

double grid_area(const CoverageGrid& g) { return g.area_m2(); }

bool point_covered(const Pose& pose, const CameraIntrinsics& intr, std::span<const Occluder> occluders,
                   double x, double y, std::optional<std::size_t> skip) {
  return sector_covers(make_sector(pose, intr, occluders), x, y, skip);
}

CoverageGrid vehicle_coverage(const Pose& pose, const CameraIntrinsics& intr,
                              std::span<const Occluder> occluders, const GridSpec& spec) {
  CoverageGrid grid(spec);
  const Sector s = make_sector(pose, intr, occluders);
  // Only visit cells inside the bounding box of the range disc.
  const int ix0 = std::max(0, static_cast<int>(std::floor((s.apex.x() - s.range - spec.x0) / spec.cell_m)));
  const int iy0 = std::max(0, static_cast<int>(std::floor((s.apex.y() - s.range - spec.y0) / spec.cell_m)));
  const int ix1 = std::min(spec.width - 1, static_cast<int>(std::floor((s.apex.x() + s.range - spec.x0) / spec.cell_m)));
  const int iy1 = std::min(spec.height - 1, static_cast<int>(std::floor((s.apex.y() + s.range - spec.y0) / spec.cell_m)));
  for (int iy = iy0; iy <= iy1; ++iy) {
    for (int ix = ix0; ix <= ix1; ++ix) {
      const Eigen::Vector2d c = spec.cell_center(ix, iy);
      if (sector_covers(s, c.x(), c.y(), std::nullopt)) grid.set(ix, iy);
    }
  }
  return grid;
}

}  // namespace livemap::geometry
