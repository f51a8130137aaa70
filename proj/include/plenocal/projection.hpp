#pragma once

#include <Eigen/Core>
#include <cmath>
#include <span>
#include <vector>

#include "plenocal/rotation.hpp"
#include "plenocal/tpp_core.hpp"

namespace plenocal {

/// Radial distortion of both TPP planes. Coefficients s1, s2 act on the x-y
/// plane about (x_c, y_c); t1, t2 on the u-v plane about (u_c, v_c). Centers
/// are in scene-frame plane coordinates.
struct DistortionParams {
  double s1 = 0.0;
  double s2 = 0.0;
  double t1 = 0.0;
  double t2 = 0.0;
  double x_c = 0.0;
  double y_c = 0.0;
  double u_c = 0.0;
  double v_c = 0.0;

  bool is_zero() const { return s1 == 0.0 && s2 == 0.0 && t1 == 0.0 && t2 == 0.0; }
};

/// Board-to-TPP rigid motion, X_c = R(rotation) X_w + translation.
struct Pose {
  Eigen::Vector3d rotation = Eigen::Vector3d::Zero();  ///< Rodrigues vector, radians
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Matrix3d matrix() const { return rodrigues(rotation); }
  Point3 apply(const Point3& p) const { return matrix() * p + translation; }
};

struct Observation {
  int pose_id = 0;
  int point_id = 0;
  int lens_i = 0;
  int lens_j = 0;
  double px = 0.0;
  double py = 0.0;
};

/// Distortion centers used when none are configured: the image center mapped
/// onto the x-y plane and the u-v position of lens (0, 0).
DistortionParams default_distortion_centers(const Intrinsics& intr, double image_width,
                                            double image_height);

Eigen::Vector2d apply_distortion(const Eigen::Vector2d& point, const Eigen::Vector2d& center,
                                 const Eigen::Vector2d& coeffs);

/// Newton inversion of apply_distortion along the radius.
Eigen::Vector2d undistort(const Eigen::Vector2d& distorted, const Eigen::Vector2d& center,
                          const Eigen::Vector2d& coeffs);

/// Parameter block layout shared by the projection kernel and the optimizer.
namespace block {
constexpr int kIntrinsics = 5;  // k_xy, k_uv, u_0, v_0, f
constexpr int kDistortion = 8;  // s1, s2, t1, t2, x_c, y_c, u_c, v_c
constexpr int kPose = 6;        // rotation(3), translation(3)
}  // namespace block

/// Forward projection on raw parameter blocks. Returns false when the point
/// sits on the u-v plane (projection undefined).
template <typename T>
bool project_blocks(const T* intr, const T* dist, const T* pose, const Point3& board_point,
                    int lens_i, int lens_j, T* pixel) {
  const Eigen::Matrix<T, 3, 1> r(pose[0], pose[1], pose[2]);
  const Eigen::Matrix<T, 3, 1> t(pose[3], pose[4], pose[5]);
  const Eigen::Matrix<T, 3, 1> xc = rodrigues_to_matrix<T>(r) * board_point.cast<T>() + t;

  const T& k_xy = intr[0];
  const T& k_uv = intr[1];
  const T& f = intr[4];

  // Lens position on the u-v plane, then its radial distortion.
  const T u = k_uv * T(lens_i) + intr[2];
  const T v = k_uv * T(lens_j) + intr[3];
  const T du = u - dist[6];
  const T dv = v - dist[7];
  const T ruv2 = du * du + dv * dv;
  const T guv = T(1) + dist[2] * ruv2 + dist[3] * ruv2 * ruv2;
  const T ud = du * guv + dist[6];
  const T vd = dv * guv + dist[7];

  using std::abs;
  const T denom = xc(2) - f;
  if (abs(denom) <= T(1e-12) * (abs(xc(2)) + abs(f))) return false;

  // Line through X_c and the distorted lens point, cut with the x-y plane.
  const T x = (ud * xc(2) - f * xc(0)) / denom;
  const T y = (vd * xc(2) - f * xc(1)) / denom;

  const T dx = x - dist[4];
  const T dy = y - dist[5];
  const T rxy2 = dx * dx + dy * dy;
  const T gxy = T(1) + dist[0] * rxy2 + dist[1] * rxy2 * rxy2;
  pixel[0] = (dx * gxy + dist[4]) / k_xy;
  pixel[1] = (dy * gxy + dist[5]) / k_xy;
  return true;
}

/// Pixel of board point `point_w` seen through lens (i, j).
Eigen::Vector2d project_point(const Point3& point_w, const Pose& pose, const Intrinsics& intr,
                              const DistortionParams& dist, int lens_i, int lens_j);

/// Same, with intrinsics given as the recovered transform X_d relative to a
/// decode setting.
Eigen::Vector2d project_point(const Point3& point_w, const Pose& pose, const TppParams& transform,
                              const TppParams& setting, const DistortionParams& dist, int lens_i,
                              int lens_j);

/// Indices of `obs` in (pose_id, point_id, lens_i, lens_j) lexicographic order.
std::vector<std::size_t> canonical_order(std::span<const Observation> obs);

struct ResidualSet {
  std::vector<std::size_t> order;        ///< index into the input observations
  std::vector<Eigen::Vector2d> values;   ///< observed - predicted, in `order`
  double rms = 0.0;                      ///< over all 2N components
};

ResidualSet residuals(std::span<const Observation> obs, std::span<const Point3> board,
                      std::span<const Pose> poses, const Intrinsics& intr,
                      const DistortionParams& dist);

ResidualSet residuals(std::span<const Observation> obs, std::span<const Point3> board,
                      std::span<const Pose> poses, const TppParams& transform,
                      const TppParams& setting, const DistortionParams& dist);

/// Single-threaded reference of `residuals`.
ResidualSet residuals_serial(std::span<const Observation> obs, std::span<const Point3> board,
                             std::span<const Pose> poses, const Intrinsics& intr,
                             const DistortionParams& dist);

}  // namespace plenocal
