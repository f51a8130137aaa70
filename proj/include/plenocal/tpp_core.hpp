#pragma once

#include <Eigen/Core>
#include <span>
#include <vector>

namespace plenocal {

using Point3 = Eigen::Vector3d;
using Matrix24 = Eigen::Matrix<double, 2, 4>;
using Matrix4 = Eigen::Matrix4d;

/// A light-field ray through (x, y, 0) and (u, v, f) of a two-parallel-plane frame.
struct Ray4D {
  double x = 0.0;
  double y = 0.0;
  double u = 0.0;
  double v = 0.0;
  double f = 1.0;

  bool valid() const;
  /// Point on the ray at depth z.
  Point3 at_depth(double z) const;
};

/// Parameters of a TPP reparameterization: a ray (x, y, u, v, f) maps to
/// (k_x x, k_y y, k_u u + u_0, k_v v + v_0, f_prime). `f` is the plane
/// separation of the source frame. When a TppParams describes a frame on its
/// own (a decode setting, or a physical TPP) f_prime is its plane separation.
struct TppParams {
  double k_x = 1.0;
  double k_y = 1.0;
  double k_u = 1.0;
  double k_v = 1.0;
  double u_0 = 0.0;
  double v_0 = 0.0;
  double f_prime = 1.0;
  double f = 1.0;

  bool admissible(double rel_tol = 1e-9) const;
};

/// Calibrated TPP of the scene frame: the metric ray of raw pixel (x, y) seen
/// through lens (i, j) passes (k_xy x, k_xy y, 0) and (k_uv i + u_0, k_uv j + v_0, f).
struct Intrinsics {
  double k_xy = 1.0;
  double k_uv = 1.0;
  double u_0 = 0.0;
  double v_0 = 0.0;
  double f = 1.0;
};

/// The two rows of M for one ray; rows * (P, 1) vanishes for P on the ray.
Matrix24 incidence_rows(const Ray4D& ray);

struct Triangulation {
  Point3 point = Point3::Zero();
  double rms_residual = 0.0;  ///< RMS of the algebraic residual M (P, 1).
};

/// Least-squares intersection of at least two rays sharing the same f.
Triangulation triangulate(std::span<const Ray4D> rays);

/// Same as `triangulate`, on an already stacked (2n x 4) incidence system.
Triangulation triangulate_rows(const Eigen::MatrixX4d& rows);

/// P(X, f) of the projective action on reconstructed points.
Matrix4 projective_matrix(const TppParams& params);

/// Dehomogenized P * (p, 1).
Point3 transform_point(const Matrix4& P, const Point3& p);

/// Applies the TPP map of `params` to a ray.
Ray4D transform_ray(const Ray4D& ray, const TppParams& params);

/// Ray of raw pixel (px, py) behind lens (i, j) under a decode setting.
Ray4D decode_virtual_ray(double px, double py, int lens_i, int lens_j, const TppParams& setting);

/// Builds the equal-scale transform (k_xy, k_xy, k_uv, k_uv, u_0, v_0, f_prime) with source separation f.
TppParams make_transform(double k_xy, double k_uv, double u_0, double v_0, double f_prime, double f);

/// Transform X_d taking scene-frame rays to rays decoded with `setting`.
TppParams decode_transform(const Intrinsics& scene, const TppParams& setting);

/// Inverse of decode_transform: scene-frame intrinsics from a recovered transform.
Intrinsics scene_intrinsics(const TppParams& transform, const TppParams& setting);

}  // namespace plenocal
