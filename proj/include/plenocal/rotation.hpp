#pragma once

#include <Eigen/Core>
#include <cmath>

namespace plenocal {

/// Rodrigues expansion, templated so autodiff scalars flow through it.
/// Below 1e-8 rad the second-order series keeps first derivatives exact at 0.
template <typename T>
Eigen::Matrix<T, 3, 3> rodrigues_to_matrix(const Eigen::Matrix<T, 3, 1>& r) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  Eigen::Matrix<T, 3, 3> k;
  k << T(0), -r(2), r(1),
       r(2), T(0), -r(0),
       -r(1), r(0), T(0);
  const T theta2 = r.squaredNorm();
  Eigen::Matrix<T, 3, 3> out = Eigen::Matrix<T, 3, 3>::Identity();
  if (theta2 < T(1e-16)) {
    out += k + T(0.5) * k * k;
    return out;
  }
  const T theta = sqrt(theta2);
  const T a = sin(theta) / theta;
  const T b = (T(1) - cos(theta)) / theta2;
  out += a * k + b * k * k;
  return out;
}

Eigen::Matrix3d rodrigues(const Eigen::Vector3d& r);

/// Axis-angle vector of a rotation matrix (angle in [0, pi]).
Eigen::Vector3d rodrigues_from_matrix(const Eigen::Matrix3d& R);

/// Closest rotation in Frobenius norm (polar factor); may return det -1 if
/// the input is a reflection, callers check.
Eigen::Matrix3d nearest_orthogonal(const Eigen::Matrix3d& m);

/// Geodesic angle between two rotations, radians.
double rotation_angle_between(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b);

}  // namespace plenocal
