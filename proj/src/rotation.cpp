#include "plenocal/rotation.hpp"

#include <Eigen/Geometry>
#include <Eigen/SVD>
#include <algorithm>

namespace plenocal {

Eigen::Matrix3d rodrigues(const Eigen::Vector3d& r) { return rodrigues_to_matrix<double>(r); }

Eigen::Vector3d rodrigues_from_matrix(const Eigen::Matrix3d& R) {
  const Eigen::AngleAxisd aa(R);
  return aa.axis() * aa.angle();
}

Eigen::Matrix3d nearest_orthogonal(const Eigen::Matrix3d& m) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

double rotation_angle_between(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
  const Eigen::Matrix3d d = a.transpose() * b;
  // atan2 form stays accurate for tiny angles where acos(trace) loses digits.
  const Eigen::Vector3d w(d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1));
  return std::atan2(0.5 * w.norm(), 0.5 * (d.trace() - 1.0));
}

}  // namespace plenocal
