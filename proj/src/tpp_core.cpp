#include "plenocal/tpp_core.hpp"

#include <Eigen/Geometry>
#include <Eigen/SVD>
#include <cmath>

#include "plenocal/errors.hpp"

namespace plenocal {

namespace {

constexpr double kRankRatio = 1e-8;

bool finite(double v) { return std::isfinite(v); }

}  // namespace

bool Ray4D::valid() const {
  return finite(x) && finite(y) && finite(u) && finite(v) && finite(f) && f > 0.0;
}

Point3 Ray4D::at_depth(double z) const {
  const double t = z / f;
  return {x + (u - x) * t, y + (v - y) * t, z};
}

bool TppParams::admissible(double rel_tol) const {
  if (!(finite(k_x) && finite(k_y) && finite(k_u) && finite(k_v) && finite(u_0) && finite(v_0) &&
        finite(f_prime) && finite(f))) {
    return false;
  }
  if (k_x == 0.0 || k_y == 0.0) return false;
  const double a = k_u / k_x;
  const double b = k_v / k_y;
  return std::abs(a - b) <= rel_tol * std::max(std::abs(a), std::abs(b));
}

Matrix24 incidence_rows(const Ray4D& r) {
  Matrix24 m;
  m << r.f, 0.0, r.x - r.u, -r.f * r.x,
       0.0, r.f, r.y - r.v, -r.f * r.y;
  return m;
}

Triangulation triangulate(std::span<const Ray4D> rays) {
  if (rays.size() < 2) {
    throw Error(ErrorKind::DegenerateRays, "triangulation needs at least two rays");
  }
  Eigen::MatrixX4d rows(2 * rays.size(), 4);
  const double f0 = rays.front().f;
  for (std::size_t k = 0; k < rays.size(); ++k) {
    if (!rays[k].valid()) throw Error(ErrorKind::InvalidInput, "invalid ray");
    if (std::abs(rays[k].f - f0) > 1e-12 * f0) {
      throw Error(ErrorKind::InvalidInput, "rays must share the plane separation");
    }
    rows.middleRows<2>(2 * k) = incidence_rows(rays[k]);
  }
  return triangulate_rows(rows);
}

Triangulation triangulate_rows(const Eigen::MatrixX4d& rows) {
  const Eigen::MatrixX3d a = rows.leftCols<3>();
  const Eigen::VectorXd b = -rows.col(3);
  Eigen::JacobiSVD<Eigen::MatrixX3d> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  if (s(0) <= 0.0 || s(2) < kRankRatio * s(0)) {
    throw Error(ErrorKind::DegenerateRays, "rays are parallel or coincident");
  }
  Triangulation out;
  out.point = svd.solve(b);
  const Eigen::VectorXd res = a * out.point - b;
  out.rms_residual = std::sqrt(res.squaredNorm() / static_cast<double>(res.size()));
  return out;
}

Matrix4 projective_matrix(const TppParams& p) {
  Matrix4 m;
  m << p.f * p.k_u * p.k_x, 0.0, p.k_x * p.u_0, 0.0,
       0.0, p.f * p.k_v * p.k_x, p.k_x * p.v_0, 0.0,
       0.0, 0.0, p.f_prime * p.k_x, 0.0,
       0.0, 0.0, p.k_x - p.k_u, p.f * p.k_u;
  // Upper triangular up to the (4,3) entry: the determinant is the diagonal product.
  const double det = m(0, 0) * m(1, 1) * m(2, 2) * m(3, 3);
  if (!std::isfinite(det) || det == 0.0) {
    throw Error(ErrorKind::SingularParams, "projective matrix is singular");
  }
  return m;
}

Point3 transform_point(const Matrix4& P, const Point3& p) {
  const Eigen::Vector4d h = P * p.homogeneous();
  if (std::abs(h(3)) < 1e-14 * h.norm() || h(3) == 0.0) {
    throw Error(ErrorKind::PointAtInfinity, "transformed point lies at infinity");
  }
  return h.head<3>() / h(3);
}

Ray4D transform_ray(const Ray4D& r, const TppParams& p) {
  return {p.k_x * r.x, p.k_y * r.y, p.k_u * r.u + p.u_0, p.k_v * r.v + p.v_0, p.f_prime};
}

Ray4D decode_virtual_ray(double px, double py, int lens_i, int lens_j, const TppParams& s) {
  return {s.k_x * px, s.k_y * py, s.k_u * lens_i + s.u_0, s.k_v * lens_j + s.v_0, s.f_prime};
}

TppParams make_transform(double k_xy, double k_uv, double u_0, double v_0, double f_prime, double f) {
  return {k_xy, k_xy, k_uv, k_uv, u_0, v_0, f_prime, f};
}

TppParams decode_transform(const Intrinsics& scene, const TppParams& setting) {
  const double k_xy = setting.k_x / scene.k_xy;
  const double k_uv = setting.k_u / scene.k_uv;
  return make_transform(k_xy, k_uv, setting.u_0 - k_uv * scene.u_0, setting.v_0 - k_uv * scene.v_0,
                        setting.f_prime, scene.f);
}

Intrinsics scene_intrinsics(const TppParams& t, const TppParams& setting) {
  Intrinsics out;
  out.k_xy = setting.k_x / t.k_x;
  out.k_uv = setting.k_u / t.k_u;
  out.u_0 = (setting.u_0 - t.u_0) / t.k_u;
  out.v_0 = (setting.v_0 - t.v_0) / t.k_v;
  out.f = t.f;
  return out;
}

}  // namespace plenocal
