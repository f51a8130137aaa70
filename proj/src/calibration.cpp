#include "plenocal/calibration.hpp"

#include <Eigen/LU>
#include <Eigen/Geometry>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "plenocal/errors.hpp"
#include "plenocal/rotation.hpp"

namespace plenocal {

namespace {

constexpr double kDegenerateRatio = 1e-8;
// Widest angle between board normals below which the poses count as parallel.
// Measured in the equalized coordinates of solve_q, where noise at 0.8 px
// spreads 0.6 degree tilts to under 10 degrees and the pose envelope gives
// 50 or more.
constexpr double kParallelSpread = 20.0 * 3.14159265358979323846 / 180.0;

/// Similarity normalization to zero mean and the given RMS distance.
template <int Dim>
Eigen::Matrix<double, Dim + 1, Dim + 1> normalizer(
    const std::vector<Eigen::Matrix<double, Dim, 1>>& pts, double target_rms) {
  using Vec = Eigen::Matrix<double, Dim, 1>;
  Vec c = Vec::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  double ss = 0.0;
  for (const auto& p : pts) ss += (p - c).squaredNorm();
  const double rms = std::sqrt(ss / static_cast<double>(pts.size()));
  const double s = rms > 0.0 ? target_rms / rms : 1.0;
  Eigen::Matrix<double, Dim + 1, Dim + 1> t = Eigen::Matrix<double, Dim + 1, Dim + 1>::Identity();
  t.template topLeftCorner<Dim, Dim>() *= s;
  t.template topRightCorner<Dim, 1>() = -s * c;
  return t;
}

/// Coefficients of a^T G b over (g11, g13, g23, g33) for a conic with
/// g12 = 0 and g22 = g11.
Eigen::Matrix<double, 1, 4> g_row(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  Eigen::Matrix<double, 1, 4> r;
  r << a(0) * b(0) + a(1) * b(1), a(0) * b(2) + a(2) * b(0), a(1) * b(2) + a(2) * b(1),
      a(2) * b(2);
  return r;
}

}  // namespace

HomographyH estimate_homography(std::span<const PointRays> points) {
  std::vector<const PointRays*> usable;
  for (const auto& p : points) {
    if (p.rays.size() >= 2) usable.push_back(&p);
  }
  if (usable.size() < 6) {
    throw Error(ErrorKind::InsufficientData,
                "homography needs 6 board points with 2+ rays, got " + std::to_string(usable.size()));
  }

  std::vector<Eigen::Vector2d> board;
  for (const auto* p : usable) board.push_back(p->board);
  {
    Eigen::MatrixX2d centered(board.size(), 2);
    Eigen::Vector2d c = Eigen::Vector2d::Zero();
    for (const auto& b : board) c += b;
    c /= static_cast<double>(board.size());
    for (std::size_t k = 0; k < board.size(); ++k) centered.row(k) = (board[k] - c).transpose();
    Eigen::JacobiSVD<Eigen::MatrixX2d> svd(centered);
    const auto s = svd.singularValues();
    if (s(0) <= 0.0 || s(1) < kDegenerateRatio * s(0)) {
      throw Error(ErrorKind::DegenerateBoard, "board points are collinear");
    }
  }
  const Eigen::Matrix3d tb = normalizer<2>(board, std::sqrt(2.0));

  std::vector<Eigen::Vector3d> approx;
  for (const auto* p : usable) {
    try {
      approx.push_back(triangulate(p->rays).point);
    } catch (const Error&) {
    }
  }
  Eigen::Matrix4d n = Eigen::Matrix4d::Identity();
  if (approx.size() >= 2) n = normalizer<3>(approx, std::sqrt(3.0));
  const Eigen::Matrix4d n_inv = n.inverse();

  std::size_t n_rows = 0;
  for (const auto* p : usable) n_rows += 2 * p->rays.size();
  Eigen::MatrixXd a(n_rows, 12);
  std::size_t row = 0;
  for (const auto* p : usable) {
    const Eigen::Vector3d bn = tb * p->board.homogeneous();
    for (const auto& ray : p->rays) {
      const Matrix24 m = incidence_rows(ray) * n_inv;
      for (int k = 0; k < 2; ++k) {
        const Eigen::RowVector4d mk = m.row(k) / m.row(k).norm();
        for (int r = 0; r < 4; ++r) {
          a.block<1, 3>(row, 3 * r) = mk(r) * bn.transpose();
        }
        ++row;
      }
    }
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinV);
  const Eigen::VectorXd hv = svd.matrixV().col(11);
  Eigen::Matrix<double, 4, 3> hn;
  for (int r = 0; r < 4; ++r) hn.row(r) = hv.segment<3>(3 * r).transpose();

  HomographyH out;
  out.h = n_inv * hn * tb;
  out.h /= out.h.norm();
  if (out.h(3, 2) < 0.0) out.h = -out.h;
  out.algebraic_rms = svd.singularValues()(11) / std::sqrt(static_cast<double>(n_rows));
  return out;
}

QSolution q_from_transform(const TppParams& t) {
  const Matrix4 p_inv = projective_matrix(t).inverse();
  const Matrix4 q = p_inv.transpose() * p_inv;
  QSolution s;
  s.q11 = q(0, 0);
  s.q13 = q(0, 2);
  s.q23 = q(1, 2);
  s.q33 = q(2, 2);
  s.q34 = q(2, 3);
  s.q44 = q(3, 3);
  s.lambda = 1.0;
  return s;
}

QSolution solve_q(std::span<const HomographyH> homographies, double f_prime) {
  if (homographies.size() < 3) {
    throw Error(ErrorKind::InsufficientPoses,
                "at least 3 poses are required, got " + std::to_string(homographies.size()));
  }
  std::vector<Eigen::Matrix<double, 4, 3>> hs;
  for (const auto& h : homographies) hs.push_back(h.h / h.h.norm());

  // h1 and h2 live in P (R^3 x 0), where rows 3 and 4 are proportional:
  // (rho - 1) h_3i + f' h_4i = 0 with rho = k_uv / k_xy.
  double num = 0.0, den = 0.0, lateral = 0.0;
  for (const auto& h : hs) {
    for (int i = 0; i < 2; ++i) {
      num += f_prime * h(3, i) * h(2, i);
      den += h(2, i) * h(2, i);
      lateral += h(0, i) * h(0, i) + h(1, i) * h(1, i);
    }
  }
  if (den <= 1e-20 * lateral) {
    throw Error(ErrorKind::IllConditioned, "no pose tilts the board out of the image plane");
  }
  const double rho = 1.0 - num / den;

  // Orthogonality on that subspace, in coordinates x = (h_1, h_2, h_3 / f'):
  // a Zhang-type conic with unit aspect and zero skew, (g11, g13, g23, g33).
  double s12 = 0.0, s3 = 0.0;
  for (const auto& h : hs) {
    s12 += h.block<2, 2>(0, 0).squaredNorm();
    s3 += h.block<1, 2>(2, 0).squaredNorm() / (f_prime * f_prime);
  }
  const double d12 = s12 > 0.0 ? 1.0 / std::sqrt(s12) : 1.0;
  const double d3 = s3 > 0.0 ? 1.0 / std::sqrt(s3) : 1.0;
  const Eigen::Vector3d d(d12, d12, d3);
  auto coords = [&](const Eigen::Matrix<double, 4, 3>& h, int c) {
    return Eigen::Vector3d(h(0, c), h(1, c), h(2, c) / f_prime);
  };
  double spread = 0.0;
  {
    std::vector<Eigen::Vector3d> normals;
    for (const auto& h : hs) {
      normals.push_back(d.cwiseProduct(coords(h, 0)).cross(d.cwiseProduct(coords(h, 1))).normalized());
    }
    for (std::size_t a = 0; a < normals.size(); ++a) {
      for (std::size_t b = a + 1; b < normals.size(); ++b) {
        const double c = std::min(1.0, std::abs(normals[a].dot(normals[b])));
        spread = std::max(spread, std::acos(c));
      }
    }
  }
  if (!(spread >= kParallelSpread)) {
    std::ostringstream msg;
    msg << "board poses are nearly parallel (normal spread " << spread * 180.0 / 3.14159265358979323846
        << " deg)";
    throw Error(ErrorKind::IllConditioned, msg.str());
  }

  Eigen::MatrixXd v(2 * hs.size(), 4);
  for (std::size_t k = 0; k < hs.size(); ++k) {
    const Eigen::Vector3d a = d.cwiseProduct(coords(hs[k], 0));
    const Eigen::Vector3d b = d.cwiseProduct(coords(hs[k], 1));
    v.row(2 * k) = g_row(a, b);
    v.row(2 * k + 1) = g_row(a, a) - g_row(b, b);
  }
  Eigen::Vector4d col_scale;
  for (int c = 0; c < 4; ++c) {
    const double nrm = v.col(c).norm();
    col_scale(c) = nrm > 0.0 ? 1.0 / nrm : 1.0;
  }
  v = v * col_scale.asDiagonal();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(v, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();

  QSolution out;
  out.scale_ratio = rho;
  out.singular_ratio = sv(2) > 0.0 ? sv(3) / sv(2) : 1.0;
  out.normal_spread = spread;
  Eigen::Vector4d g = svd.matrixV().col(3).cwiseProduct(col_scale);
  g(0) *= d12 * d12;
  g(1) *= d12 * d3;
  g(2) *= d12 * d3;
  g(3) *= d3 * d3;
  if (g(0) < 0.0) g = -g;
  g /= g.norm();

  const double u_0 = -g(1) / g(0);
  const double v_0 = -g(2) / g(0);
  const double focal2 = g(3) / g(0) - u_0 * u_0 - v_0 * v_0;
  if (!(focal2 > 0.0)) {
    throw Error(ErrorKind::NegativeDiscriminant, "recovered plane conic is not positive definite");
  }
  const double focal = std::sqrt(focal2);  // f * k_uv

  // P = [k_xy W K | f k_uv e4]; the fourth component of h3 outside W fixes k_xy.
  Eigen::Matrix3d k_inv;
  k_inv << 1.0 / focal, 0.0, -u_0 / focal, 0.0, 1.0 / focal, -v_0 / focal, 0.0, 0.0, 1.0;
  double kn = 0.0, kd = 0.0;
  for (const auto& h : hs) {
    const double n = 0.5 * ((k_inv * coords(h, 0)).norm() + (k_inv * coords(h, 1)).norm());
    const double gamma = h(3, 2) - (1.0 - rho) * h(2, 2) / f_prime;
    kn += n * std::abs(gamma);
    kd += gamma * gamma;
  }
  if (!(kd > 0.0)) {
    throw Error(ErrorKind::NegativeDiscriminant, "homographies carry no depth scale");
  }
  const double k_xy = focal * kn / kd;
  const double k_uv = rho * k_xy;
  if (!(k_uv > 0.0)) {
    throw Error(ErrorKind::NegativeDiscriminant, "recovered u-v scale is not positive");
  }
  const double f = focal / k_uv;

  // Complete Q from the recovered transform, in the scale of the solved conic.
  const QSolution full = q_from_transform(make_transform(k_xy, k_uv, u_0, v_0, f_prime, f));
  const double lambda = g(0) / full.q11;
  out.q11 = lambda * full.q11;
  out.q13 = lambda * full.q13;
  out.q23 = lambda * full.q23;
  out.q33 = lambda * full.q33;
  out.q34 = lambda * full.q34;
  out.q44 = lambda * full.q44;
  const double fp2 = f_prime * f_prime;
  out.lambda = fp2 / out.q11 *
               ((out.q33 * out.q44 - out.q34 * out.q34) -
                out.q44 / out.q11 * (out.q13 * out.q13 + out.q23 * out.q23));
  return out;
}

TppParams closed_form_intrinsics(const QSolution& q, double f_prime) {
  if (!(q.q11 > 0.0) || !(q.q44 / q.q11 > 0.0)) {
    throw Error(ErrorKind::NegativeDiscriminant, "q44 / q11 is not positive");
  }
  const double k_xy = std::sqrt(q.q44 / q.q11);
  const double k_uv = k_xy * (1.0 + f_prime * q.q34 / q.q44);
  const double u_0 = -f_prime * q.q13 / q.q11;
  const double v_0 = -f_prime * q.q23 / q.q11;
  const double disc = q.lambda / q.q44;
  if (!(q.lambda > 0.0) || !(disc > 0.0)) {
    throw Error(ErrorKind::NegativeDiscriminant, "lambda / q44 is not positive");
  }
  if (!(k_uv > 0.0)) {
    throw Error(ErrorKind::NegativeDiscriminant, "recovered u-v scale is not positive");
  }
  const double f = std::sqrt(disc) / k_uv;
  return make_transform(k_xy, k_uv, u_0, v_0, f_prime, f);
}

ExtrinsicsEstimate extrinsics_from_homography(const HomographyH& H, const Matrix4& P) {
  const Matrix4 p_inv = P.inverse();
  const Eigen::Vector4d a1 = p_inv * H.h.col(0);
  const Eigen::Vector4d a2 = p_inv * H.h.col(1);
  const Eigen::Vector4d a3 = p_inv * H.h.col(2);
  // The fourth entry of P^-1 h3 carries the sign of the unknown homography scale.
  const double sign = a3(3) < 0.0 ? -1.0 : 1.0;
  const double n1 = a1.norm();
  const double n2 = a2.norm();
  if (n1 == 0.0 || n2 == 0.0) {
    throw Error(ErrorKind::InvalidInput, "homography columns vanish under P^-1");
  }
  const Eigen::Vector3d r1 = sign * a1.head<3>() / n1;
  const Eigen::Vector3d r2 = sign * a2.head<3>() / n2;
  Eigen::Matrix3d raw;
  raw << r1, r2, r1.cross(r2);

  ExtrinsicsEstimate out;
  out.orthogonality_error = (raw.transpose() * raw - Eigen::Matrix3d::Identity()).norm();
  const Eigen::Matrix3d R = nearest_orthogonal(raw);
  if (R.determinant() < 0.0) {
    throw Error(ErrorKind::ReflectionDetected, "recovered rotation is a reflection");
  }
  out.pose.rotation = rodrigues_from_matrix(R);
  out.pose.translation = sign * a3.head<3>() / n1;
  return out;
}

std::vector<PointRays> decode_pose(std::span<const Observation> obs, std::span<const Point3> board,
                                   int pose_id, const TppParams& setting) {
  std::map<int, PointRays> by_point;
  for (const auto& o : obs) {
    if (o.pose_id != pose_id) continue;
    if (o.point_id < 0 || static_cast<std::size_t>(o.point_id) >= board.size()) {
      throw Error(ErrorKind::MissingReference, "unknown board point " + std::to_string(o.point_id));
    }
    auto& pr = by_point[o.point_id];
    pr.board = board[o.point_id].head<2>();
    pr.rays.push_back(decode_virtual_ray(o.px, o.py, o.lens_i, o.lens_j, setting));
  }
  std::vector<PointRays> out;
  out.reserve(by_point.size());
  for (auto& [id, pr] : by_point) out.push_back(std::move(pr));
  return out;
}

std::vector<std::pair<double, std::size_t>> residual_histogram(const ResidualSet& res,
                                                               double width) {
  std::vector<std::pair<double, std::size_t>> bins;
  for (const auto& r : res.values) {
    const auto b = static_cast<std::size_t>(std::floor(r.norm() / width));
    if (b >= bins.size()) {
      const std::size_t old = bins.size();
      bins.resize(b + 1);
      for (std::size_t k = old; k < bins.size(); ++k) bins[k] = {width * static_cast<double>(k), 0};
    }
    ++bins[b].second;
  }
  return bins;
}

LinearStage linear_calibration(const CalibrationInput& input, std::vector<std::string>* log) {
  int n_poses = 0;
  for (const auto& o : input.observations) n_poses = std::max(n_poses, o.pose_id + 1);
  if (n_poses < 3) {
    throw Error(ErrorKind::InsufficientPoses,
                "at least 3 poses are required, got " + std::to_string(n_poses));
  }

  LinearStage out;
  for (int p = 0; p < n_poses; ++p) {
    const auto pts = decode_pose(input.observations, input.board, p, input.setting);
    out.homographies.push_back(estimate_homography(pts));
  }
  const double f_prime = input.setting.f_prime;
  out.q = solve_q(out.homographies, f_prime);
  out.transform = closed_form_intrinsics(out.q, f_prime);
  out.intr = scene_intrinsics(out.transform, input.setting);

  const Matrix4 P = projective_matrix(out.transform);
  for (const auto& h : out.homographies) {
    const auto ext = extrinsics_from_homography(h, P);
    out.poses.push_back(ext.pose);
    out.orthogonality_errors.push_back(ext.orthogonality_error);
  }
  const DistortionParams dist =
      default_distortion_centers(out.intr, input.image_width, input.image_height);
  out.rms = residuals(input.observations, input.board, out.poses, out.intr, dist).rms;

  if (log) {
    std::ostringstream s;
    s << "linear: " << n_poses << " poses, normal spread " << out.q.normal_spread
      << " rad, q singular ratio " << out.q.singular_ratio
      << ", lambda " << out.q.lambda << ", rms " << out.rms << " px";
    log->push_back(s.str());
    log->push_back(
        "extrinsics: r2 = P^-1 h2 / |P^-1 h2| (the alternative P^-2 h2 reading is not used), "
        "t = P^-1 h3 / |P^-1 h1|");
  }
  return out;
}

CalibrationResult calibrate(const CalibrationInput& input, const RefineOptions& options) {
  CalibrationResult out;
  out.setting = input.setting;
  std::vector<std::string> log;
  out.linear = linear_calibration(input, &log);

  ModelState init;
  init.intr = out.linear.intr;
  init.center_anchor = Eigen::Vector2d(0.5 * (input.image_width - 1.0),
                                       0.5 * (input.image_height - 1.0));
  init.dist = init.effective_distortion();
  init.poses = out.linear.poses;

  out.refinement = refine(init, input.observations, input.board, options);
  out.refinement.log.insert(out.refinement.log.begin(), log.begin(), log.end());

  out.intr = out.refinement.state.intr;
  out.dist = out.refinement.state.dist;
  out.poses = out.refinement.state.poses;
  out.transform = decode_transform(out.intr, input.setting);
  const auto res = residuals(input.observations, input.board, out.poses, out.intr, out.dist);
  out.rms = res.rms;
  out.residual_histogram = residual_histogram(res);
  return out;
}

}  // namespace plenocal
