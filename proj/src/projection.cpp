#include "plenocal/projection.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <tuple>

#include "plenocal/errors.hpp"

namespace plenocal {

namespace {

std::array<double, block::kIntrinsics> pack(const Intrinsics& in) {
  return {in.k_xy, in.k_uv, in.u_0, in.v_0, in.f};
}

std::array<double, block::kDistortion> pack(const DistortionParams& d) {
  return {d.s1, d.s2, d.t1, d.t2, d.x_c, d.y_c, d.u_c, d.v_c};
}

std::array<double, block::kPose> pack(const Pose& p) {
  return {p.rotation(0), p.rotation(1), p.rotation(2),
          p.translation(0), p.translation(1), p.translation(2)};
}

void check_refs(std::span<const Observation> obs, std::size_t n_points, std::size_t n_poses) {
  for (const auto& o : obs) {
    if (o.pose_id < 0 || static_cast<std::size_t>(o.pose_id) >= n_poses) {
      throw Error(ErrorKind::MissingReference, "observation references unknown pose " +
                                                   std::to_string(o.pose_id));
    }
    if (o.point_id < 0 || static_cast<std::size_t>(o.point_id) >= n_points) {
      throw Error(ErrorKind::MissingReference, "observation references unknown board point " +
                                                   std::to_string(o.point_id));
    }
  }
}

Eigen::Vector2d residual_of(const Observation& o, std::span<const Point3> board,
                            const std::vector<std::array<double, block::kPose>>& poses,
                            const std::array<double, block::kIntrinsics>& intr,
                            const std::array<double, block::kDistortion>& dist) {
  double pix[2];
  if (!project_blocks<double>(intr.data(), dist.data(), poses[o.pose_id].data(),
                              board[o.point_id], o.lens_i, o.lens_j, pix)) {
    throw Error(ErrorKind::BehindPlane, "board point lies on the u-v plane");
  }
  return {o.px - pix[0], o.py - pix[1]};
}

ResidualSet residuals_impl(std::span<const Observation> obs, std::span<const Point3> board,
                           std::span<const Pose> poses, const Intrinsics& intr,
                           const DistortionParams& dist, bool parallel) {
  check_refs(obs, board.size(), poses.size());
  ResidualSet out;
  out.order = canonical_order(obs);
  out.values.resize(obs.size());
  std::vector<std::array<double, block::kPose>> packed;
  packed.reserve(poses.size());
  for (const auto& p : poses) packed.push_back(pack(p));
  const auto pi = pack(intr);
  const auto pd = pack(dist);

  const auto n = static_cast<std::ptrdiff_t>(obs.size());
  if (parallel) {
    // Entries are independent; the BehindPlane error is rethrown after the loop.
    bool failed = false;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t k = 0; k < n; ++k) {
      try {
        out.values[k] = residual_of(obs[out.order[k]], board, packed, pi, pd);
      } catch (const Error&) {
#pragma omp atomic write
        failed = true;
      }
    }
    if (failed) throw Error(ErrorKind::BehindPlane, "board point lies on the u-v plane");
  } else {
    for (std::ptrdiff_t k = 0; k < n; ++k) {
      out.values[k] = residual_of(obs[out.order[k]], board, packed, pi, pd);
    }
  }

  double sum = 0.0;
  for (const auto& r : out.values) sum += r.squaredNorm();
  out.rms = obs.empty() ? 0.0 : std::sqrt(sum / (2.0 * static_cast<double>(obs.size())));
  return out;
}

}  // namespace

DistortionParams default_distortion_centers(const Intrinsics& intr, double image_width,
                                            double image_height) {
  DistortionParams d;
  d.x_c = intr.k_xy * 0.5 * (image_width - 1.0);
  d.y_c = intr.k_xy * 0.5 * (image_height - 1.0);
  d.u_c = intr.u_0;
  d.v_c = intr.v_0;
  return d;
}

Eigen::Vector2d apply_distortion(const Eigen::Vector2d& point, const Eigen::Vector2d& center,
                                 const Eigen::Vector2d& coeffs) {
  const Eigen::Vector2d d = point - center;
  const double r2 = d.squaredNorm();
  return d * (1.0 + coeffs(0) * r2 + coeffs(1) * r2 * r2) + center;
}

Eigen::Vector2d undistort(const Eigen::Vector2d& distorted, const Eigen::Vector2d& center,
                          const Eigen::Vector2d& coeffs) {
  const Eigen::Vector2d d = distorted - center;
  const double rd = d.norm();
  if (rd == 0.0 || (coeffs(0) == 0.0 && coeffs(1) == 0.0)) return distorted;

  const double k1 = coeffs(0);
  const double k2 = coeffs(1);
  // Solve g(r) = r (1 + k1 r^2 + k2 r^4) - rd = 0 for r.
  double r = rd;
  bool converged = false;
  for (int it = 0; it < 50; ++it) {
    const double r2 = r * r;
    const double g = r * (1.0 + k1 * r2 + k2 * r2 * r2) - rd;
    const double dg = 1.0 + 3.0 * k1 * r2 + 5.0 * k2 * r2 * r2;
    if (!(dg > 0.0)) break;
    const double step = g / dg;
    r -= step;
    if (!std::isfinite(r) || r < 0.0) break;
    if (std::abs(step) <= 1e-15 * std::max(rd, 1.0)) {
      converged = true;
      break;
    }
  }
  const double r2 = r * r;
  if (!converged || !(1.0 + 3.0 * k1 * r2 + 5.0 * k2 * r2 * r2 > 0.0)) {
    throw Error(ErrorKind::NonInvertible, "radial distortion is not invertible at this radius");
  }
  return center + d * (r / rd);
}

Eigen::Vector2d project_point(const Point3& point_w, const Pose& pose, const Intrinsics& intr,
                              const DistortionParams& dist, int lens_i, int lens_j) {
  const auto pi = pack(intr);
  const auto pd = pack(dist);
  const auto pp = pack(pose);
  double pix[2];
  if (!project_blocks<double>(pi.data(), pd.data(), pp.data(), point_w, lens_i, lens_j, pix)) {
    throw Error(ErrorKind::BehindPlane, "board point lies on the u-v plane");
  }
  return {pix[0], pix[1]};
}

Eigen::Vector2d project_point(const Point3& point_w, const Pose& pose, const TppParams& transform,
                              const TppParams& setting, const DistortionParams& dist, int lens_i,
                              int lens_j) {
  return project_point(point_w, pose, scene_intrinsics(transform, setting), dist, lens_i, lens_j);
}

std::vector<std::size_t> canonical_order(std::span<const Observation> obs) {
  std::vector<std::size_t> idx(obs.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = obs[a];
    const auto& y = obs[b];
    return std::tie(x.pose_id, x.point_id, x.lens_i, x.lens_j) <
           std::tie(y.pose_id, y.point_id, y.lens_i, y.lens_j);
  });
  return idx;
}

ResidualSet residuals(std::span<const Observation> obs, std::span<const Point3> board,
                      std::span<const Pose> poses, const Intrinsics& intr,
                      const DistortionParams& dist) {
  return residuals_impl(obs, board, poses, intr, dist, true);
}

ResidualSet residuals(std::span<const Observation> obs, std::span<const Point3> board,
                      std::span<const Pose> poses, const TppParams& transform,
                      const TppParams& setting, const DistortionParams& dist) {
  return residuals_impl(obs, board, poses, scene_intrinsics(transform, setting), dist, true);
}

ResidualSet residuals_serial(std::span<const Observation> obs, std::span<const Point3> board,
                             std::span<const Pose> poses, const Intrinsics& intr,
                             const DistortionParams& dist) {
  return residuals_impl(obs, board, poses, intr, dist, false);
}

}  // namespace plenocal
