#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "plenocal/normal_equations.hpp"
#include "plenocal/simulator.hpp"

namespace plenocal::test {

struct JacobianCheck {
  double worst = 0.0;  ///< largest per-column relative deviation seen
  int configurations = 0;
};

/// Central differences of the predicted pixels against the autodiff Jacobian
/// on random default-camera configurations. Steps are 1e-6 of each
/// parameter's typical magnitude.
inline JacobianCheck check_jacobian(int configurations, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const PhysicalCameraSpec cam;
  const BoardSpec board;
  const auto pts = board.points(cam.pixel_pitch);
  const Intrinsics gt = ground_truth_intrinsics(cam);
  const Eigen::Vector2d anchor(0.5 * (cam.width - 1.0), 0.5 * (cam.height - 1.0));
  JacobianCheck out;

  for (int c = 0; c < configurations; ++c) {
    const auto poses = generate_poses(2, seed + 1000 + c, PoseEnvelope{}, cam, board);
    const auto all = synthesize_observations_serial(cam, board, poses, DistortionParams{});
    std::vector<Observation> obs;
    for (std::size_t k = 0; k < all.size(); k += std::max<std::size_t>(1, all.size() / 25)) {
      obs.push_back(all[k]);
    }

    ModelState s;
    s.intr = {gt.k_xy * (1 + 0.05 * u(rng)), gt.k_uv * (1 + 0.05 * u(rng)),
              gt.u_0 + 50 * u(rng), gt.v_0 + 50 * u(rng), gt.f * (1 + 0.05 * u(rng))};
    s.dist.s1 = 2e-11 * u(rng);
    s.dist.s2 = 2e-18 * u(rng);
    s.dist.t1 = 6e-11 * u(rng);
    s.dist.t2 = 1e-17 * u(rng);
    s.poses = poses;
    ParameterLayout layout;
    layout.n_poses = 2;
    // Alternate between free centers and centers anchored to the intrinsics.
    layout.optimize_centers = c % 2 == 0;
    if (layout.optimize_centers) {
      s.dist.x_c = gt.k_xy * anchor.x() + 30 * u(rng);
      s.dist.y_c = gt.k_xy * anchor.y() + 30 * u(rng);
      s.dist.u_c = gt.u_0 + 30 * u(rng);
      s.dist.v_c = gt.v_0 + 30 * u(rng);
    } else {
      s.center_anchor = anchor;
    }

    const Eigen::MatrixXd jac = prediction_jacobian(obs, pts, s, layout);
    const Eigen::VectorXd x0 = pack_state(s, layout);
    std::vector<double> scale(x0.size());
    for (int k = 0; k < x0.size(); ++k) scale[k] = std::max(std::abs(x0(k)), 1e-3);
    const int co = layout.coeffs_offset();
    scale[co] = 1e-10;
    scale[co + 1] = 1e-17;
    scale[co + 2] = 1e-10;
    scale[co + 3] = 1e-17;

    for (int k = 0; k < x0.size(); ++k) {
      const double h = 1e-6 * scale[k];
      Eigen::VectorXd xp = x0, xm = x0;
      xp(k) += h;
      xm(k) -= h;
      // residual = observed - predicted, so the prediction derivative is the negative.
      const Eigen::VectorXd rp = residual_vector(obs, pts, unpack_state(xp, layout, s));
      const Eigen::VectorXd rm = residual_vector(obs, pts, unpack_state(xm, layout, s));
      const Eigen::VectorXd fd = -(rp - rm) / (2 * h);
      const double denom = std::max(jac.col(k).norm(), 1e-12);
      out.worst = std::max(out.worst, (fd - jac.col(k)).norm() / denom);
    }
    ++out.configurations;
  }
  return out;
}

}  // namespace plenocal::test
