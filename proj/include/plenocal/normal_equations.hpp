#pragma once

#include <Eigen/Core>
#include <optional>
#include <span>
#include <vector>

#include "plenocal/projection.hpp"

namespace plenocal {

/// Column layout of the refinement parameter vector:
/// [k_xy k_uv u_0 v_0 f | s1 s2 t1 t2 | (x_c y_c u_c v_c) | pose_0 .. pose_n-1].
struct ParameterLayout {
  int n_poses = 0;
  bool optimize_centers = false;

  int intrinsics_offset() const { return 0; }
  int coeffs_offset() const { return block::kIntrinsics; }
  int centers_offset() const { return optimize_centers ? coeffs_offset() + 4 : -1; }
  int pose_offset(int pose) const {
    return block::kIntrinsics + 4 + (optimize_centers ? 4 : 0) + block::kPose * pose;
  }
  int size() const { return pose_offset(n_poses); }
};

/// Full model state as seen by the optimizer.
struct ModelState {
  Intrinsics intr;
  DistortionParams dist;
  std::vector<Pose> poses;
  /// When set, the distortion centers are not free values but follow the
  /// intrinsics: (x_c, y_c) = k_xy * anchor and (u_c, v_c) = (u_0, v_0).
  std::optional<Eigen::Vector2d> center_anchor;

  /// `dist` with anchored centers filled in.
  DistortionParams effective_distortion() const;
};

Eigen::VectorXd pack_state(const ModelState& s, const ParameterLayout& layout);
/// Writes the packed vector back; fixed centers are kept from `base`.
ModelState unpack_state(const Eigen::VectorXd& x, const ParameterLayout& layout,
                        const ModelState& base);

struct NormalEquations {
  Eigen::MatrixXd jtj;
  Eigen::VectorXd jtr;   ///< J^T r with r = observed - predicted
  double cost = 0.0;     ///< 0.5 * sum r^2
  std::size_t n_residuals = 0;
  bool finite = true;
};

/// Residual vector (observed - predicted) in the given observation order.
Eigen::VectorXd residual_vector(std::span<const Observation> obs, std::span<const Point3> board,
                                const ModelState& state);

/// Jacobian of the *predicted* pixels (2N x layout.size()); the residual
/// Jacobian is its negative.
Eigen::MatrixXd prediction_jacobian(std::span<const Observation> obs,
                                    std::span<const Point3> board, const ModelState& state,
                                    const ParameterLayout& layout);

/// OpenMP kernel. Observations are split into fixed-size chunks whose partial
/// sums are reduced in chunk order, so results do not depend on thread count.
NormalEquations accumulate_normal_equations(std::span<const Observation> obs,
                                            std::span<const Point3> board,
                                            const ModelState& state,
                                            const ParameterLayout& layout);

/// Straight sequential sum, kept as the reference for the parallel kernel.
NormalEquations accumulate_normal_equations_serial(std::span<const Observation> obs,
                                                   std::span<const Point3> board,
                                                   const ModelState& state,
                                                   const ParameterLayout& layout);

/// Cost only (0.5 * sum r^2); NaN when a projection is undefined.
double evaluate_cost(std::span<const Observation> obs, std::span<const Point3> board,
                     const ModelState& state);

}  // namespace plenocal
