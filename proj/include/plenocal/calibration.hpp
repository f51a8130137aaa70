#pragma once

#include <Eigen/Core>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "plenocal/normal_equations.hpp"
#include "plenocal/projection.hpp"
#include "plenocal/tpp_core.hpp"

namespace plenocal {

/// 4x3 plane-to-space homography, Frobenius-normalized, h_43 > 0.
struct HomographyH {
  Eigen::Matrix<double, 4, 3> h = Eigen::Matrix<double, 4, 3>::Zero();
  double algebraic_rms = 0.0;  ///< RMS of the row-normalized incidence residual
};

/// Decoded rays of one board point.
struct PointRays {
  Eigen::Vector2d board = Eigen::Vector2d::Zero();
  std::vector<Ray4D> rays;
};

struct QSolution {
  double q11 = 0.0;
  double q13 = 0.0;
  double q23 = 0.0;
  double q33 = 0.0;
  double q34 = 0.0;
  double q44 = 0.0;
  double lambda = 0.0;
  double singular_ratio = 0.0;  ///< smallest / second smallest singular value
  double normal_spread = 0.0;   ///< widest angle between board normals (rad), equalized coordinates
  double scale_ratio = 0.0;     ///< k_uv / k_xy of the transform
};

struct ExtrinsicsEstimate {
  Pose pose;
  double orthogonality_error = 0.0;  ///< ||R^T R - I||_F before projection
};

HomographyH estimate_homography(std::span<const PointRays> points);

/// Elements of Q = P^-T P^-1 for an equal-scale transform; used as an oracle
/// and by tests.
QSolution q_from_transform(const TppParams& transform);

/// Q up to scale from at least three homographies. The orthogonality
/// equations only see h1, h2, which lie in P (R^3 x 0), so they fix q11, q13,
/// q23 and the conic of that subspace but leave q33, q34, q44 free. Those are
/// completed from the proportional third and fourth rows of h1, h2 (giving
/// k_uv / k_xy) and from the fourth component of h3 (the remaining scale).
QSolution solve_q(std::span<const HomographyH> homographies, double f_prime);

/// Transform X_d = (k_xy, k_uv, u_0, v_0, f') plus the separation f.
TppParams closed_form_intrinsics(const QSolution& q, double f_prime);

ExtrinsicsEstimate extrinsics_from_homography(const HomographyH& H, const Matrix4& P);

struct RefineOptions {
  int max_iterations = 200;
  bool optimize_distortion = true;
  /// With false, s1 and s2 stay at their initial values (zero from the linear
  /// stage) and only the u-v coefficients are fitted.
  bool optimize_xy_distortion = true;
  bool optimize_centers = false;
  double gradient_tolerance = 1e-10;  ///< relative to the initial gradient inf-norm
  double step_tolerance = 1e-12;
  int max_consecutive_rejections = 20;
  double damping_up = 10.0;
  double damping_down = 0.1;
  double initial_damping = 1e-3;  ///< times trace of the scaled Hessian
};

struct RefineReport {
  ModelState state;
  int iterations = 0;
  double initial_rms = 0.0;
  double final_rms = 0.0;
  std::string termination;
  std::vector<std::string> log;
};

/// Levenberg-Marquardt over intrinsics, distortion and all poses.
RefineReport refine(const ModelState& initial, std::span<const Observation> obs,
                    std::span<const Point3> board, const RefineOptions& options);

struct CalibrationInput {
  std::vector<Observation> observations;
  std::vector<Point3> board;  ///< indexed by point_id, Z = 0
  TppParams setting;          ///< decode setting X'
  double image_width = 0.0;
  double image_height = 0.0;
};

struct LinearStage {
  std::vector<HomographyH> homographies;
  QSolution q;
  TppParams transform;  ///< X_d with separation f
  Intrinsics intr;
  std::vector<Pose> poses;
  std::vector<double> orthogonality_errors;
  double rms = 0.0;
};

struct CalibrationResult {
  TppParams setting;
  TppParams transform;  ///< refined X_d in the decode gauge
  Intrinsics intr;      ///< refined scene-frame TPP
  DistortionParams dist;
  std::vector<Pose> poses;
  double rms = 0.0;
  std::vector<std::pair<double, std::size_t>> residual_histogram;  ///< (bin lower edge, count)
  LinearStage linear;
  RefineReport refinement;
};

/// Closed-form stage only.
LinearStage linear_calibration(const CalibrationInput& input, std::vector<std::string>* log = nullptr);

/// Full pipeline: homographies, Q, closed-form intrinsics, extrinsics, refinement.
CalibrationResult calibrate(const CalibrationInput& input, const RefineOptions& options);

/// Counts of per-observation residual norms in bins of `width` pixels.
std::vector<std::pair<double, std::size_t>> residual_histogram(const ResidualSet& res,
                                                               double width = 0.1);

/// Groups observations of one pose into per-point decoded rays.
std::vector<PointRays> decode_pose(std::span<const Observation> obs, std::span<const Point3> board,
                                   int pose_id, const TppParams& setting);

}  // namespace plenocal
