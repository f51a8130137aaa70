#include <gtest/gtest.h>

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <random>
#include <tuple>

#include "jacobian_check.hpp"
#include "plenocal/errors.hpp"
#include "plenocal/projection.hpp"
#include "plenocal/simulator.hpp"
#include "test_util.hpp"

namespace plenocal {
namespace {

using test::uniform;

TEST(ApplyDistortion, ZeroCoefficientsAreIdentity) {
  const Eigen::Vector2d p(123.4, -56.7);
  EXPECT_EQ(apply_distortion(p, {9, 9}, {0, 0}), p);
}

TEST(ApplyDistortion, DirectEvaluation) {
  const Eigen::Vector2d d = apply_distortion({100, 0}, {0, 0}, {1e-6, 0});
  EXPECT_NEAR(d.x(), 101.0, 1e-12);
  EXPECT_EQ(d.y(), 0.0);
}

TEST(Undistort, InvertsDirectExample) {
  const Eigen::Vector2d p = undistort({101.0, 0}, {0, 0}, {1e-6, 0});
  EXPECT_NEAR(p.x(), 100.0, 1e-9);
  EXPECT_NEAR(p.y(), 0.0, 1e-12);
}

TEST(Undistort, ZeroCoefficientsAreIdentity) {
  const Eigen::Vector2d p(3, 4);
  EXPECT_EQ(undistort(p, {1, 1}, {0, 0}), p);
}

TEST(Undistort, RandomRoundTripsInInvertibleRegime) {
  std::mt19937_64 rng(21);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::Vector2d c(uniform(rng, -100, 100), uniform(rng, -100, 100));
    const Eigen::Vector2d p = c + Eigen::Vector2d(uniform(rng, -1000, 1000), uniform(rng, -1000, 1000));
    const double r2 = (p - c).squaredNorm();
    // |k1 r^2| and |k2 r^4| below 0.05 each keeps the profile monotone.
    const Eigen::Vector2d k(uniform(rng, -0.05, 0.05) / r2, uniform(rng, -0.05, 0.05) / (r2 * r2));
    const Eigen::Vector2d d = apply_distortion(p, c, k);
    worst = std::max(worst, (undistort(d, c, k) - p).norm());
    // Forward map of the inverse reproduces the input.
    EXPECT_LT((apply_distortion(undistort(d, c, k), c, k) - d).norm(), 1e-9);
  }
  EXPECT_LT(worst, 1e-8);
}

TEST(Undistort, NonMonotoneProfileThrows) {
  // r (1 - r^2) peaks at r = 1/sqrt(3) with value 0.385; 0.5 has no preimage.
  try {
    undistort({0.5, 0}, {0, 0}, {-1.0, 0.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonInvertible);
  }
}

TEST(ProjectPoint, SimilarTrianglesOnAxis) {
  // Identity pose, point (0, 0, 2f), lens center at u = d: the line from the
  // point through (d, 0, f) hits z = 0 at x = 2d.
  const double f = 10.0, d = 3.0;
  const Intrinsics intr{1.0, d, 0.0, 0.0, f};
  const Eigen::Vector2d px = project_point({0, 0, 2 * f}, Pose{}, intr, DistortionParams{}, 1, 0);
  EXPECT_NEAR(px.x(), 2 * d, 1e-12);
  EXPECT_NEAR(px.y(), 0.0, 1e-12);
}

TEST(ProjectPoint, DecodedRayPassesThroughCameraPoint) {
  std::mt19937_64 rng(22);
  const PhysicalCameraSpec cam;
  const Intrinsics intr = ground_truth_intrinsics(cam);
  for (int trial = 0; trial < 100; ++trial) {
    Pose pose;
    pose.rotation = Eigen::Vector3d(uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5));
    pose.translation = Eigen::Vector3d(uniform(rng, -1e4, 1e4), uniform(rng, -1e4, 1e4), uniform(rng, 5e4, 1e5));
    const Point3 xw(uniform(rng, -3e3, 3e3), uniform(rng, -3e3, 3e3), 0.0);
    const int i = static_cast<int>(uniform(rng, -50, 50));
    const int j = static_cast<int>(uniform(rng, -30, 30));
    const Eigen::Vector2d px = project_point(xw, pose, intr, DistortionParams{}, i, j);
    const Ray4D ray{intr.k_xy * px.x(), intr.k_xy * px.y(), intr.k_uv * i + intr.u_0,
                    intr.k_uv * j + intr.v_0, intr.f};
    const Point3 xc = pose.apply(xw);
    const Eigen::Vector2d err = incidence_rows(ray) * xc.homogeneous();
    // Rows carry a factor f; normalize to a lateral distance.
    EXPECT_LT(err.norm() / intr.f, 1e-10 * xc.norm());
  }
}

TEST(ProjectPoint, GaugeOverloadAgrees) {
  const PhysicalCameraSpec cam;
  const Intrinsics intr = ground_truth_intrinsics(cam);
  const TppParams setting = default_decode_setting(cam);
  const Pose pose = frontal_pose(cam, BoardSpec{}, 900);
  const Point3 xw(100, 200, 0);
  const Eigen::Vector2d a = project_point(xw, pose, intr, DistortionParams{}, 3, -2);
  const Eigen::Vector2d b =
      project_point(xw, pose, decode_transform(intr, setting), setting, DistortionParams{}, 3, -2);
  EXPECT_LT((a - b).norm(), 1e-8);
}

TEST(ProjectPoint, OnUvPlaneThrowsBehindPlane) {
  const Intrinsics intr{1, 1, 0, 0, 10};
  Pose pose;
  pose.translation = Eigen::Vector3d(0, 0, 10);
  try {
    project_point({0, 0, 0}, pose, intr, DistortionParams{}, 0, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::BehindPlane);
  }
}

class SimulatedResiduals : public ::testing::Test {
 protected:
  void SetUp() override {
    intr = ground_truth_intrinsics(cam);
    dist = default_distortion_centers(intr, cam.width, cam.height);
    poses = generate_poses(4, 3, PoseEnvelope{}, cam, board);
    pts = board.points(cam.pixel_pitch);
  }
  PhysicalCameraSpec cam;
  BoardSpec board;
  Intrinsics intr;
  DistortionParams dist;
  std::vector<Pose> poses;
  std::vector<Point3> pts;
};

TEST_F(SimulatedResiduals, ZeroAtGroundTruth) {
  const auto obs = synthesize_observations(cam, board, poses, dist, 0.0, 1);
  EXPECT_LT(residuals(obs, pts, poses, intr, dist).rms, 1e-9);
}

TEST_F(SimulatedResiduals, NoiseLevelMatchesSigma) {
  const auto obs = synthesize_observations(cam, board, poses, dist, 0.3, 1);
  ASSERT_GE(obs.size(), 2000u);
  const double rms = residuals(obs, pts, poses, intr, dist).rms;
  EXPECT_GE(rms, 0.24);
  EXPECT_LE(rms, 0.36);
}

TEST_F(SimulatedResiduals, PerturbedFocalIncreasesRms) {
  const auto obs = synthesize_observations(cam, board, poses, dist, 0.3, 1);
  Intrinsics off = intr;
  off.f *= 1.01;
  EXPECT_GT(residuals(obs, pts, poses, off, dist).rms, residuals(obs, pts, poses, intr, dist).rms);
}

TEST_F(SimulatedResiduals, CanonicalOrderIsLexicographic) {
  auto obs = synthesize_observations(cam, board, poses, dist, 0.1, 1);
  std::reverse(obs.begin(), obs.end());
  const auto res = residuals(obs, pts, poses, intr, dist);
  for (std::size_t k = 1; k < res.order.size(); ++k) {
    const auto& a = obs[res.order[k - 1]];
    const auto& b = obs[res.order[k]];
    EXPECT_LE(std::tie(a.pose_id, a.point_id, a.lens_i, a.lens_j),
              std::tie(b.pose_id, b.point_id, b.lens_i, b.lens_j));
  }
}

TEST_F(SimulatedResiduals, ParallelMatchesSerialBitForBit) {
  const auto obs = synthesize_observations(cam, board, poses, dist, 0.2, 4);
  const auto a = residuals(obs, pts, poses, intr, dist);
  const auto b = residuals_serial(obs, pts, poses, intr, dist);
  ASSERT_EQ(a.values.size(), b.values.size());
  EXPECT_EQ(a.order, b.order);
  for (std::size_t k = 0; k < a.values.size(); ++k) EXPECT_EQ(a.values[k], b.values[k]);
  EXPECT_EQ(a.rms, b.rms);
}

TEST_F(SimulatedResiduals, DanglingReferencesThrow) {
  auto obs = synthesize_observations(cam, board, poses, dist, 0.0, 1);
  obs.front().pose_id = 99;
  try {
    residuals(obs, pts, poses, intr, dist);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MissingReference);
  }
}

TEST(Jacobian, AutodiffMatchesCentralDifferences) {
  const auto check = test::check_jacobian(10, 77);
  EXPECT_EQ(check.configurations, 10);
  EXPECT_LT(check.worst, 1e-4);
}

}  // namespace
}  // namespace plenocal
