#include <gtest/gtest.h>

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "plenocal/errors.hpp"
#include "plenocal/rectification.hpp"
#include "plenocal/simulator.hpp"
#include "test_util.hpp"

namespace plenocal {
namespace {

using test::uniform;

template <typename F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::InvalidInput;
}

/// Brute-force trace of sensor pixel (x, y) through the pinhole of lens
/// (i, j) and an ideal thin main lens at z = 0 (light travels towards +z).
/// Returns two points of the scene-side ray in millimetres, main-lens frame.
std::pair<Eigen::Vector3d, Eigen::Vector3d> trace(const PhysicalCameraSpec& s, double x, double y,
                                                  int i, int j) {
  const Eigen::Vector3d sensor(s.sensor_origin.x() + x * s.pixel_pitch,
                               s.sensor_origin.y() + y * s.pixel_pitch, s.sensor_origin.z());
  const Eigen::Vector3d lens(s.mla_origin.x() + i * s.lens_pitch,
                             s.mla_origin.y() + j * s.lens_pitch, s.mla_origin.z());
  // Follow the ray backwards to the main lens.
  const Eigen::Vector3d d = lens - sensor;
  const Eigen::Vector3d hit = sensor - sensor.z() / d.z() * d;
  // The refracted ray meets the undeviated chief ray of the same direction on
  // the object-side focal plane z = -F.
  const Eigen::Vector3d focal = -s.main_focal / d.z() * d;
  return {hit, focal};
}

/// Scene TPP frame: pixel units, origin at the conjugate of the sensor
/// origin, axes reversed.
Eigen::Vector3d to_scene(const PhysicalCameraSpec& s, const Eigen::Vector3d& p) {
  const double z = s.sensor_origin.z();
  const double obj = s.main_focal * z / (s.main_focal - z);
  const Eigen::Vector3d origin(s.sensor_origin.x() * obj / z, s.sensor_origin.y() * obj / z, obj);
  return -(p - origin) / s.pixel_pitch;
}

Eigen::Vector3d at_z(const Eigen::Vector3d& a, const Eigen::Vector3d& b, double z) {
  return a + (z - a.z()) / (b.z() - a.z()) * (b - a);
}

PhysicalCameraSpec random_spec(std::mt19937_64& rng) {
  PhysicalCameraSpec s;
  s.main_focal = uniform(rng, 30, 100);
  const double za = s.main_focal * uniform(rng, 1.2, 1.9);
  s.mla_origin = {uniform(rng, -0.2, 0.2), uniform(rng, -0.2, 0.2), za};
  s.sensor_origin = {uniform(rng, -20, -10), uniform(rng, -15, -8), za + uniform(rng, 0.5, 5)};
  s.pixel_pitch = uniform(rng, 0.004, 0.012);
  s.lens_pitch = uniform(rng, 0.1, 0.4);
  return s;
}

TEST(PhysicalToTpp, DecodedRaysMatchThinLensTrace) {
  std::mt19937_64 rng(41);
  for (int cam = 0; cam < 10; ++cam) {
    const PhysicalCameraSpec s = random_spec(rng);
    const TppParams out = physical_to_tpp(s).second;
    for (int k = 0; k < 100; ++k) {
      const double x = uniform(rng, 0, s.width - 1);
      const double y = uniform(rng, 0, s.height - 1);
      const int i = static_cast<int>(uniform(rng, -60, 60));
      const int j = static_cast<int>(uniform(rng, -40, 40));
      const auto [a, b] = trace(s, x, y, i, j);
      const Eigen::Vector3d sa = to_scene(s, a), sb = to_scene(s, b);
      const Eigen::Vector3d on_xy = at_z(sa, sb, 0.0);
      const Eigen::Vector3d on_uv = at_z(sa, sb, out.f_prime);
      const double scale = std::max(1.0, on_uv.head<2>().cwiseAbs().maxCoeff());
      EXPECT_NEAR(on_xy.x(), out.k_x * x, 1e-9 * scale);
      EXPECT_NEAR(on_xy.y(), out.k_y * y, 1e-9 * scale);
      EXPECT_NEAR(on_uv.x(), out.k_u * i + out.u_0, 1e-9 * scale);
      EXPECT_NEAR(on_uv.y(), out.k_v * j + out.v_0, 1e-9 * scale);
    }
  }
}

TEST(PhysicalToTpp, InsideFrameIsTheSensorToArrayGeometry) {
  const PhysicalCameraSpec s;
  const TppParams in = physical_to_tpp(s).first;
  EXPECT_EQ(in.k_x, 1.0);
  EXPECT_NEAR(in.k_u, s.lens_pitch / s.pixel_pitch, 1e-12);
  EXPECT_NEAR(in.u_0, (s.mla_origin.x() - s.sensor_origin.x()) / s.pixel_pitch, 1e-9);
  EXPECT_NEAR(in.f_prime, s.nominal_gap(), 1e-9);
}

TEST(PhysicalToTpp, CenteredGeometryHasNoOffsets) {
  PhysicalCameraSpec s;
  s.sensor_origin = {0.0, 0.0, 73.27};
  s.mla_origin = {0.0, 0.0, 70.0};
  const auto [in, out] = physical_to_tpp(s);
  EXPECT_EQ(in.u_0, 0.0);
  EXPECT_EQ(in.v_0, 0.0);
  EXPECT_EQ(out.u_0, in.u_0);
  EXPECT_EQ(out.v_0, in.v_0);
}

TEST(PhysicalToTpp, DefaultCameraScales) {
  const PhysicalCameraSpec s;  // 50 mm lens, 300 um array pitch, 9 um pixels
  const TppParams out = physical_to_tpp(s).second;
  EXPECT_NEAR(out.k_x, 50.0 / (73.27 - 50.0), 1e-12);
  EXPECT_NEAR(out.k_u, 50.0 / (70.0 - 50.0) * 0.3 / 0.009, 1e-9);
  EXPECT_GT(out.f_prime, 0.0);
  const Intrinsics gt = ground_truth_intrinsics(s);
  EXPECT_NEAR(gt.k_xy, 2.148689, 1e-6);
  EXPECT_NEAR(gt.k_uv, 83.3333, 1e-4);
}

TEST(PhysicalToTpp, FocalPlaneIsSingular) {
  PhysicalCameraSpec s;
  s.mla_origin.z() = s.main_focal;
  EXPECT_EQ(kind_of([&] { physical_to_tpp(s); }), ErrorKind::FocalSingularity);
  s = PhysicalCameraSpec{};
  s.sensor_origin.z() = s.main_focal + 1e-12;
  EXPECT_EQ(kind_of([&] { physical_to_tpp(s); }), ErrorKind::FocalSingularity);
}

TEST(GeneratePoses, ZeroRotationEnvelopeIsFrontal) {
  const PhysicalCameraSpec cam;
  const BoardSpec board;
  PoseEnvelope env;
  env.distance_min = env.distance_max = 900.0;
  env.tilt_min = env.tilt_max = env.roll_max = env.lateral_fraction = 0.0;
  const auto poses = generate_poses(1, 5, env, cam, board);
  const Pose ref = frontal_pose(cam, board, 900.0);
  ASSERT_EQ(poses.size(), 1u);
  EXPECT_LT(poses[0].rotation.norm(), 1e-12);
  EXPECT_LT((poses[0].translation - ref.translation).norm(), 1e-9 * ref.translation.norm());
}

TEST(GeneratePoses, DeterministicPerSeed) {
  const PhysicalCameraSpec cam;
  const auto a = generate_poses(12, 99, PoseEnvelope{}, cam, BoardSpec{});
  const auto b = generate_poses(12, 99, PoseEnvelope{}, cam, BoardSpec{});
  const auto c = generate_poses(12, 100, PoseEnvelope{}, cam, BoardSpec{});
  ASSERT_EQ(a.size(), 12u);
  for (int k = 0; k < 12; ++k) {
    EXPECT_EQ(a[k].rotation, b[k].rotation);
    EXPECT_EQ(a[k].translation, b[k].translation);
    EXPECT_LE(a[k].rotation.norm(), 40.0 * M_PI / 180.0);
  }
  EXPECT_NE(a[0].translation, c[0].translation);
}

TEST(GeneratePoses, UnreachableEnvelopeThrows) {
  PoseEnvelope env;
  env.distance_min = env.distance_max = 60.0;  // board far wider than the field of view
  EXPECT_EQ(kind_of([&] { generate_poses(1, 1, env, PhysicalCameraSpec{}, BoardSpec{}); }),
            ErrorKind::EnvelopeInfeasible);
}

TEST(SynthesizeObservations, PointsSeenByAtLeastTwelveLenses) {
  const PhysicalCameraSpec cam;
  const BoardSpec board;
  const auto poses = generate_poses(12, 1, PoseEnvelope{}, cam, board);
  const auto obs = synthesize_observations(cam, board, poses, DistortionParams{}, 0.0, 1);
  std::map<std::pair<int, int>, int> count;
  for (const auto& o : obs) ++count[{o.pose_id, o.point_id}];
  std::vector<int> c;
  double total = 0.0;
  for (const auto& [key, n] : count) {
    c.push_back(n);
    total += n;
  }
  std::nth_element(c.begin(), c.begin() + c.size() / 2, c.end());
  EXPECT_GE(c[c.size() / 2], 12);
  EXPECT_GE(total / static_cast<double>(c.size()), 12.0);
}

TEST(SynthesizeObservations, ProjectionsLieInsideTheirMicroImage) {
  const PhysicalCameraSpec cam;
  const BoardSpec board;
  const auto poses = generate_poses(3, 2, PoseEnvelope{}, cam, board);
  for (const auto& o : synthesize_observations_serial(cam, board, poses, DistortionParams{})) {
    const Eigen::Vector2d c = micro_image_center(cam, o.lens_i, o.lens_j);
    EXPECT_LE((Eigen::Vector2d(o.px, o.py) - c).norm(), cam.micro_image_radius + 1e-9);
  }
}

TEST(SynthesizeObservations, NoiseHasRequestedSpread) {
  const PhysicalCameraSpec cam;
  const BoardSpec board;
  const auto poses = generate_poses(6, 3, PoseEnvelope{}, cam, board);
  const Intrinsics gt = ground_truth_intrinsics(cam);
  const DistortionParams dist = default_distortion_centers(gt, cam.width, cam.height);
  const auto obs = synthesize_observations(cam, board, poses, dist, 0.3, 3);
  const auto res = residuals(obs, board.points(cam.pixel_pitch), poses, gt, dist);
  ASSERT_GE(2 * res.values.size(), 5000u);
  double sum = 0.0, sq = 0.0;
  for (const auto& v : res.values) {
    sum += v.x() + v.y();
    sq += v.squaredNorm();
  }
  const double n = 2.0 * res.values.size();
  const double std = std::sqrt(sq / n - (sum / n) * (sum / n));
  EXPECT_NEAR(std, 0.3, 0.05 * 0.3);
}

TEST(SynthesizeObservations, NoiseScalesOneSharedDraw) {
  const PhysicalCameraSpec cam;
  const BoardSpec board;
  const auto poses = generate_poses(2, 4, PoseEnvelope{}, cam, board);
  const auto clean = synthesize_observations_serial(cam, board, poses, DistortionParams{});
  const auto a = synthesize_observations(cam, board, poses, DistortionParams{}, 0.1, 8);
  const auto b = synthesize_observations(cam, board, poses, DistortionParams{}, 0.4, 8);
  ASSERT_EQ(clean.size(), a.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_NEAR(b[k].px - clean[k].px, 4.0 * (a[k].px - clean[k].px), 1e-9);
    EXPECT_EQ(a[k].lens_i, clean[k].lens_i);
  }
}

TEST(SynthesizeObservations, ParallelMatchesSerial) {
  const PhysicalCameraSpec cam;
  const BoardSpec board;
  const auto poses = generate_poses(5, 6, PoseEnvelope{}, cam, board);
  const auto a = synthesize_observations(cam, board, poses, DistortionParams{}, 0.0, 1);
  const auto b = synthesize_observations_serial(cam, board, poses, DistortionParams{});
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].pose_id, b[k].pose_id);
    EXPECT_EQ(a[k].point_id, b[k].point_id);
    EXPECT_EQ(a[k].lens_i, b[k].lens_i);
    EXPECT_EQ(a[k].lens_j, b[k].lens_j);
    EXPECT_EQ(a[k].px, b[k].px);
    EXPECT_EQ(a[k].py, b[k].py);
  }
}

TEST(WhiteImageSynthesis, ParallelMatchesSerial) {
  PhysicalCameraSpec cam;
  cam.width = 600;
  cam.height = 400;
  const auto mla = misaligned_mla(cam, Eigen::Vector3d(0.002, -0.006, 0.003));
  EXPECT_EQ(synthesize_white_image(cam, mla).pixels, synthesize_white_image_serial(cam, mla).pixels);
}

TEST(WhiteImageSynthesis, AlignedDiscsPeakAtGridCenters) {
  PhysicalCameraSpec cam;
  cam.width = 800;
  cam.height = 600;
  const MlaMisalignmentSpec mla = aligned_mla(cam);
  const Raster16 img = synthesize_white_image(cam, mla);
  const WhiteImageOptions opt;
  for (int i = -3; i <= 3; ++i) {
    const Eigen::Vector2d c = project_center(mla, i, 0).center;
    if (c.x() < 1 || c.y() < 1 || c.x() > cam.width - 2 || c.y() > cam.height - 2) continue;
    const int x = static_cast<int>(std::lround(c.x()));
    const int y = static_cast<int>(std::lround(c.y()));
    // The nearest pixel is within half a pixel of the peak.
    const double r2 = (Eigen::Vector2d(x, y) - c).squaredNorm();
    const double sigma = cam.micro_image_radius / 3.0;
    EXPECT_NEAR(img.at(x, y), opt.background + opt.peak * std::exp(-0.5 * r2 / (sigma * sigma)), 1.0);
  }
}

TEST(MisalignmentHomography, MapsAlignedCentersToMisalignedOnes) {
  const PhysicalCameraSpec cam;
  const auto aligned = aligned_mla(cam);
  const auto tilted = misaligned_mla(cam, Eigen::Vector3d(0.003, 0.008, -0.002));
  const Eigen::Matrix3d g = misalignment_homography(aligned, tilted);
  for (int i : {-40, 0, 17}) {
    for (int j : {-25, 3, 30}) {
      const Eigen::Vector2d mapped = apply_homography(g, project_center(aligned, i, j).center);
      EXPECT_LT((mapped - project_center(tilted, i, j).center).norm(), 1e-8);
    }
  }
}

TEST(BoardSpec, PointsInPixelUnits) {
  const BoardSpec b{2, 3, 54.0, 27.0};
  const auto pts = b.points(0.009);
  ASSERT_EQ(pts.size(), 6u);
  EXPECT_NEAR(pts[5].x(), 54.0 / 0.009, 1e-9);
  EXPECT_NEAR(pts[5].y(), 2 * 27.0 / 0.009, 1e-9);
  EXPECT_EQ(pts[5].z(), 0.0);
  EXPECT_EQ(kind_of([] { BoardSpec{1, 5, 1.0, 1.0}.validate(); }), ErrorKind::InvalidInput);
}

}  // namespace
}  // namespace plenocal
