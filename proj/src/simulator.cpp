#include "plenocal/simulator.hpp"

#include <Eigen/Geometry>
#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <random>

#include "plenocal/errors.hpp"
#include "plenocal/rotation.hpp"

namespace plenocal {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kMaxTiltDeg = 40.0;
constexpr int kMaxRejections = 1000;

double deg(double d) { return d * kPi / 180.0; }

/// Everything needed to decide which micro-images contain a projection.
struct Imaging {
  Intrinsics intr;
  Point3 lens_center;
  double radius;
  double width;
  double height;
};

Imaging imaging_of(const PhysicalCameraSpec& camera) {
  return {ground_truth_intrinsics(camera), main_lens_center(camera), camera.micro_image_radius,
          static_cast<double>(camera.width), static_cast<double>(camera.height)};
}

bool inside(const Eigen::Vector2d& p, const Imaging& im) {
  return p.x() >= 0.0 && p.y() >= 0.0 && p.x() <= im.width - 1.0 && p.y() <= im.height - 1.0;
}

/// Undistorted pixel of camera-frame point `xc` through lens (i, j), as a
/// continuous function of the label. Returns false if undefined.
bool linear_pixel(const Intrinsics& in, const Point3& xc, double i, double j, Eigen::Vector2d& p) {
  const double den = xc.z() - in.f;
  if (std::abs(den) <= 1e-12 * (std::abs(xc.z()) + std::abs(in.f))) return false;
  const double u = in.k_uv * i + in.u_0;
  const double v = in.k_uv * j + in.v_0;
  p = Eigen::Vector2d((u * xc.z() - in.f * xc.x()) / den, (v * xc.z() - in.f * xc.y()) / den) /
      in.k_xy;
  return true;
}

/// Observations of one board point in one pose, in (i, j) order.
void observe_point(const Imaging& im, const DistortionParams& dist, const Pose& pose,
                   const Point3& xw, int pose_id, int point_id, std::vector<Observation>& out) {
  const Point3 xc = pose.apply(xw);
  Eigen::Vector2d p0, px, c0, cx;
  if (!linear_pixel(im.intr, xc, 0, 0, p0) || !linear_pixel(im.intr, xc, 1, 0, px) ||
      !linear_pixel(im.intr, im.lens_center, 0, 0, c0) ||
      !linear_pixel(im.intr, im.lens_center, 1, 0, cx)) {
    return;
  }
  // Offset from the micro-image center is affine in the label with equal
  // slope along both axes.
  const double slope = (px.x() - p0.x()) - (cx.x() - c0.x());
  if (std::abs(slope) < 1e-12) return;
  const Eigen::Vector2d d0 = p0 - c0;
  const double i_star = -d0.x() / slope;
  const double j_star = -d0.y() / slope;
  const int reach = std::min(60, static_cast<int>(std::ceil(im.radius / std::abs(slope))) + 3);
  const int i_lo = static_cast<int>(std::floor(i_star)) - reach;
  const int j_lo = static_cast<int>(std::floor(j_star)) - reach;
  for (int i = i_lo; i <= i_lo + 2 * reach + 1; ++i) {
    for (int j = j_lo; j <= j_lo + 2 * reach + 1; ++j) {
      Eigen::Vector2d c;
      if (!linear_pixel(im.intr, im.lens_center, i, j, c) || !inside(c, im)) continue;
      Eigen::Vector2d p;
      try {
        p = project_point(xw, pose, im.intr, dist, i, j);
      } catch (const Error&) {
        continue;
      }
      if ((p - c).norm() > im.radius || !inside(p, im)) continue;
      out.push_back({pose_id, point_id, i, j, p.x(), p.y()});
    }
  }
}

std::vector<Observation> observe_pose(const Imaging& im, const DistortionParams& dist,
                                      const Pose& pose, std::span<const Point3> board,
                                      int pose_id) {
  std::vector<Observation> out;
  for (std::size_t k = 0; k < board.size(); ++k) {
    observe_point(im, dist, pose, board[k], pose_id, static_cast<int>(k), out);
  }
  return out;
}

std::vector<Observation> noise_free(const PhysicalCameraSpec& camera, const BoardSpec& board,
                                    std::span<const Pose> poses, const DistortionParams& dist,
                                    bool parallel) {
  camera.validate();
  board.validate();
  const Imaging im = imaging_of(camera);
  const auto pts = board.points(camera.pixel_pitch);
  std::vector<std::vector<Observation>> per_pose(poses.size());
  const auto n = static_cast<std::ptrdiff_t>(poses.size());
  if (parallel) {
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t k = 0; k < n; ++k) {
      per_pose[k] = observe_pose(im, dist, poses[k], pts, static_cast<int>(k));
    }
  } else {
    for (std::ptrdiff_t k = 0; k < n; ++k) {
      per_pose[k] = observe_pose(im, dist, poses[k], pts, static_cast<int>(k));
    }
  }
  std::vector<Observation> out;
  for (auto& v : per_pose) out.insert(out.end(), v.begin(), v.end());
  return out;
}

Raster16 white_image(const PhysicalCameraSpec& camera, const MlaMisalignmentSpec& mla,
                     const WhiteImageOptions& opt, bool parallel) {
  camera.validate();
  mla.validate();
  const Eigen::Matrix3d h = mla.label_to_pixel();
  const Eigen::Matrix3d h_inv = h.inverse();
  const double radius = camera.micro_image_radius;
  const double sigma = radius / 3.0;
  Raster16 img(camera.width, camera.height, 65535);

  auto render_row = [&](int y) {
    for (int x = 0; x < img.width; ++x) {
      const Eigen::Vector3d l = h_inv * Eigen::Vector3d(x, y, 1.0);
      const int ci = static_cast<int>(std::lround(l.x() / l.z()));
      const int cj = static_cast<int>(std::lround(l.y() / l.z()));
      double sum = 0.0;
      for (int j = cj - 1; j <= cj + 1; ++j) {
        for (int i = ci - 1; i <= ci + 1; ++i) {
          const Eigen::Vector3d c = h * Eigen::Vector3d(i, j, 1.0);
          const double dx = x - c.x() / c.z();
          const double dy = y - c.y() / c.z();
          const double r2 = dx * dx + dy * dy;
          if (r2 > radius * radius) continue;
          sum += std::exp(-0.5 * r2 / (sigma * sigma));
        }
      }
      const double v = std::min(65535.0, opt.background + opt.peak * sum);
      img.at(x, y) = static_cast<std::uint16_t>(std::lround(v));
    }
  };
  const int height = img.height;
  if (parallel) {
#pragma omp parallel for schedule(static)
    for (int y = 0; y < height; ++y) render_row(y);
  } else {
    for (int y = 0; y < height; ++y) render_row(y);
  }
  return img;
}

}  // namespace

void PhysicalCameraSpec::validate() const {
  if (!(main_focal > 0.0) || !(pixel_pitch > 0.0) || !(lens_pitch > 0.0) ||
      !(micro_image_radius > 0.0) || width <= 0 || height <= 0) {
    throw Error(ErrorKind::InvalidInput, "camera spec has non-positive dimensions");
  }
  if (std::abs(sensor_origin.z() - main_focal) < 1e-9 ||
      std::abs(mla_origin.z() - main_focal) < 1e-9) {
    throw Error(ErrorKind::FocalSingularity, "sensor or MLA lies in the main-lens focal plane");
  }
  if (sensor_origin.z() == mla_origin.z()) {
    throw Error(ErrorKind::InvalidInput, "sensor and MLA planes coincide");
  }
}

double PhysicalCameraSpec::micro_image_pitch() const {
  return lens_pitch / pixel_pitch * sensor_origin.z() / mla_origin.z();
}

double PhysicalCameraSpec::nominal_gap() const {
  return (sensor_origin.z() - mla_origin.z()) / pixel_pitch;
}

void BoardSpec::validate() const {
  if (rows < 2 || cols < 2 || !(cell_width > 0.0) || !(cell_height > 0.0)) {
    throw Error(ErrorKind::InvalidInput, "board needs 2x2 points and positive cells");
  }
}

std::vector<Point3> BoardSpec::points(double pixel_pitch) const {
  std::vector<Point3> out;
  out.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      out.emplace_back(r * cell_width / pixel_pitch, c * cell_height / pixel_pitch, 0.0);
    }
  }
  return out;
}

void PoseEnvelope::validate() const {
  if (!(distance_min > 0.0) || distance_max < distance_min) {
    throw Error(ErrorKind::InvalidInput, "pose distance range is empty");
  }
  if (tilt_min < 0.0 || tilt_max < tilt_min || tilt_max > kMaxTiltDeg || roll_max < 0.0 ||
      lateral_fraction < 0.0) {
    throw Error(ErrorKind::InvalidInput, "pose angle ranges are invalid");
  }
}

std::pair<TppParams, TppParams> physical_to_tpp(const PhysicalCameraSpec& s) {
  s.validate();
  const double F = s.main_focal;
  const double p = s.pixel_pitch;
  const Eigen::Vector3d& os = s.sensor_origin;
  const Eigen::Vector3d& oa = s.mla_origin;

  TppParams in;
  in.k_x = in.k_y = 1.0;
  in.k_u = in.k_v = s.lens_pitch / p;
  in.u_0 = (oa.x() - os.x()) / p;
  in.v_0 = (oa.y() - os.y()) / p;
  in.f_prime = in.f = (os.z() - oa.z()) / p;

  // Lens-frame conjugates: lateral factor F / (F - Z), depth F Z / (F - Z).
  const double ms = F / (F - os.z());
  const double ma = F / (F - oa.z());
  const double u_lens = oa.x() * ma - os.x() * ms;
  const double v_lens = oa.y() * ma - os.y() * ms;
  const double f_lens = F * oa.z() / (F - oa.z()) - F * os.z() / (F - os.z());

  TppParams out;
  out.k_x = out.k_y = -ms;
  out.k_u = out.k_v = -ma * s.lens_pitch / p;
  out.u_0 = -u_lens / p;
  out.v_0 = -v_lens / p;
  out.f_prime = out.f = -f_lens / p;
  return {in, out};
}

Intrinsics ground_truth_intrinsics(const PhysicalCameraSpec& spec) {
  const TppParams t = physical_to_tpp(spec).second;
  return {t.k_x, t.k_u, t.u_0, t.v_0, t.f_prime};
}

Point3 lens_frame_to_scene(const PhysicalCameraSpec& s, const Point3& p_mm) {
  const double F = s.main_focal;
  const double zs = s.sensor_origin.z();
  const double ms = F / (F - zs);
  const Point3 o(s.sensor_origin.x() * ms, s.sensor_origin.y() * ms, F * zs / (F - zs));
  return -(p_mm - o) / s.pixel_pitch;
}

Point3 main_lens_center(const PhysicalCameraSpec& spec) {
  return lens_frame_to_scene(spec, Point3::Zero());
}

TppParams default_decode_setting(const PhysicalCameraSpec& spec) {
  TppParams s;
  s.k_x = s.k_y = 1.0;
  s.k_u = s.k_v = spec.micro_image_pitch();
  s.u_0 = 0.5 * (spec.width - 1.0);
  s.v_0 = 0.5 * (spec.height - 1.0);
  s.f_prime = s.f = spec.nominal_gap();
  return s;
}

Eigen::Vector2d micro_image_center(const PhysicalCameraSpec& spec, int i, int j) {
  Eigen::Vector2d c;
  if (!linear_pixel(ground_truth_intrinsics(spec), main_lens_center(spec), i, j, c)) {
    throw Error(ErrorKind::DegenerateGeometry, "main lens lies on the u-v plane");
  }
  return c;
}

Pose frontal_pose(const PhysicalCameraSpec& camera, const BoardSpec& board, double distance_mm) {
  const auto pts = board.points(camera.pixel_pitch);
  const Point3 center = 0.5 * (pts.front() + pts.back());
  Pose pose;
  pose.translation = lens_frame_to_scene(camera, Point3(0.0, 0.0, -distance_mm)) - center;
  return pose;
}

std::vector<Pose> generate_poses(int n, std::uint64_t seed, const PoseEnvelope& env,
                                 const PhysicalCameraSpec& camera, const BoardSpec& board) {
  if (n < 1) throw Error(ErrorKind::InvalidInput, "pose count must be at least 1");
  env.validate();
  camera.validate();
  board.validate();
  const Imaging im = imaging_of(camera);
  const auto pts = board.points(camera.pixel_pitch);
  const Point3 center = 0.5 * (pts.front() + pts.back());
  const double half_w = 0.5 * camera.width * camera.pixel_pitch / camera.sensor_origin.z();
  const double half_h = 0.5 * camera.height * camera.pixel_pitch / camera.sensor_origin.z();
  const DistortionParams none;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  std::vector<Pose> poses;
  int rejections = 0;
  while (static_cast<int>(poses.size()) < n) {
    const double dist = uniform(env.distance_min, env.distance_max);
    const double tilt = deg(uniform(env.tilt_min, env.tilt_max));
    const double azimuth = uniform(0.0, 2.0 * kPi);
    const double roll = deg(uniform(-env.roll_max, env.roll_max));
    const double lx = uniform(-1.0, 1.0) * env.lateral_fraction * half_w * dist;
    const double ly = uniform(-1.0, 1.0) * env.lateral_fraction * half_h * dist;

    const Eigen::Matrix3d r =
        (Eigen::AngleAxisd(tilt, Eigen::Vector3d(std::cos(azimuth), std::sin(azimuth), 0.0)) *
         Eigen::AngleAxisd(roll, Eigen::Vector3d::UnitZ()))
            .toRotationMatrix();
    Pose pose;
    pose.rotation = rodrigues_from_matrix(r);
    pose.translation = lens_frame_to_scene(camera, Point3(lx, ly, -dist)) - r * center;

    bool ok = pose.rotation.norm() <= deg(kMaxTiltDeg);
    if (ok) {
      const auto obs = observe_pose(im, none, pose, pts, 0);
      std::vector<int> count(pts.size(), 0);
      for (const auto& o : obs) ++count[o.point_id];
      const auto seen = std::count_if(count.begin(), count.end(), [](int c) { return c >= 2; });
      ok = 2 * static_cast<std::size_t>(seen) >= pts.size();
    }
    if (ok) {
      poses.push_back(pose);
    } else if (++rejections > kMaxRejections) {
      throw Error(ErrorKind::EnvelopeInfeasible,
                  "no admissible pose after " + std::to_string(kMaxRejections) + " draws");
    }
  }
  return poses;
}

std::vector<Observation> synthesize_observations(const PhysicalCameraSpec& camera,
                                                 const BoardSpec& board,
                                                 std::span<const Pose> poses,
                                                 const DistortionParams& dist, double sigma,
                                                 std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw Error(ErrorKind::InvalidInput, "noise sigma must be non-negative");
  auto obs = noise_free(camera, board, poses, dist, true);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& o : obs) {
    const double zx = normal(rng);
    const double zy = normal(rng);
    o.px += sigma * zx;
    o.py += sigma * zy;
  }
  return obs;
}

std::vector<Observation> synthesize_observations_serial(const PhysicalCameraSpec& camera,
                                                        const BoardSpec& board,
                                                        std::span<const Pose> poses,
                                                        const DistortionParams& dist) {
  return noise_free(camera, board, poses, dist, false);
}

MlaMisalignmentSpec aligned_mla(const PhysicalCameraSpec& camera) {
  MlaMisalignmentSpec m;
  m.offset = camera.mla_origin;
  m.lens_pitch = camera.lens_pitch;
  m.sensor_gap = camera.sensor_origin.z() - camera.mla_origin.z();
  m.pixel_pitch = camera.pixel_pitch;
  m.sensor_origin = camera.sensor_origin.head<2>();
  return m;
}

MlaMisalignmentSpec misaligned_mla(const PhysicalCameraSpec& camera,
                                   const Eigen::Vector3d& rotation) {
  MlaMisalignmentSpec m = aligned_mla(camera);
  m.rotation = rotation;
  return m;
}

Eigen::Matrix3d misalignment_homography(const MlaMisalignmentSpec& aligned,
                                        const MlaMisalignmentSpec& misaligned) {
  Eigen::Matrix3d g = misaligned.label_to_pixel() * aligned.label_to_pixel().inverse();
  return g / g(2, 2);
}

Raster16 synthesize_white_image(const PhysicalCameraSpec& camera, const MlaMisalignmentSpec& mla,
                                const WhiteImageOptions& options) {
  return white_image(camera, mla, options, true);
}

Raster16 synthesize_white_image_serial(const PhysicalCameraSpec& camera,
                                       const MlaMisalignmentSpec& mla,
                                       const WhiteImageOptions& options) {
  return white_image(camera, mla, options, false);
}

}  // namespace plenocal
