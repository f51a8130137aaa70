#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <utility>
#include <vector>

#include "plenocal/image.hpp"
#include "plenocal/projection.hpp"
#include "plenocal/rectification.hpp"
#include "plenocal/tpp_core.hpp"

namespace plenocal {

/// Thin main lens at z = 0 with light travelling towards +z; the MLA and the
/// sensor sit at z = Z_oa and z = Z_os. Lengths in millimetres. Sensor pixel
/// (x, y) is at (X_os + x p, Y_os + y p, Z_os) for pixel pitch p, and lens
/// (i, j) is centered at (X_oa + i d_m, Y_oa + j d_m, Z_oa).
struct PhysicalCameraSpec {
  double main_focal = 50.0;
  Eigen::Vector3d sensor_origin = Eigen::Vector3d(-18.036, -12.024, 73.27);
  Eigen::Vector3d mla_origin = Eigen::Vector3d(0.05, -0.03, 70.0);
  double pixel_pitch = 0.009;
  int width = 4008;
  int height = 2672;
  double lens_pitch = 0.3;
  double mla_focal = 2.726;  ///< informational; micro-lenses are modelled as pinholes
  double micro_image_radius = 15.5;  ///< pixels

  void validate() const;
  /// Distance between neighbouring micro-image centers, pixels.
  double micro_image_pitch() const;
  /// MLA-to-sensor gap in pixels.
  double nominal_gap() const;
};

struct BoardSpec {
  int rows = 5;
  int cols = 5;
  double cell_width = 54.0;  ///< mm
  double cell_height = 54.0;

  void validate() const;
  /// Grid points (r w, c h, 0) in pixel units, id = r * cols + c.
  std::vector<Point3> points(double pixel_pitch) const;
};

/// Sampling ranges for board poses. Distances are measured from the main lens
/// along its axis, in millimetres; angles in degrees.
struct PoseEnvelope {
  double distance_min = 800.0;
  double distance_max = 1100.0;
  double tilt_min = 5.0;
  double tilt_max = 35.0;
  double roll_max = 20.0;
  double lateral_fraction = 0.25;  ///< of the half field of view at that distance

  void validate() const;
};

/// Ray-traced TPPs of the camera in pixel units. `first` is the in-camera
/// frame (sensor plane to MLA plane, z from sensor towards MLA); `second` the
/// scene-side frame, a point reflection of the main-lens frame about the
/// sensor's conjugate origin, so that all scales and the separation are
/// positive. Each TppParams maps (pixel, lens label) to its frame's planes,
/// with its separation in f_prime.
std::pair<TppParams, TppParams> physical_to_tpp(const PhysicalCameraSpec& spec);

/// Scene-frame intrinsics implied by `physical_to_tpp(spec).second`.
Intrinsics ground_truth_intrinsics(const PhysicalCameraSpec& spec);

/// Main-lens center in the scene TPP frame (pixel units).
Point3 main_lens_center(const PhysicalCameraSpec& spec);

/// Decode setting used unless overridden: unit pixel scale, micro-image pitch,
/// image-center offsets and the nominal MLA gap.
TppParams default_decode_setting(const PhysicalCameraSpec& spec);

/// Micro-image center of lens (i, j) for the aligned camera, pixels.
Eigen::Vector2d micro_image_center(const PhysicalCameraSpec& spec, int i, int j);

/// Scene TPP frame coordinates (pixel units) of a main-lens frame point (mm).
Point3 lens_frame_to_scene(const PhysicalCameraSpec& spec, const Point3& p_mm);

std::vector<Pose> generate_poses(int n, std::uint64_t seed, const PoseEnvelope& envelope,
                                 const PhysicalCameraSpec& camera, const BoardSpec& board);

/// Pose with the board facing the camera, centered on the axis.
Pose frontal_pose(const PhysicalCameraSpec& camera, const BoardSpec& board, double distance_mm);

/// Noise-free and noisy observations of every board point in every micro-image
/// that contains it. Noise is sigma * z with z drawn in canonical order from
/// one generator, so runs with equal seeds share z across sigma.
std::vector<Observation> synthesize_observations(const PhysicalCameraSpec& camera,
                                                 const BoardSpec& board,
                                                 std::span<const Pose> poses,
                                                 const DistortionParams& dist, double sigma,
                                                 std::uint64_t seed);

/// Single-threaded reference of the noise-free part.
std::vector<Observation> synthesize_observations_serial(const PhysicalCameraSpec& camera,
                                                        const BoardSpec& board,
                                                        std::span<const Pose> poses,
                                                        const DistortionParams& dist);

/// MLA geometry of the aligned camera.
MlaMisalignmentSpec aligned_mla(const PhysicalCameraSpec& camera);

/// Same MLA rotated by `rotation` (Rodrigues, radians) about its reference lens.
MlaMisalignmentSpec misaligned_mla(const PhysicalCameraSpec& camera,
                                   const Eigen::Vector3d& rotation);

/// Sensor-plane map taking aligned micro-image centers to misaligned ones.
Eigen::Matrix3d misalignment_homography(const MlaMisalignmentSpec& aligned,
                                        const MlaMisalignmentSpec& misaligned);

struct WhiteImageOptions {
  double background = 2000.0;
  double peak = 60000.0;
};

/// Gaussian discs (sigma = radius / 3, cut at the radius) at every micro-image center.
Raster16 synthesize_white_image(const PhysicalCameraSpec& camera, const MlaMisalignmentSpec& mla,
                                const WhiteImageOptions& options = {});

Raster16 synthesize_white_image_serial(const PhysicalCameraSpec& camera,
                                       const MlaMisalignmentSpec& mla,
                                       const WhiteImageOptions& options = {});

}  // namespace plenocal
