#pragma once

#include <Eigen/Core>
#include <span>
#include <utility>
#include <vector>

#include "plenocal/image.hpp"
#include "plenocal/projection.hpp"

namespace plenocal {

/// Pose of the micro-lens array relative to the main lens, in millimetres.
/// Lens (i, j) sits at R (i d_m, j d_m, 0) + offset; the sensor lies a gap
/// `sensor_gap` behind the reference lens, and pixel (0, 0) is at metric
/// position `sensor_origin` on it.
struct MlaMisalignmentSpec {
  Eigen::Vector3d rotation = Eigen::Vector3d::Zero();  ///< Rodrigues vector
  Eigen::Vector3d offset = Eigen::Vector3d(0.0, 0.0, 1.0);  ///< (x_m, y_m, L)
  double lens_pitch = 1.0;
  double sensor_gap = 1.0;
  double pixel_pitch = 1.0;
  Eigen::Vector2d sensor_origin = Eigen::Vector2d::Zero();

  void validate() const;
  /// 3x3 map from homogeneous lens label (i, j, 1) to the micro-image center in pixels.
  Eigen::Matrix3d label_to_pixel() const;
};

struct MicroImageCenter {
  int i = 0;
  int j = 0;
  Eigen::Vector2d center = Eigen::Vector2d::Zero();  ///< pixels
};

struct DetectionOptions {
  double background_percentile = 0.2;
  double peak_fraction = 0.5;  ///< of (max - background) above background
  double window_radius = 0.6;  ///< in pitches
  int centroid_iterations = 2;
};

/// Micro-image centers of a white image, labelled by a lattice walk from the
/// blob nearest the image center (label (0, 0)).
std::vector<MicroImageCenter> detect_centers(const Raster16& white, double expected_pitch,
                                             const DetectionOptions& options = {});

/// Single-threaded reference of `detect_centers`.
std::vector<MicroImageCenter> detect_centers_serial(const Raster16& white, double expected_pitch,
                                                    const DetectionOptions& options = {});

MicroImageCenter project_center(const MlaMisalignmentSpec& spec, int i, int j);

/// Total-least-squares slope of every row (same j) holding at least 10 centers.
std::vector<std::pair<int, double>> row_slopes(std::span<const MicroImageCenter> centers);

/// max - min of the slopes.
double slope_range(std::span<const std::pair<int, double>> slopes);

struct RectifyingHomography {
  Eigen::Matrix3d h = Eigen::Matrix3d::Identity();  ///< h(2, 2) = 1
  double pitch = 0.0;                               ///< fitted ideal-grid pitch
  Eigen::Vector2d origin = Eigen::Vector2d::Zero(); ///< ideal position of label (0, 0)
  double rms = 0.0;                                 ///< mapping residual, pixels
};

/// Normalized DLT from detected centers to the uniform grid origin + (i p, j p).
RectifyingHomography estimate_rectifying_homography(std::span<const MicroImageCenter> centers,
                                                    double pitch_hint = 0.0);

/// Plain normalized DLT between point lists (at least 4 correspondences).
Eigen::Matrix3d fit_homography(std::span<const Eigen::Vector2d> from,
                               std::span<const Eigen::Vector2d> to);

Eigen::Vector2d apply_homography(const Eigen::Matrix3d& h, const Eigen::Vector2d& p);

std::vector<Observation> rectify_observations(std::span<const Observation> obs,
                                              const Eigen::Matrix3d& h);

std::vector<MicroImageCenter> rectify_centers(std::span<const MicroImageCenter> centers,
                                              const Eigen::Matrix3d& h);

/// Inverse-mapped bilinear warp of a raster, for visual inspection.
Raster16 warp_image(const Raster16& image, const Eigen::Matrix3d& h);

}  // namespace plenocal
