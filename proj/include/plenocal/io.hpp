#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "plenocal/calibration.hpp"
#include "plenocal/rectification.hpp"
#include "plenocal/simulator.hpp"

namespace plenocal {

using Json = nlohmann::ordered_json;

struct SensorInfo {
  int width = 0;
  int height = 0;
  double pixel_pitch_mm = 0.0;
  double micro_image_pitch_px = 0.0;
  double nominal_gap_px = 0.0;
};

struct ObservationFile {
  BoardSpec board;
  SensorInfo sensor;
  std::vector<Observation> observations;  ///< sorted by pose, then as generated
};

/// Everything the simulator knew, for `evaluate`.
struct GroundTruth {
  PhysicalCameraSpec camera;
  BoardSpec board;
  Intrinsics intr;
  TppParams setting;
  TppParams transform;  ///< decode_transform(intr, setting)
  DistortionParams dist;
  std::vector<Pose> poses;
  Eigen::Vector3d mla_rotation = Eigen::Vector3d::Zero();
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

/// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

/// Fixed-precision number formatting shared by text outputs.
std::string format_number(double v, int precision = 9);

SensorInfo sensor_info(const PhysicalCameraSpec& camera);

Json to_json(const ObservationFile& file);
ObservationFile observations_from_json(const Json& j);

Json to_json(const Intrinsics& intr);
Json to_json(const TppParams& p);
Json to_json(const DistortionParams& d);
Json to_json(const Pose& p);
Json to_json(const PhysicalCameraSpec& camera);
Json to_json(const BoardSpec& board);
Intrinsics intrinsics_from_json(const Json& j);
TppParams tpp_from_json(const Json& j);
DistortionParams distortion_from_json(const Json& j);
Pose pose_from_json(const Json& j);
PhysicalCameraSpec camera_from_json(const Json& j, PhysicalCameraSpec base = {});
BoardSpec board_from_json(const Json& j, BoardSpec base = {});
PoseEnvelope envelope_from_json(const Json& j, PoseEnvelope base = {});

Json to_json(const GroundTruth& gt);
GroundTruth ground_truth_from_json(const Json& j);

Json to_json(const CalibrationResult& result);
/// Reads back the parts of a result that `evaluate` needs.
CalibrationResult result_from_json(const Json& j);

Json to_json(std::span<const MicroImageCenter> centers);
std::vector<MicroImageCenter> centers_from_json(const Json& j);
Json to_json(const RectifyingHomography& h);

/// Columns pose_id, point_id, i, j, dx, dy in canonical observation order.
std::string residual_csv(std::span<const Observation> obs, const ResidualSet& res);

/// Parameter table with linear and refined columns, then the residual histogram.
std::string format_report(const CalibrationResult& result);

/// Parses a JSON file, raising InvalidInput with the path on failure.
Json load_json(const std::string& path);

}  // namespace plenocal
