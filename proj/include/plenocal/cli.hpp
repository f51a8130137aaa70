#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "plenocal/io.hpp"

namespace plenocal {

/// Stable process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitGeneration = 3,
  kExitCalibration = 4,
  kExitGaugeMismatch = 5,
  kExitDetection = 6,
};

/// Fully resolved parameters of one command. Built from defaults, then the
/// JSON file given by --config, then command-line flags.
struct RunConfig {
  std::string command;
  std::string config_path;
  std::string out_dir = ".";
  std::uint64_t seed = 1;
  double sigma = 0.0;
  int poses = 12;

  // simulate
  PhysicalCameraSpec camera;
  BoardSpec board;
  PoseEnvelope envelope;
  DistortionParams distortion;  ///< injected coefficients; centers follow the intrinsics
  Eigen::Vector3d mla_rotation_deg = Eigen::Vector3d::Zero();
  bool white_image = false;

  // calibrate / rectify
  std::string observations_path;
  std::string white_image_path;
  std::string centers_path;
  std::optional<double> fixed_fprime;
  bool optimize_distortion = true;
  bool optimize_xy_distortion = true;
  bool optimize_centers = false;
  int max_iterations = 200;

  // evaluate
  std::string result_path;
  std::string ground_truth_path;
};

Json to_json(const RunConfig& config);

/// Applies the keys of a config file on top of `config`.
void apply_config_json(const Json& j, RunConfig& config);

int cmd_simulate(const RunConfig& config, std::ostream& log);
int cmd_rectify(const RunConfig& config, std::ostream& log);
int cmd_calibrate(const RunConfig& config, std::ostream& log);
int cmd_evaluate(const RunConfig& config, std::ostream& log);

/// Per-parameter and pose errors of a result against the simulator's truth.
/// Throws Error(InvalidInput) when the two use different decode settings or
/// pose counts.
Json evaluate_result(const CalibrationResult& result, const GroundTruth& truth);

/// Entry point of the executable; returns the exit code.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace plenocal
