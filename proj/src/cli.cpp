#include "plenocal/cli.hpp"

#include <omp.h>

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "plenocal/errors.hpp"
#include "plenocal/image.hpp"
#include "plenocal/rotation.hpp"

namespace plenocal {

namespace {

constexpr double kDeg = 3.14159265358979323846 / 180.0;

std::string out_path(const RunConfig& c, const std::string& name) {
  return (std::filesystem::path(c.out_dir) / name).string();
}

void write_json(const std::string& path, const Json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

void write_run_config(const RunConfig& c) { write_json(out_path(c, "run_config.json"), to_json(c)); }

void write_pgm_atomic(const std::string& path, const Raster16& image) {
  const std::string tmp = path + ".tmp";
  write_pgm(tmp, image);
  std::filesystem::rename(tmp, path);
}

TppParams decode_setting_for(const SensorInfo& s, const std::optional<double>& fixed_fprime) {
  TppParams t;
  t.k_x = t.k_y = 1.0;
  t.k_u = t.k_v = s.micro_image_pitch_px;
  t.u_0 = 0.5 * (s.width - 1.0);
  t.v_0 = 0.5 * (s.height - 1.0);
  t.f_prime = t.f = fixed_fprime ? *fixed_fprime : s.nominal_gap_px;
  return t;
}

Json relative_error(double estimate, double truth) {
  const double abs_err = std::abs(estimate - truth);
  return {{"estimate", estimate},
          {"truth", truth},
          {"relative_error", truth != 0.0 ? abs_err / std::abs(truth) : abs_err}};
}

bool close(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(b)); }

}  // namespace

Json to_json(const RunConfig& c) {
  Json j;
  j["command"] = c.command;
  j["config_path"] = c.config_path;
  j["out_dir"] = c.out_dir;
  j["seed"] = c.seed;
  j["sigma"] = c.sigma;
  j["poses"] = c.poses;
  j["camera"] = to_json(c.camera);
  j["board"] = to_json(c.board);
  j["envelope"] = {{"distance_min_mm", c.envelope.distance_min},
                   {"distance_max_mm", c.envelope.distance_max},
                   {"tilt_min_deg", c.envelope.tilt_min},
                   {"tilt_max_deg", c.envelope.tilt_max},
                   {"roll_max_deg", c.envelope.roll_max},
                   {"lateral_fraction", c.envelope.lateral_fraction}};
  j["distortion"] = {{"s1", c.distortion.s1},
                     {"s2", c.distortion.s2},
                     {"t1", c.distortion.t1},
                     {"t2", c.distortion.t2}};
  j["mla_rotation_deg"] = {c.mla_rotation_deg.x(), c.mla_rotation_deg.y(), c.mla_rotation_deg.z()};
  j["white_image"] = c.white_image;
  j["observations"] = c.observations_path;
  j["white_image_path"] = c.white_image_path;
  j["centers"] = c.centers_path;
  j["fixed_fprime"] = c.fixed_fprime ? Json(*c.fixed_fprime) : Json(nullptr);
  j["optimize_distortion"] = c.optimize_distortion;
  j["distortion_planes"] = c.optimize_xy_distortion ? "both" : "uv";
  j["optimize_distortion_centers"] = c.optimize_centers;
  j["max_iterations"] = c.max_iterations;
  j["result"] = c.result_path;
  j["ground_truth"] = c.ground_truth_path;
  return j;
}

void apply_config_json(const Json& j, RunConfig& c) {
  try {
    if (!j.is_object()) throw Error(ErrorKind::InvalidInput, "config must be a JSON object");
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("sigma")) c.sigma = j.at("sigma").get<double>();
    if (j.contains("poses")) c.poses = j.at("poses").get<int>();
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("camera")) c.camera = camera_from_json(j.at("camera"), c.camera);
    if (j.contains("board")) c.board = board_from_json(j.at("board"), c.board);
    if (j.contains("envelope")) c.envelope = envelope_from_json(j.at("envelope"), c.envelope);
    if (j.contains("distortion")) {
      const DistortionParams d = distortion_from_json(j.at("distortion"));
      c.distortion.s1 = d.s1;
      c.distortion.s2 = d.s2;
      c.distortion.t1 = d.t1;
      c.distortion.t2 = d.t2;
    }
    if (j.contains("mla_rotation_deg")) {
      const Json& r = j.at("mla_rotation_deg");
      c.mla_rotation_deg = Eigen::Vector3d(r.at(0).get<double>(), r.at(1).get<double>(),
                                           r.at(2).get<double>());
    }
    if (j.contains("white_image")) c.white_image = j.at("white_image").get<bool>();
    if (j.contains("observations")) c.observations_path = j.at("observations").get<std::string>();
    if (j.contains("white_image_path")) {
      c.white_image_path = j.at("white_image_path").get<std::string>();
    }
    if (j.contains("centers")) c.centers_path = j.at("centers").get<std::string>();
    if (j.contains("fixed_fprime") && !j.at("fixed_fprime").is_null()) {
      c.fixed_fprime = j.at("fixed_fprime").get<double>();
    }
    if (j.contains("optimize_distortion")) {
      c.optimize_distortion = j.at("optimize_distortion").get<bool>();
    }
    if (j.contains("distortion_planes")) {
      const auto planes = j.at("distortion_planes").get<std::string>();
      if (planes != "both" && planes != "uv") {
        throw Error(ErrorKind::InvalidInput, "distortion_planes must be \"both\" or \"uv\"");
      }
      c.optimize_xy_distortion = planes == "both";
    }
    if (j.contains("optimize_distortion_centers")) {
      c.optimize_centers = j.at("optimize_distortion_centers").get<bool>();
    }
    if (j.contains("max_iterations")) c.max_iterations = j.at("max_iterations").get<int>();
    if (j.contains("result")) c.result_path = j.at("result").get<std::string>();
    if (j.contains("ground_truth")) c.ground_truth_path = j.at("ground_truth").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidInput, std::string("config: ") + e.what());
  }
}

int cmd_simulate(const RunConfig& c, std::ostream& log) {
  GroundTruth gt;
  try {
    if (c.poses < 1) throw Error(ErrorKind::InvalidInput, "--poses must be at least 1");
    if (!(c.sigma >= 0.0)) throw Error(ErrorKind::InvalidInput, "--sigma must be non-negative");
    c.camera.validate();
    c.board.validate();
    c.envelope.validate();
    gt.camera = c.camera;
    gt.board = c.board;
    gt.intr = ground_truth_intrinsics(c.camera);
    gt.setting = default_decode_setting(c.camera);
    gt.transform = decode_transform(gt.intr, gt.setting);
    gt.dist = default_distortion_centers(gt.intr, c.camera.width, c.camera.height);
    gt.dist.s1 = c.distortion.s1;
    gt.dist.s2 = c.distortion.s2;
    gt.dist.t1 = c.distortion.t1;
    gt.dist.t2 = c.distortion.t2;
    gt.mla_rotation = c.mla_rotation_deg;
    gt.sigma = c.sigma;
    gt.seed = c.seed;
  } catch (const Error& e) {
    log << "simulate: invalid configuration: " << e.what() << "\n";
    return kExitConfig;
  }
  write_run_config(c);

  ObservationFile file;
  try {
    gt.poses = generate_poses(c.poses, c.seed, c.envelope, c.camera, c.board);
    file.board = c.board;
    file.sensor = sensor_info(c.camera);
    file.observations =
        synthesize_observations(c.camera, c.board, gt.poses, gt.dist, c.sigma, c.seed);
    const MlaMisalignmentSpec mla = misaligned_mla(c.camera, c.mla_rotation_deg * kDeg);
    if (!c.mla_rotation_deg.isZero()) {
      const Eigen::Matrix3d g = misalignment_homography(aligned_mla(c.camera), mla);
      file.observations = rectify_observations(file.observations, g);
    }
    if (file.observations.empty()) log << "simulate: warning: no observations were generated\n";
    write_json(out_path(c, "observations.json"), to_json(file));
    write_json(out_path(c, "ground_truth.json"), to_json(gt));
    if (c.white_image) {
      write_pgm_atomic(out_path(c, "white.pgm"), synthesize_white_image(c.camera, mla));
    }
  } catch (const Error& e) {
    log << "simulate: generation failed: " << e.what() << "\n";
    return kExitGeneration;
  }
  log << "simulate: " << gt.poses.size() << " poses, " << file.observations.size()
      << " observations written to " << c.out_dir << "\n";
  return kExitOk;
}

int cmd_rectify(const RunConfig& c, std::ostream& log) {
  if (c.white_image_path.empty() && c.centers_path.empty()) {
    log << "rectify: need --white or --centers\n";
    return kExitConfig;
  }
  ObservationFile obs;
  double pitch = c.camera.micro_image_pitch();
  try {
    if (!c.observations_path.empty()) {
      obs = observations_from_json(load_json(c.observations_path));
      if (obs.sensor.micro_image_pitch_px > 0.0) pitch = obs.sensor.micro_image_pitch_px;
    }
  } catch (const Error& e) {
    log << "rectify: " << e.what() << "\n";
    return kExitConfig;
  }
  write_run_config(c);

  std::vector<MicroImageCenter> centers;
  RectifyingHomography h;
  double before = 0.0;
  double after = 0.0;
  try {
    if (!c.white_image_path.empty()) {
      centers = detect_centers(read_pgm(c.white_image_path), pitch);
    } else {
      centers = centers_from_json(load_json(c.centers_path));
    }
    h = estimate_rectifying_homography(centers, pitch);
    before = slope_range(row_slopes(centers));
    after = slope_range(row_slopes(rectify_centers(centers, h.h)));
  } catch (const Error& e) {
    log << "rectify: detection failed: " << e.what() << "\n";
    return kExitDetection;
  }

  try {
    write_json(out_path(c, "centers.json"), to_json(std::span<const MicroImageCenter>(centers)));
    Json hj = to_json(h);
    hj["slope_range_before"] = before;
    hj["slope_range_after"] = after;
    hj["centers"] = centers.size();
    write_json(out_path(c, "homography.json"), hj);
    if (!c.observations_path.empty()) {
      obs.observations = rectify_observations(obs.observations, h.h);
      write_json(out_path(c, "observations_rectified.json"), to_json(obs));
    }
  } catch (const Error& e) {
    log << "rectify: " << e.what() << "\n";
    return kExitConfig;
  }
  log << "rectify: " << centers.size() << " centers, slope range " << format_number(before, 6)
      << " -> " << format_number(after, 6) << ", mapping rms " << format_number(h.rms, 6)
      << " px\n";
  return kExitOk;
}

int cmd_calibrate(const RunConfig& c, std::ostream& log) {
  CalibrationInput input;
  try {
    if (c.observations_path.empty()) {
      throw Error(ErrorKind::InvalidInput, "--observations is required");
    }
    if (c.fixed_fprime && !(*c.fixed_fprime > 0.0)) {
      throw Error(ErrorKind::InvalidInput, "--fixed-fprime must be positive");
    }
    if (c.max_iterations < 0) throw Error(ErrorKind::InvalidInput, "max_iterations < 0");
    const ObservationFile file = observations_from_json(load_json(c.observations_path));
    if (!(file.sensor.pixel_pitch_mm > 0.0) || !(file.sensor.micro_image_pitch_px > 0.0) ||
        !(file.sensor.nominal_gap_px > 0.0) || file.sensor.width <= 0 || file.sensor.height <= 0) {
      throw Error(ErrorKind::InvalidInput, "observation file lacks sensor information");
    }
    file.board.validate();
    input.observations = file.observations;
    input.board = file.board.points(file.sensor.pixel_pitch_mm);
    input.setting = decode_setting_for(file.sensor, c.fixed_fprime);
    input.image_width = file.sensor.width;
    input.image_height = file.sensor.height;
  } catch (const Error& e) {
    log << "calibrate: " << e.what() << "\n";
    return kExitConfig;
  }
  write_run_config(c);

  RefineOptions options;
  options.optimize_distortion = c.optimize_distortion;
  options.optimize_xy_distortion = c.optimize_xy_distortion;
  options.optimize_centers = c.optimize_centers;
  options.max_iterations = c.max_iterations;

  CalibrationResult result;
  ResidualSet res;
  try {
    result = calibrate(input, options);
    res = residuals(input.observations, input.board, result.poses, result.intr, result.dist);
  } catch (const Error& e) {
    log << "calibrate: calibration failed: " << e.what() << "\n";
    return kExitCalibration;
  }

  const std::string report = format_report(result);
  std::ostringstream log_text;
  for (const auto& line : result.refinement.log) log_text << line << "\n";
  try {
    write_json(out_path(c, "result.json"), to_json(result));
    write_file_atomic(out_path(c, "residuals.csv"), residual_csv(input.observations, res));
    write_file_atomic(out_path(c, "report.txt"), report);
    write_file_atomic(out_path(c, "calibrate.log"), log_text.str());
  } catch (const Error& e) {
    log << "calibrate: " << e.what() << "\n";
    return kExitConfig;
  }
  log << log_text.str() << report;
  return kExitOk;
}

Json evaluate_result(const CalibrationResult& r, const GroundTruth& gt) {
  const TppParams& a = r.setting;
  const TppParams& b = gt.setting;
  if (!close(a.k_x, b.k_x) || !close(a.k_u, b.k_u) || !close(a.u_0, b.u_0) ||
      !close(a.v_0, b.v_0) || !close(a.f_prime, b.f_prime)) {
    throw Error(ErrorKind::InvalidInput, "result and ground truth use different decode settings");
  }
  if (r.poses.size() != gt.poses.size()) {
    throw Error(ErrorKind::InvalidInput, "result and ground truth have different pose counts");
  }

  const TppParams est = decode_transform(r.intr, r.setting);
  const TppParams& tru = gt.transform;
  Json j;
  j["gauge_mapped"] = {{"k_xy", relative_error(est.k_x, tru.k_x)},
                       {"k_uv", relative_error(est.k_u, tru.k_u)},
                       {"u_0", relative_error(est.u_0, tru.u_0)},
                       {"v_0", relative_error(est.v_0, tru.v_0)},
                       {"f", relative_error(est.f, tru.f)}};
  j["scene"] = {{"k_xy", relative_error(r.intr.k_xy, gt.intr.k_xy)},
                {"k_uv", relative_error(r.intr.k_uv, gt.intr.k_uv)},
                {"u_0", relative_error(r.intr.u_0, gt.intr.u_0)},
                {"v_0", relative_error(r.intr.v_0, gt.intr.v_0)},
                {"f", relative_error(r.intr.f, gt.intr.f)}};
  j["distortion"] = {{"s1", relative_error(r.dist.s1, gt.dist.s1)},
                     {"s2", relative_error(r.dist.s2, gt.dist.s2)},
                     {"t1", relative_error(r.dist.t1, gt.dist.t1)},
                     {"t2", relative_error(r.dist.t2, gt.dist.t2)}};
  Json poses = Json::array();
  double max_rot = 0.0;
  double max_trans = 0.0;
  for (std::size_t k = 0; k < r.poses.size(); ++k) {
    const Eigen::Matrix3d d = r.poses[k].matrix() * gt.poses[k].matrix().transpose();
    const double angle = Eigen::AngleAxisd(d).angle();
    const double trans = (r.poses[k].translation - gt.poses[k].translation).norm() /
                         gt.poses[k].translation.norm();
    max_rot = std::max(max_rot, angle);
    max_trans = std::max(max_trans, trans);
    poses.push_back({{"id", k}, {"rotation_error_rad", angle}, {"translation_error", trans}});
  }
  j["poses"] = poses;
  j["max_rotation_error_rad"] = max_rot;
  j["max_translation_error"] = max_trans;
  j["rms"] = r.rms;
  return j;
}

int cmd_evaluate(const RunConfig& c, std::ostream& log) {
  CalibrationResult result;
  GroundTruth gt;
  try {
    if (c.result_path.empty() || c.ground_truth_path.empty()) {
      throw Error(ErrorKind::InvalidInput, "--result and --ground-truth are required");
    }
    result = result_from_json(load_json(c.result_path));
    gt = ground_truth_from_json(load_json(c.ground_truth_path));
  } catch (const Error& e) {
    log << "evaluate: " << e.what() << "\n";
    return kExitConfig;
  }
  write_run_config(c);

  Json metrics;
  try {
    metrics = evaluate_result(result, gt);
  } catch (const Error& e) {
    log << "evaluate: gauge mismatch: " << e.what() << "\n";
    return kExitGaugeMismatch;
  }
  try {
    write_json(out_path(c, "metrics.json"), metrics);
  } catch (const Error& e) {
    log << "evaluate: " << e.what() << "\n";
    return kExitConfig;
  }
  for (const char* name : {"k_xy", "k_uv", "u_0", "v_0", "f"}) {
    log << "  " << name << " relative error "
        << format_number(metrics["gauge_mapped"][name]["relative_error"].get<double>(), 6)
        << "\n";
  }
  log << "  max rotation error " << format_number(metrics["max_rotation_error_rad"].get<double>(), 6)
      << " rad, max translation error "
      << format_number(metrics["max_translation_error"].get<double>(), 6) << "\n";
  return kExitOk;
}

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Plenoptic camera calibration with the two-parallel-plane ray model"};
  app.require_subcommand(1);

  struct Flags {
    std::string config, out;
    std::uint64_t seed = 0;
    double sigma = 0.0;
    int poses = 0;
    bool centers = false;
    double fprime = 0.0;
    bool white = false;
    std::string observations, white_path, centers_path, result, truth;
  } f;

  std::vector<std::pair<CLI::App*, std::vector<CLI::Option*>>> subs;
  const auto common = [&](CLI::App* s) {
    std::vector<CLI::Option*> o;
    o.push_back(s->add_option("--config", f.config, "JSON config file"));
    o.push_back(s->add_option("--seed", f.seed, "random seed"));
    o.push_back(s->add_option("--sigma", f.sigma, "pixel noise standard deviation"));
    o.push_back(s->add_option("--poses", f.poses, "number of board poses"));
    o.push_back(s->add_option("--out", f.out, "output directory"));
    o.push_back(s->add_flag("--optimize-distortion-centers", f.centers,
                            "refine the distortion centers too"));
    o.push_back(s->add_option("--fixed-fprime", f.fprime, "decode-setting plane separation, px"));
    return o;
  };

  CLI::App* sim = app.add_subcommand("simulate", "generate observations and ground truth");
  auto sim_opts = common(sim);
  sim->add_flag("--white-image", f.white, "also render white.pgm");
  CLI::App* rect = app.add_subcommand("rectify", "detect micro-image centers and rectify");
  auto rect_opts = common(rect);
  rect->add_option("--white", f.white_path, "white image (PGM)");
  rect->add_option("--centers", f.centers_path, "centers JSON instead of a white image");
  rect->add_option("--observations", f.observations, "observations to rectify");
  CLI::App* cal = app.add_subcommand("calibrate", "calibrate from an observation file");
  auto cal_opts = common(cal);
  cal->add_option("--observations,observations", f.observations, "observation file");
  CLI::App* ev = app.add_subcommand("evaluate", "compare a result with ground truth");
  auto ev_opts = common(ev);
  ev->add_option("--result", f.result, "result.json from calibrate");
  ev->add_option("--ground-truth", f.truth, "ground_truth.json from simulate");
  subs = {{sim, sim_opts}, {rect, rect_opts}, {cal, cal_opts}, {ev, ev_opts}};

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    return kExitConfig;
  }

  RunConfig c;
  std::vector<CLI::Option*> given;
  for (auto& [s, opts] : subs) {
    if (s->parsed()) {
      c.command = s->get_name();
      given = opts;
    }
  }
  const auto set = [&](int k) { return given[k]->count() > 0; };

  try {
    if (set(0)) {
      c.config_path = f.config;
      apply_config_json(load_json(f.config), c);
    }
    if (set(1)) c.seed = f.seed;
    if (set(2)) c.sigma = f.sigma;
    if (set(3)) c.poses = f.poses;
    if (set(4)) c.out_dir = f.out;
    if (set(5)) c.optimize_centers = true;
    if (set(6)) c.fixed_fprime = f.fprime;
    if (f.white) c.white_image = true;
    if (!f.observations.empty()) c.observations_path = f.observations;
    if (!f.white_path.empty()) c.white_image_path = f.white_path;
    if (!f.centers_path.empty()) c.centers_path = f.centers_path;
    if (!f.result.empty()) c.result_path = f.result;
    if (!f.truth.empty()) c.ground_truth_path = f.truth;

    if (const char* env = std::getenv("PLENOCAL_THREADS")) {
      char* end = nullptr;
      const long n = std::strtol(env, &end, 10);
      if (end == env || *end != '\0' || n < 1) {
        throw Error(ErrorKind::InvalidInput, "PLENOCAL_THREADS must be a positive integer");
      }
      omp_set_num_threads(static_cast<int>(std::min<long>(n, omp_get_max_threads())));
    }
    std::filesystem::create_directories(c.out_dir);
  } catch (const Error& e) {
    err << c.command << ": " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::filesystem::filesystem_error& e) {
    err << c.command << ": " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (c.command == "simulate") return cmd_simulate(c, out);
    if (c.command == "rectify") return cmd_rectify(c, out);
    if (c.command == "calibrate") return cmd_calibrate(c, out);
    return cmd_evaluate(c, out);
  } catch (const Error& e) {
    err << c.command << ": " << e.what() << "\n";
    return kExitConfig;
  }
}

}  // namespace plenocal
