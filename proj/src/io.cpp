#include "plenocal/io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "plenocal/errors.hpp"

namespace plenocal {

namespace {

Json vec(const Eigen::Ref<const Eigen::VectorXd>& v) {
  Json a = Json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) a.push_back(v(k));
  return a;
}

template <int N>
Eigen::Matrix<double, N, 1> vec_from(const Json& j, const char* what) {
  if (!j.is_array() || j.size() != N) {
    throw Error(ErrorKind::InvalidInput, std::string("expected ") + std::to_string(N) +
                                             "-vector for " + what);
  }
  Eigen::Matrix<double, N, 1> v;
  for (int k = 0; k < N; ++k) v(k) = j[k].get<double>();
  return v;
}

Json mat(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vec(m.row(r).transpose()));
  return rows;
}

template <typename T>
void read_opt(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

/// Wraps nlohmann exceptions so callers only ever see plenocal::Error.
template <typename F>
auto guarded(const char* what, F&& f) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidInput, std::string(what) + ": " + e.what());
  }
}

}  // namespace

void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::InvalidInput, "cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw Error(ErrorKind::InvalidInput, "failed writing " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) throw Error(ErrorKind::InvalidInput, "cannot rename onto " + path + ": " + ec.message());
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::InvalidInput, "cannot open " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string format_number(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

Json load_json(const std::string& path) {
  const std::string text = read_file(path);
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidInput, path + ": " + e.what());
  }
}

SensorInfo sensor_info(const PhysicalCameraSpec& camera) {
  return {camera.width, camera.height, camera.pixel_pitch, camera.micro_image_pitch(),
          camera.nominal_gap()};
}

Json to_json(const BoardSpec& board) {
  return {{"rows", board.rows},
          {"cols", board.cols},
          {"cell_mm", {board.cell_width, board.cell_height}}};
}

BoardSpec board_from_json(const Json& j, BoardSpec b) {
  return guarded("board", [&] {
    read_opt(j, "rows", b.rows);
    read_opt(j, "cols", b.cols);
    if (j.contains("cell_mm")) {
      const Json& c = j.at("cell_mm");
      if (c.is_number()) {
        b.cell_width = b.cell_height = c.get<double>();
      } else {
        const Eigen::Vector2d v = vec_from<2>(c, "cell_mm");
        b.cell_width = v.x();
        b.cell_height = v.y();
      }
    }
    return b;
  });
}

Json to_json(const ObservationFile& file) {
  Json j;
  j["board"] = to_json(file.board);
  j["sensor"] = {{"width", file.sensor.width},
                 {"height", file.sensor.height},
                 {"pixel_pitch_mm", file.sensor.pixel_pitch_mm},
                 {"micro_image_pitch_px", file.sensor.micro_image_pitch_px},
                 {"nominal_gap_px", file.sensor.nominal_gap_px}};
  std::map<int, Json> by_pose;
  for (const auto& o : file.observations) {
    auto& arr = by_pose[o.pose_id];
    arr.push_back({{"point_id", o.point_id},
                   {"lens", {o.lens_i, o.lens_j}},
                   {"pixel", {o.px, o.py}}});
  }
  Json poses = Json::array();
  for (auto& [id, arr] : by_pose) {
    poses.push_back({{"id", id}, {"observations", arr.is_null() ? Json::array() : arr}});
  }
  j["poses"] = poses;
  return j;
}

ObservationFile observations_from_json(const Json& j) {
  return guarded("observations", [&] {
    ObservationFile f;
    f.board = board_from_json(j.at("board"));
    if (j.contains("sensor")) {
      const Json& s = j.at("sensor");
      read_opt(s, "width", f.sensor.width);
      read_opt(s, "height", f.sensor.height);
      read_opt(s, "pixel_pitch_mm", f.sensor.pixel_pitch_mm);
      read_opt(s, "micro_image_pitch_px", f.sensor.micro_image_pitch_px);
      read_opt(s, "nominal_gap_px", f.sensor.nominal_gap_px);
    }
    for (const Json& p : j.at("poses")) {
      const int id = p.at("id").get<int>();
      for (const Json& o : p.at("observations")) {
        Observation ob;
        ob.pose_id = id;
        ob.point_id = o.at("point_id").get<int>();
        ob.lens_i = o.at("lens").at(0).get<int>();
        ob.lens_j = o.at("lens").at(1).get<int>();
        ob.px = o.at("pixel").at(0).get<double>();
        ob.py = o.at("pixel").at(1).get<double>();
        f.observations.push_back(ob);
      }
    }
    return f;
  });
}

Json to_json(const Intrinsics& i) {
  return {{"k_xy", i.k_xy}, {"k_uv", i.k_uv}, {"u_0", i.u_0}, {"v_0", i.v_0}, {"f", i.f}};
}

Intrinsics intrinsics_from_json(const Json& j) {
  return guarded("intrinsics", [&] {
    return Intrinsics{j.at("k_xy").get<double>(), j.at("k_uv").get<double>(),
                      j.at("u_0").get<double>(), j.at("v_0").get<double>(),
                      j.at("f").get<double>()};
  });
}

Json to_json(const TppParams& p) {
  return {{"k_x", p.k_x}, {"k_y", p.k_y}, {"k_u", p.k_u},         {"k_v", p.k_v},
          {"u_0", p.u_0}, {"v_0", p.v_0}, {"f_prime", p.f_prime}, {"f", p.f}};
}

TppParams tpp_from_json(const Json& j) {
  return guarded("tpp", [&] {
    TppParams p;
    read_opt(j, "k_x", p.k_x);
    read_opt(j, "k_y", p.k_y);
    read_opt(j, "k_u", p.k_u);
    read_opt(j, "k_v", p.k_v);
    read_opt(j, "u_0", p.u_0);
    read_opt(j, "v_0", p.v_0);
    read_opt(j, "f_prime", p.f_prime);
    read_opt(j, "f", p.f);
    return p;
  });
}

Json to_json(const DistortionParams& d) {
  return {{"s1", d.s1},   {"s2", d.s2},   {"t1", d.t1},   {"t2", d.t2},
          {"x_c", d.x_c}, {"y_c", d.y_c}, {"u_c", d.u_c}, {"v_c", d.v_c}};
}

DistortionParams distortion_from_json(const Json& j) {
  return guarded("distortion", [&] {
    DistortionParams d;
    read_opt(j, "s1", d.s1);
    read_opt(j, "s2", d.s2);
    read_opt(j, "t1", d.t1);
    read_opt(j, "t2", d.t2);
    read_opt(j, "x_c", d.x_c);
    read_opt(j, "y_c", d.y_c);
    read_opt(j, "u_c", d.u_c);
    read_opt(j, "v_c", d.v_c);
    return d;
  });
}

Json to_json(const Pose& p) {
  return {{"rotation", vec(p.rotation)}, {"translation", vec(p.translation)}};
}

Pose pose_from_json(const Json& j) {
  return guarded("pose", [&] {
    Pose p;
    p.rotation = vec_from<3>(j.at("rotation"), "rotation");
    p.translation = vec_from<3>(j.at("translation"), "translation");
    return p;
  });
}

Json to_json(const PhysicalCameraSpec& c) {
  return {{"main_focal_mm", c.main_focal},
          {"sensor_origin_mm", vec(c.sensor_origin)},
          {"mla_origin_mm", vec(c.mla_origin)},
          {"pixel_pitch_mm", c.pixel_pitch},
          {"resolution", {c.width, c.height}},
          {"lens_pitch_mm", c.lens_pitch},
          {"mla_focal_mm", c.mla_focal},
          {"micro_image_radius_px", c.micro_image_radius}};
}

PhysicalCameraSpec camera_from_json(const Json& j, PhysicalCameraSpec c) {
  return guarded("camera", [&] {
    read_opt(j, "main_focal_mm", c.main_focal);
    if (j.contains("sensor_origin_mm")) {
      c.sensor_origin = vec_from<3>(j.at("sensor_origin_mm"), "sensor_origin_mm");
    }
    if (j.contains("mla_origin_mm")) {
      c.mla_origin = vec_from<3>(j.at("mla_origin_mm"), "mla_origin_mm");
    }
    read_opt(j, "pixel_pitch_mm", c.pixel_pitch);
    if (j.contains("resolution")) {
      c.width = j.at("resolution").at(0).get<int>();
      c.height = j.at("resolution").at(1).get<int>();
    }
    read_opt(j, "lens_pitch_mm", c.lens_pitch);
    read_opt(j, "mla_focal_mm", c.mla_focal);
    read_opt(j, "micro_image_radius_px", c.micro_image_radius);
    return c;
  });
}

PoseEnvelope envelope_from_json(const Json& j, PoseEnvelope e) {
  return guarded("envelope", [&] {
    read_opt(j, "distance_min_mm", e.distance_min);
    read_opt(j, "distance_max_mm", e.distance_max);
    read_opt(j, "tilt_min_deg", e.tilt_min);
    read_opt(j, "tilt_max_deg", e.tilt_max);
    read_opt(j, "roll_max_deg", e.roll_max);
    read_opt(j, "lateral_fraction", e.lateral_fraction);
    return e;
  });
}

Json to_json(const GroundTruth& gt) {
  Json poses = Json::array();
  for (const auto& p : gt.poses) poses.push_back(to_json(p));
  const Point3 c = main_lens_center(gt.camera);
  return {{"camera", to_json(gt.camera)},
          {"board", to_json(gt.board)},
          {"intrinsics", to_json(gt.intr)},
          {"setting", to_json(gt.setting)},
          {"transform", to_json(gt.transform)},
          {"distortion", to_json(gt.dist)},
          {"poses", poses},
          {"mla_rotation", vec(gt.mla_rotation)},
          {"sigma", gt.sigma},
          {"seed", gt.seed},
          {"conventions",
           {{"main_lens", "thin lens at z = 0, light travels towards +z"},
            {"sensor_and_mla", "behind the lens: Z_os > Z_oa > F > 0 (mm)"},
            {"scene_frame",
             "point reflection of the lens frame about the sensor's conjugate origin, "
             "pixel units"},
            {"main_lens_center", vec(c)}}}};
}

GroundTruth ground_truth_from_json(const Json& j) {
  return guarded("ground truth", [&] {
    GroundTruth gt;
    gt.camera = camera_from_json(j.at("camera"));
    gt.board = board_from_json(j.at("board"));
    gt.intr = intrinsics_from_json(j.at("intrinsics"));
    gt.setting = tpp_from_json(j.at("setting"));
    gt.transform = tpp_from_json(j.at("transform"));
    gt.dist = distortion_from_json(j.at("distortion"));
    for (const Json& p : j.at("poses")) gt.poses.push_back(pose_from_json(p));
    if (j.contains("mla_rotation")) gt.mla_rotation = vec_from<3>(j.at("mla_rotation"), "mla_rotation");
    read_opt(j, "sigma", gt.sigma);
    read_opt(j, "seed", gt.seed);
    return gt;
  });
}

Json to_json(const CalibrationResult& r) {
  Json poses = Json::array();
  for (const auto& p : r.poses) poses.push_back(to_json(p));
  Json linear_poses = Json::array();
  for (const auto& p : r.linear.poses) linear_poses.push_back(to_json(p));
  Json hist = Json::array();
  for (const auto& [edge, count] : r.residual_histogram) hist.push_back({edge, count});
  Json homographies = Json::array();
  for (const auto& h : r.linear.homographies) {
    homographies.push_back({{"h", mat(h.h)}, {"algebraic_rms", h.algebraic_rms}});
  }
  const auto& q = r.linear.q;
  return {
      {"setting", to_json(r.setting)},
      {"transform", to_json(r.transform)},
      {"intrinsics", to_json(r.intr)},
      {"distortion", to_json(r.dist)},
      {"poses", poses},
      {"rms", r.rms},
      {"residual_histogram", hist},
      {"linear",
       {{"transform", to_json(r.linear.transform)},
        {"intrinsics", to_json(r.linear.intr)},
        {"q",
         {{"q11", q.q11},
          {"q13", q.q13},
          {"q23", q.q23},
          {"q33", q.q33},
          {"q34", q.q34},
          {"q44", q.q44},
          {"lambda", q.lambda},
          {"singular_ratio", q.singular_ratio},
          {"normal_spread", q.normal_spread}}},
        {"poses", linear_poses},
        {"orthogonality_errors", r.linear.orthogonality_errors},
        {"homographies", homographies},
        {"rms", r.linear.rms}}},
      {"refinement",
       {{"iterations", r.refinement.iterations},
        {"termination", r.refinement.termination},
        {"initial_rms", r.refinement.initial_rms},
        {"final_rms", r.refinement.final_rms},
        {"log", r.refinement.log}}}};
}

CalibrationResult result_from_json(const Json& j) {
  return guarded("result", [&] {
    CalibrationResult r;
    r.setting = tpp_from_json(j.at("setting"));
    r.transform = tpp_from_json(j.at("transform"));
    r.intr = intrinsics_from_json(j.at("intrinsics"));
    r.dist = distortion_from_json(j.at("distortion"));
    for (const Json& p : j.at("poses")) r.poses.push_back(pose_from_json(p));
    read_opt(j, "rms", r.rms);
    if (j.contains("linear")) {
      const Json& l = j.at("linear");
      r.linear.intr = intrinsics_from_json(l.at("intrinsics"));
      r.linear.transform = tpp_from_json(l.at("transform"));
      read_opt(l, "rms", r.linear.rms);
    }
    return r;
  });
}

Json to_json(std::span<const MicroImageCenter> centers) {
  Json arr = Json::array();
  for (const auto& c : centers) arr.push_back({{"lens", {c.i, c.j}}, {"center", vec(c.center)}});
  return {{"centers", arr}};
}

std::vector<MicroImageCenter> centers_from_json(const Json& j) {
  return guarded("centers", [&] {
    std::vector<MicroImageCenter> out;
    for (const Json& c : j.at("centers")) {
      MicroImageCenter m;
      m.i = c.at("lens").at(0).get<int>();
      m.j = c.at("lens").at(1).get<int>();
      m.center = vec_from<2>(c.at("center"), "center");
      out.push_back(m);
    }
    return out;
  });
}

Json to_json(const RectifyingHomography& h) {
  return {{"h", mat(h.h)}, {"pitch", h.pitch}, {"origin", vec(h.origin)}, {"rms", h.rms}};
}

std::string residual_csv(std::span<const Observation> obs, const ResidualSet& res) {
  std::ostringstream s;
  s << "pose_id,point_id,i,j,dx,dy\n";
  for (std::size_t k = 0; k < res.order.size(); ++k) {
    const auto& o = obs[res.order[k]];
    s << o.pose_id << ',' << o.point_id << ',' << o.lens_i << ',' << o.lens_j << ','
      << format_number(res.values[k].x(), 12) << ',' << format_number(res.values[k].y(), 12)
      << '\n';
  }
  return s.str();
}

std::string format_report(const CalibrationResult& r) {
  char line[160];
  std::ostringstream s;
  const auto row = [&](const char* name, double lin, double ref, bool sci) {
    if (sci) {
      std::snprintf(line, sizeof line, "%-12s %18.6e %18.6e\n", name, lin, ref);
    } else {
      std::snprintf(line, sizeof line, "%-12s %18.6f %18.6f\n", name, lin, ref);
    }
    s << line;
  };
  std::snprintf(line, sizeof line, "%-12s %18s %18s\n", "Parameter", "linear", "refined");
  s << line << std::string(50, '-') << '\n';
  const Intrinsics& a = r.linear.intr;
  const Intrinsics& b = r.intr;
  row("k_x", a.k_xy, b.k_xy, false);
  row("k_y", a.k_xy, b.k_xy, false);
  row("k_u", a.k_uv, b.k_uv, false);
  row("k_v", a.k_uv, b.k_uv, false);
  row("u_0/pixel", a.u_0, b.u_0, false);
  row("v_0/pixel", a.v_0, b.v_0, false);
  row("f/pixel", a.f, b.f, false);
  s << std::string(50, '-') << '\n';
  row("s_1", 0.0, r.dist.s1, true);
  row("s_2", 0.0, r.dist.s2, true);
  row("t_1", 0.0, r.dist.t1, true);
  row("t_2", 0.0, r.dist.t2, true);
  s << std::string(50, '-') << '\n';
  row("RMS", r.linear.rms, r.rms, false);
  s << "\nresidual histogram (0.1 px bins)\n";
  for (const auto& [edge, count] : r.residual_histogram) {
    std::snprintf(line, sizeof line, "  [%5.2f, %5.2f) %8zu\n", edge, edge + 0.1, count);
    s << line;
  }
  return s.str();
}

}  // namespace plenocal
