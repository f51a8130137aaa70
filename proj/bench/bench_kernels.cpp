// Parallel kernels against their serial references.

#include <benchmark/benchmark.h>

#include "plenocal/calibration.hpp"
#include "plenocal/normal_equations.hpp"
#include "plenocal/rectification.hpp"
#include "plenocal/simulator.hpp"

namespace plenocal {
namespace {

struct Scene {
  PhysicalCameraSpec camera;
  BoardSpec board;
  std::vector<Pose> poses;
  std::vector<Point3> points;
  std::vector<Observation> obs;
  ModelState state;
  ParameterLayout layout;
  MlaMisalignmentSpec mla;
  Raster16 white;

  Scene() {
    poses = generate_poses(12, 1, PoseEnvelope{}, camera, board);
    points = board.points(camera.pixel_pitch);
    const Intrinsics gt = ground_truth_intrinsics(camera);
    state.intr = gt;
    state.poses = poses;
    state.center_anchor = Eigen::Vector2d(0.5 * (camera.width - 1), 0.5 * (camera.height - 1));
    state.dist = state.effective_distortion();
    obs = synthesize_observations(camera, board, poses, state.dist, 0.3, 1);
    layout.n_poses = 12;
    mla = misaligned_mla(camera, Eigen::Vector3d(0.0, 0.0087, 0.0));
    white = synthesize_white_image(camera, mla);
  }
};

const Scene& scene() {
  static const Scene s;
  return s;
}

void BM_NormalEquations(benchmark::State& st) {
  const Scene& s = scene();
  for (auto _ : st) {
    benchmark::DoNotOptimize(accumulate_normal_equations(s.obs, s.points, s.state, s.layout));
  }
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(s.obs.size()));
}

void BM_NormalEquationsSerial(benchmark::State& st) {
  const Scene& s = scene();
  for (auto _ : st) {
    benchmark::DoNotOptimize(accumulate_normal_equations_serial(s.obs, s.points, s.state, s.layout));
  }
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(s.obs.size()));
}

void BM_Residuals(benchmark::State& st) {
  const Scene& s = scene();
  for (auto _ : st) {
    benchmark::DoNotOptimize(residuals(s.obs, s.points, s.poses, s.state.intr, s.state.dist));
  }
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(s.obs.size()));
}

void BM_ResidualsSerial(benchmark::State& st) {
  const Scene& s = scene();
  for (auto _ : st) {
    benchmark::DoNotOptimize(residuals_serial(s.obs, s.points, s.poses, s.state.intr, s.state.dist));
  }
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(s.obs.size()));
}

void BM_Synthesis(benchmark::State& st) {
  const Scene& s = scene();
  for (auto _ : st) {
    benchmark::DoNotOptimize(
        synthesize_observations(s.camera, s.board, s.poses, s.state.dist, 0.0, 1));
  }
}

void BM_SynthesisSerial(benchmark::State& st) {
  const Scene& s = scene();
  for (auto _ : st) {
    benchmark::DoNotOptimize(synthesize_observations_serial(s.camera, s.board, s.poses, s.state.dist));
  }
}

void BM_WhiteImage(benchmark::State& st) {
  const Scene& s = scene();
  for (auto _ : st) benchmark::DoNotOptimize(synthesize_white_image(s.camera, s.mla));
}

void BM_WhiteImageSerial(benchmark::State& st) {
  const Scene& s = scene();
  for (auto _ : st) benchmark::DoNotOptimize(synthesize_white_image_serial(s.camera, s.mla));
}

void BM_DetectCenters(benchmark::State& st) {
  const Scene& s = scene();
  for (auto _ : st) {
    benchmark::DoNotOptimize(detect_centers(s.white, s.camera.micro_image_pitch()));
  }
}

void BM_DetectCentersSerial(benchmark::State& st) {
  const Scene& s = scene();
  for (auto _ : st) {
    benchmark::DoNotOptimize(detect_centers_serial(s.white, s.camera.micro_image_pitch()));
  }
}

BENCHMARK(BM_NormalEquations)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_NormalEquationsSerial)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Residuals)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_ResidualsSerial)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Synthesis)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_SynthesisSerial)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_WhiteImage)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_WhiteImageSerial)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_DetectCenters)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_DetectCentersSerial)->Unit(benchmark::kMillisecond)->UseRealTime();

}  // namespace
}  // namespace plenocal

BENCHMARK_MAIN();
