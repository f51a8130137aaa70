#include "plenocal/normal_equations.hpp"

#include <unsupported/Eigen/AutoDiff>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace plenocal {

namespace {

constexpr int kLocal = block::kIntrinsics + block::kDistortion + block::kPose;  // 19
using Deriv = Eigen::Matrix<double, kLocal, 1>;
using Dual = Eigen::AutoDiffScalar<Deriv>;
constexpr std::size_t kChunk = 256;

struct Packed {
  std::array<double, block::kIntrinsics> intr;
  std::array<double, block::kDistortion> dist;
  std::vector<std::array<double, block::kPose>> poses;
  std::optional<Eigen::Vector2d> anchor;
};

Packed pack(const ModelState& s) {
  Packed p;
  p.intr = {s.intr.k_xy, s.intr.k_uv, s.intr.u_0, s.intr.v_0, s.intr.f};
  const DistortionParams d = s.effective_distortion();
  p.anchor = s.center_anchor;
  p.dist = {d.s1, d.s2, d.t1, d.t2, d.x_c, d.y_c, d.u_c, d.v_c};
  p.poses.reserve(s.poses.size());
  for (const auto& q : s.poses) {
    p.poses.push_back({q.rotation(0), q.rotation(1), q.rotation(2), q.translation(0),
                       q.translation(1), q.translation(2)});
  }
  return p;
}

/// Global column of each local derivative slot, -1 when that slot is fixed.
std::array<int, kLocal> column_map(const ParameterLayout& layout, int pose) {
  std::array<int, kLocal> m{};
  for (int k = 0; k < block::kIntrinsics; ++k) m[k] = layout.intrinsics_offset() + k;
  for (int k = 0; k < 4; ++k) m[block::kIntrinsics + k] = layout.coeffs_offset() + k;
  for (int k = 0; k < 4; ++k) {
    m[block::kIntrinsics + 4 + k] = layout.optimize_centers ? layout.centers_offset() + k : -1;
  }
  for (int k = 0; k < block::kPose; ++k) {
    m[block::kIntrinsics + block::kDistortion + k] = layout.pose_offset(pose) + k;
  }
  return m;
}

/// Predicted pixel and its 2 x 19 local Jacobian. Returns false if undefined.
bool linearize(const Observation& o, std::span<const Point3> board, const Packed& p,
               Eigen::Vector2d& pred, Eigen::Matrix<double, 2, kLocal>& jac) {
  std::array<Dual, kLocal> vars;
  int slot = 0;
  for (double v : p.intr) vars[slot] = Dual(v, kLocal, slot), ++slot;
  for (double v : p.dist) vars[slot] = Dual(v, kLocal, slot), ++slot;
  for (double v : p.poses[o.pose_id]) vars[slot] = Dual(v, kLocal, slot), ++slot;
  if (p.anchor) {
    // Anchored centers carry their dependence on k_xy, u_0 and v_0.
    vars[block::kIntrinsics + 4] = vars[0] * (*p.anchor)(0);
    vars[block::kIntrinsics + 5] = vars[0] * (*p.anchor)(1);
    vars[block::kIntrinsics + 6] = vars[2];
    vars[block::kIntrinsics + 7] = vars[3];
  }
  Dual pix[2];
  if (!project_blocks<Dual>(vars.data(), vars.data() + block::kIntrinsics,
                            vars.data() + block::kIntrinsics + block::kDistortion,
                            board[o.point_id], o.lens_i, o.lens_j, pix)) {
    return false;
  }
  pred << pix[0].value(), pix[1].value();
  jac.row(0) = pix[0].derivatives().transpose();
  jac.row(1) = pix[1].derivatives().transpose();
  return true;
}

void accumulate_range(std::span<const Observation> obs, std::span<const Point3> board,
                      const Packed& p, const ParameterLayout& layout, std::size_t begin,
                      std::size_t end, NormalEquations& ne) {
  Eigen::Vector2d pred;
  Eigen::Matrix<double, 2, kLocal> jac;
  for (std::size_t k = begin; k < end; ++k) {
    const auto& o = obs[k];
    if (!linearize(o, board, p, pred, jac)) {
      ne.finite = false;
      continue;
    }
    const Eigen::Vector2d r(o.px - pred(0), o.py - pred(1));
    if (!r.allFinite() || !jac.allFinite()) {
      ne.finite = false;
      continue;
    }
    ne.cost += 0.5 * r.squaredNorm();
    ne.n_residuals += 2;
    const auto cols = column_map(layout, o.pose_id);
    // Residual Jacobian is -jac; J^T J is sign free, J^T r picks up the sign.
    for (int a = 0; a < kLocal; ++a) {
      const int ca = cols[a];
      if (ca < 0) continue;
      ne.jtr(ca) -= jac.col(a).dot(r);
      for (int b = 0; b < kLocal; ++b) {
        const int cb = cols[b];
        if (cb < 0) continue;
        ne.jtj(ca, cb) += jac.col(a).dot(jac.col(b));
      }
    }
  }
}

NormalEquations empty_system(int n) {
  NormalEquations ne;
  ne.jtj = Eigen::MatrixXd::Zero(n, n);
  ne.jtr = Eigen::VectorXd::Zero(n);
  return ne;
}

}  // namespace

DistortionParams ModelState::effective_distortion() const {
  DistortionParams d = dist;
  if (center_anchor) {
    d.x_c = intr.k_xy * (*center_anchor)(0);
    d.y_c = intr.k_xy * (*center_anchor)(1);
    d.u_c = intr.u_0;
    d.v_c = intr.v_0;
  }
  return d;
}

Eigen::VectorXd pack_state(const ModelState& s, const ParameterLayout& layout) {
  Eigen::VectorXd x(layout.size());
  x.segment<5>(0) << s.intr.k_xy, s.intr.k_uv, s.intr.u_0, s.intr.v_0, s.intr.f;
  x.segment<4>(layout.coeffs_offset()) << s.dist.s1, s.dist.s2, s.dist.t1, s.dist.t2;
  if (layout.optimize_centers) {
    x.segment<4>(layout.centers_offset()) << s.dist.x_c, s.dist.y_c, s.dist.u_c, s.dist.v_c;
  }
  for (int k = 0; k < layout.n_poses; ++k) {
    x.segment<3>(layout.pose_offset(k)) = s.poses[k].rotation;
    x.segment<3>(layout.pose_offset(k) + 3) = s.poses[k].translation;
  }
  return x;
}

ModelState unpack_state(const Eigen::VectorXd& x, const ParameterLayout& layout,
                        const ModelState& base) {
  ModelState s = base;
  s.intr = {x(0), x(1), x(2), x(3), x(4)};
  const int c = layout.coeffs_offset();
  s.dist.s1 = x(c);
  s.dist.s2 = x(c + 1);
  s.dist.t1 = x(c + 2);
  s.dist.t2 = x(c + 3);
  if (layout.optimize_centers) {
    const int o = layout.centers_offset();
    s.dist.x_c = x(o);
    s.dist.y_c = x(o + 1);
    s.dist.u_c = x(o + 2);
    s.dist.v_c = x(o + 3);
  }
  s.dist = s.effective_distortion();
  s.poses.resize(layout.n_poses);
  for (int k = 0; k < layout.n_poses; ++k) {
    s.poses[k].rotation = x.segment<3>(layout.pose_offset(k));
    s.poses[k].translation = x.segment<3>(layout.pose_offset(k) + 3);
  }
  return s;
}

Eigen::VectorXd residual_vector(std::span<const Observation> obs, std::span<const Point3> board,
                                const ModelState& state) {
  const Packed p = pack(state);
  Eigen::VectorXd r(2 * obs.size());
  for (std::size_t k = 0; k < obs.size(); ++k) {
    const auto& o = obs[k];
    double pix[2];
    if (!project_blocks<double>(p.intr.data(), p.dist.data(), p.poses[o.pose_id].data(),
                                board[o.point_id], o.lens_i, o.lens_j, pix)) {
      pix[0] = pix[1] = std::numeric_limits<double>::quiet_NaN();
    }
    r(2 * k) = o.px - pix[0];
    r(2 * k + 1) = o.py - pix[1];
  }
  return r;
}

Eigen::MatrixXd prediction_jacobian(std::span<const Observation> obs,
                                    std::span<const Point3> board, const ModelState& state,
                                    const ParameterLayout& layout) {
  const Packed p = pack(state);
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(2 * obs.size(), layout.size());
  Eigen::Vector2d pred;
  Eigen::Matrix<double, 2, kLocal> jac;
  for (std::size_t k = 0; k < obs.size(); ++k) {
    if (!linearize(obs[k], board, p, pred, jac)) {
      j.middleRows<2>(2 * k).setConstant(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const auto cols = column_map(layout, obs[k].pose_id);
    for (int a = 0; a < kLocal; ++a) {
      if (cols[a] >= 0) j.block<2, 1>(2 * k, cols[a]) = jac.col(a);
    }
  }
  return j;
}

NormalEquations accumulate_normal_equations(std::span<const Observation> obs,
                                            std::span<const Point3> board,
                                            const ModelState& state,
                                            const ParameterLayout& layout) {
  const Packed p = pack(state);
  const int n = layout.size();
  const std::size_t n_chunks = (obs.size() + kChunk - 1) / kChunk;
  std::vector<NormalEquations> partial(n_chunks);

#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(n_chunks); ++c) {
    NormalEquations ne = empty_system(n);
    const std::size_t begin = static_cast<std::size_t>(c) * kChunk;
    accumulate_range(obs, board, p, layout, begin, std::min(obs.size(), begin + kChunk), ne);
    partial[c] = std::move(ne);
  }

  NormalEquations out = empty_system(n);
  for (const auto& ne : partial) {
    out.jtj += ne.jtj;
    out.jtr += ne.jtr;
    out.cost += ne.cost;
    out.n_residuals += ne.n_residuals;
    out.finite = out.finite && ne.finite;
  }
  return out;
}

NormalEquations accumulate_normal_equations_serial(std::span<const Observation> obs,
                                                   std::span<const Point3> board,
                                                   const ModelState& state,
                                                   const ParameterLayout& layout) {
  const Packed p = pack(state);
  NormalEquations out = empty_system(layout.size());
  accumulate_range(obs, board, p, layout, 0, obs.size(), out);
  return out;
}

double evaluate_cost(std::span<const Observation> obs, std::span<const Point3> board,
                     const ModelState& state) {
  const Packed p = pack(state);
  const std::size_t n_chunks = (obs.size() + kChunk - 1) / kChunk;
  std::vector<double> partial(n_chunks, 0.0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(n_chunks); ++c) {
    const std::size_t begin = static_cast<std::size_t>(c) * kChunk;
    const std::size_t end = std::min(obs.size(), begin + kChunk);
    double sum = 0.0;
    for (std::size_t k = begin; k < end; ++k) {
      const auto& o = obs[k];
      double pix[2];
      if (!project_blocks<double>(p.intr.data(), p.dist.data(), p.poses[o.pose_id].data(),
                                  board[o.point_id], o.lens_i, o.lens_j, pix)) {
        sum = std::numeric_limits<double>::quiet_NaN();
        break;
      }
      const double dx = o.px - pix[0];
      const double dy = o.py - pix[1];
      sum += 0.5 * (dx * dx + dy * dy);
    }
    partial[c] = sum;
  }
  double total = 0.0;
  for (double v : partial) total += v;
  return total;
}

}  // namespace plenocal
