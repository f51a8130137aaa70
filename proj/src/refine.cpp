#include <Eigen/Cholesky>
#include <cmath>
#include <sstream>

#include "plenocal/calibration.hpp"
#include "plenocal/errors.hpp"

namespace plenocal {

namespace {

double rms_from_cost(double cost, std::size_t n_obs) {
  return n_obs == 0 ? 0.0 : std::sqrt(2.0 * cost / (2.0 * static_cast<double>(n_obs)));
}

/// Removes frozen parameters from the system: identity rows, zero gradient.
void freeze(NormalEquations& ne, const std::vector<int>& frozen) {
  for (int c : frozen) {
    ne.jtj.row(c).setZero();
    ne.jtj.col(c).setZero();
    ne.jtj(c, c) = 1.0;
    ne.jtr(c) = 0.0;
  }
}

}  // namespace

RefineReport refine(const ModelState& initial, std::span<const Observation> obs,
                    std::span<const Point3> board, const RefineOptions& options) {
  ParameterLayout layout;
  layout.n_poses = static_cast<int>(initial.poses.size());
  layout.optimize_centers = options.optimize_centers;
  const int n = layout.size();

  for (const auto& o : obs) {
    if (o.pose_id < 0 || o.pose_id >= layout.n_poses || o.point_id < 0 ||
        static_cast<std::size_t>(o.point_id) >= board.size()) {
      throw Error(ErrorKind::MissingReference, "observation references an unknown pose or point");
    }
  }

  std::vector<int> frozen;
  if (!options.optimize_distortion) {
    for (int k = 0; k < 4; ++k) frozen.push_back(layout.coeffs_offset() + k);
  } else if (!options.optimize_xy_distortion) {
    frozen.push_back(layout.coeffs_offset());
    frozen.push_back(layout.coeffs_offset() + 1);
  }

  RefineReport report;
  ModelState state = initial;
  if (options.optimize_centers && state.center_anchor) {
    // Free centers start where the anchor puts them.
    state.dist = state.effective_distortion();
    state.center_anchor.reset();
  }
  Eigen::VectorXd x = pack_state(state, layout);
  NormalEquations ne = accumulate_normal_equations(obs, board, state, layout);
  if (!ne.finite || !std::isfinite(ne.cost)) {
    throw Error(ErrorKind::NonFiniteResidual, "initial residuals are not finite");
  }
  freeze(ne, frozen);
  report.initial_rms = rms_from_cost(ne.cost, obs.size());

  const double g0 = ne.jtr.cwiseAbs().maxCoeff();
  // With Jacobi scaling the diagonal of the scaled Hessian is all ones.
  double mu = options.initial_damping * static_cast<double>(n);
  int rejections = 0;
  report.termination = "max iterations";

  {
    std::ostringstream s;
    s << "refine: " << n << " parameters, " << obs.size() << " observations, initial rms "
      << report.initial_rms << " px";
    report.log.push_back(s.str());
  }

  for (int it = 0; it < options.max_iterations; ++it) {
    const double g = ne.jtr.cwiseAbs().maxCoeff();
    if (g <= options.gradient_tolerance * g0 || g == 0.0) {
      report.termination = "gradient";
      break;
    }

    Eigen::VectorXd d = ne.jtj.diagonal().cwiseSqrt();
    for (int k = 0; k < n; ++k) {
      if (!(d(k) > 0.0)) d(k) = 1.0;
    }
    const Eigen::VectorXd d_inv = d.cwiseInverse();
    const Eigen::MatrixXd a_scaled = d_inv.asDiagonal() * ne.jtj * d_inv.asDiagonal();
    const Eigen::VectorXd b_scaled = -d_inv.cwiseProduct(ne.jtr);

    bool accepted = false;
    while (!accepted) {
      Eigen::MatrixXd a = a_scaled;
      a.diagonal().array() += mu;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
      Eigen::VectorXd step;
      bool solved = ldlt.info() == Eigen::Success;
      if (solved) {
        step = d_inv.cwiseProduct(ldlt.solve(b_scaled));
        solved = step.allFinite();
      }
      if (solved) {
        if (step.norm() <= options.step_tolerance * (x.norm() + options.step_tolerance)) {
          report.termination = "step";
          break;
        }
        const Eigen::VectorXd x_new = x + step;
        const ModelState candidate = unpack_state(x_new, layout, state);
        const double cost_new = evaluate_cost(obs, board, candidate);
        if (std::isfinite(cost_new) && cost_new < ne.cost) {
          const double previous = ne.cost;
          x = x_new;
          state = candidate;
          ne = accumulate_normal_equations(obs, board, state, layout);
          if (!ne.finite) {
            throw Error(ErrorKind::NonFiniteResidual, "residuals became non-finite");
          }
          freeze(ne, frozen);
          mu *= options.damping_down;
          rejections = 0;
          accepted = true;
          report.iterations = it + 1;
          std::ostringstream s;
          s << "iter " << it + 1 << ": rms " << rms_from_cost(ne.cost, obs.size()) << " px, mu "
            << mu;
          report.log.push_back(s.str());
          if (previous - ne.cost <= 1e-15 * previous) {
            report.termination = "no change";
          }
          continue;
        }
      }
      mu *= options.damping_up;
      if (++rejections >= options.max_consecutive_rejections) {
        if (it == 0 && report.iterations == 0 && ne.cost == 0.0) break;
        throw Error(ErrorKind::DivergedOptimization,
                    "no decrease after " + std::to_string(rejections) + " damping increases");
      }
    }
    if (!accepted || report.termination == "no change") break;
  }

  report.state = state;
  report.final_rms = rms_from_cost(ne.cost, obs.size());
  std::ostringstream s;
  s << "refine: stopped (" << report.termination << ") after " << report.iterations
    << " iterations, rms " << report.final_rms << " px";
  report.log.push_back(s.str());
  return report;
}

}  // namespace plenocal
