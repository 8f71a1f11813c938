#include "pmpstab/hamiltonian.hpp"

#include <cmath>
#include <limits>

namespace pmpstab {

Vec switching_functions(const ControlSystem& sys, std::span<const double> x,
                        std::span<const double> nu) {
  if (!sys.is_affine()) throw NotAffineError("switching functions need a control-affine system");
  Vec sigma(sys.m());
  for (std::size_t j = 0; j < sys.m(); ++j) sigma[j] = dot(nu, sys.column(j, x));
  return sigma;
}

MinimizerResult minimize_hamiltonian(const ControlSystem& sys, double t,
                                     std::span<const double> x, std::span<const double> nu,
                                     const HamiltonianOptions& opt) {
  if (nu.size() != sys.n()) throw DimensionError("co-state has wrong length");
  for (double v : nu)
    if (!std::isfinite(v)) throw std::invalid_argument("co-state must be finite");

  const ControlSet& omega = sys.omega();
  MinimizerResult r;

  if (omega.kind() == ControlSet::Kind::Finite) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_i = 0;
    bool tie = false;
    const auto& pts = omega.points();
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const double s = dot(nu, sys.eval_dynamics(t, x, pts[i]));
      if (s < best) {
        best = s;
        best_i = i;
        tie = false;
      } else if (s == best) {
        tie = true;
      }
    }
    r.u_star = pts[best_i];
    r.s_value = best;
    r.degenerate = tie;
    return r;
  }

  const auto& bounds = omega.bounds();
  if (sys.is_affine()) {
    r.u_star.resize(sys.m());
    for (std::size_t j = 0; j < sys.m(); ++j) {
      const double sigma = dot(nu, sys.column(j, x));
      if (std::fabs(sigma) <= opt.switch_tol) {
        r.u_star[j] = 0.5 * (bounds[j].first + bounds[j].second);
        r.degenerate = true;
      } else {
        r.u_star[j] = sigma > 0.0 ? bounds[j].first : bounds[j].second;
      }
    }
    r.s_value = dot(nu, sys.eval_dynamics(t, x, r.u_star));
    return r;
  }

  // Grid fallback over the box for non-affine f.
  const std::size_t m = sys.m();
  const std::size_t res = std::max<std::size_t>(opt.grid_res, 2);
  std::vector<std::size_t> idx(m, 0);
  Vec u(m);
  double best = std::numeric_limits<double>::infinity();
  bool tie = false;
  for (;;) {
    for (std::size_t j = 0; j < m; ++j)
      u[j] = bounds[j].first +
             (bounds[j].second - bounds[j].first) * double(idx[j]) / double(res - 1);
    const double s = dot(nu, sys.eval_dynamics(t, x, u));
    if (s < best) {
      best = s;
      r.u_star = u;
      tie = false;
    } else if (s == best) {
      tie = true;
    }
    std::size_t j = 0;
    while (j < m && ++idx[j] == res) idx[j++] = 0;
    if (j == m) break;
  }
  r.s_value = best;
  r.degenerate = tie;
  if (tie && norm(nu) == 0.0) {
    r.u_star = omega.midpoint();
    r.s_value = 0.0;
  }
  return r;
}

double hamiltonian_value(const ControlSystem& sys, double t, std::span<const double> x,
                         std::span<const double> nu, const HamiltonianOptions& opt) {
  return minimize_hamiltonian(sys, t, x, nu, opt).s_value;
}

PhaseVelocity pontryagin_rhs(const ControlSystem& sys, double t, std::span<const double> x,
                             std::span<const double> nu, std::span<const double> u,
                             int direction) {
  PhaseVelocity v;
  v.dx = sys.eval_dynamics(t, x, u);
  // ∂S/∂x = (∂f/∂x)ᵀ ν
  v.dnu = sys.jacobian_x(t, x, u).value.transpose_times(nu);
  const double s = direction >= 0 ? 1.0 : -1.0;
  for (auto& d : v.dx) d *= s;
  for (auto& d : v.dnu) d *= -s;
  return v;
}

FlowEvaluation reversed_rhs(const ControlSystem& sys, std::span<const double> x,
                            std::span<const double> nu, const HamiltonianOptions& opt) {
  FlowEvaluation e;
  e.minimizer = minimize_hamiltonian(sys, 0.0, x, nu, opt);
  e.velocity = pontryagin_rhs(sys, 0.0, x, nu, e.minimizer.u_star, -1);
  return e;
}

FlowEvaluation forward_rhs(const ControlSystem& sys, double t, std::span<const double> x,
                           std::span<const double> nu, const HamiltonianOptions& opt) {
  FlowEvaluation e;
  e.minimizer = minimize_hamiltonian(sys, t, x, nu, opt);
  e.velocity = pontryagin_rhs(sys, t, x, nu, e.minimizer.u_star, +1);
  return e;
}

}  // namespace pmpstab
