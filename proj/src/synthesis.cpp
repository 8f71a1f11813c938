#include "pmpstab/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "pmpstab/grid.hpp"

namespace pmpstab {

namespace {

std::string point_text(std::span<const double> x) {
  std::ostringstream s;
  s.precision(17);
  s << "(";
  for (std::size_t i = 0; i < x.size(); ++i) s << (i ? ", " : "") << x[i];
  s << ")";
  return s.str();
}

Vec project_onto(const ControlSet& omega, Vec u) {
  if (omega.kind() != ControlSet::Kind::Box) return u;
  for (std::size_t j = 0; j < u.size(); ++j)
    u[j] = std::clamp(u[j], omega.bounds()[j].first, omega.bounds()[j].second);
  return u;
}

Vec eval_inner(const std::vector<Expr>& inner, std::span<const double> x) {
  Vec w(inner.size());
  for (std::size_t j = 0; j < inner.size(); ++j) w[j] = inner[j].eval(x);
  return w;
}

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double c : v) m = std::max(m, std::fabs(c));
  return m;
}

}  // namespace

NotCoveredError::NotCoveredError(Vec x)
    : std::runtime_error("point " + point_text(x) +
                         " is not covered by the projection of the manifold"),
      x_(std::move(x)) {}

DecreaseViolation::DecreaseViolation(Vec witness, double derivative)
    : ValidationError([&] {
        std::ostringstream s;
        s.precision(17);
        s << "inner law does not decrease V at " << point_text(witness)
          << ": <grad V, f(x, w(x))> = " << derivative;
        return s.str();
      }()),
      witness_(std::move(witness)),
      derivative_(derivative) {}

// ------------------------------------------------------------ decrease

DecreaseReport check_decrease(const ControlSystem& sys, const LyapunovSpec& lyap,
                              const std::vector<Expr>& inner, const FeedbackOptions& opt) {
  if (inner.size() != sys.m())
    throw DimensionError("inner law has " + std::to_string(inner.size()) +
                         " components, the system has " + std::to_string(sys.m()) + " inputs");
  for (const auto& w : inner)
    if (w.depends_on_kind(VarKind::Control) || w.depends_on(Variable::time()))
      throw ValidationError("inner law must depend on x only");

  DecreaseReport rep;
  rep.level_margin = -std::numeric_limits<double>::infinity();
  const std::size_t n = sys.n();

  auto derivative = [&](std::span<const double> x, double* raw_abs) {
    Vec w = eval_inner(inner, x);
    *raw_abs = max_abs(w);
    if (opt.saturate_inner) w = project_onto(sys.omega(), std::move(w));
    return dot(lyap.gradient(x), sys.eval_dynamics(x, w));
  };
  auto tolerance = [&](std::span<const double> x) {
    return opt.decrease_tol * std::max(1.0, norm(lyap.gradient(x)) * norm(x));
  };

  // points on the level set, and the bounding box of the sublevel set
  const std::size_t level_count = n == 1 ? 2 : std::max<std::size_t>(opt.level_samples, 8);
  const auto level = seed_manifold(lyap, level_count);
  Box bounding(n, {0.0, 0.0});
  for (const auto& s : level) {
    for (std::size_t k = 0; k < n; ++k) {
      bounding[k].first = std::min(bounding[k].first, s.x0[k] * 1.02);
      bounding[k].second = std::max(bounding[k].second, s.x0[k] * 1.02);
    }
    double raw = 0.0;
    const double d = derivative(s.x0, &raw);
    rep.max_inner_abs = std::max(rep.max_inner_abs, raw);
    if (d > rep.level_margin) {
      rep.level_margin = d;
      rep.level_witness = s.x0;
    }
    rep.max_inside = std::max(rep.max_inside, d);
    ++rep.samples;
    if (d > tolerance(s.x0)) throw DecreaseViolation(s.x0, d);
  }

  for_each_grid_point(bounding, opt.decrease_grid, [&](const Vec& x) {
    const double v = lyap.value(x);
    if (!(v > 0.0) || v > lyap.epsilon()) return;
    double raw = 0.0;
    const double d = derivative(x, &raw);
    rep.max_inner_abs = std::max(rep.max_inner_abs, raw);
    rep.max_inside = std::max(rep.max_inside, d);
    ++rep.samples;
    if (d > tolerance(x)) throw DecreaseViolation(x, d);
  });
  return rep;
}

// ------------------------------------------------------------ FeedbackLaw

FeedbackLaw::FeedbackLaw(std::shared_ptr<const LagrangianManifold> manifold,
                         std::vector<Expr> inner, FeedbackOptions opt, DecreaseReport report)
    : man_(std::move(manifold)),
      inner_(std::move(inner)),
      opt_(opt),
      report_(std::move(report)) {}

double FeedbackLaw::amplitude() const {
  const ControlSet& omega = system().omega();
  double k = 0.0;
  if (omega.kind() == ControlSet::Kind::Box) {
    for (const auto& [lo, hi] : omega.bounds()) k = std::max({k, std::fabs(lo), std::fabs(hi)});
  } else {
    for (const auto& p : omega.points()) k = std::max(k, max_abs(p));
  }
  return k;
}

bool FeedbackLaw::in_inner_region(std::span<const double> x) const {
  return lyapunov().value(x) <= epsilon();
}

Vec FeedbackLaw::inner_value(std::span<const double> x) const {
  Vec w = eval_inner(inner_, x);
  return opt_.saturate_inner ? project_onto(system().omega(), std::move(w)) : w;
}

FeedbackValue FeedbackLaw::evaluate(std::span<const double> x) const {
  FeedbackValue out;
  if (in_inner_region(x)) {
    out.inner = true;
    out.u = inner_value(x);
    return out;
  }
  const CostateEstimate est = man_->interpolate(x);
  if (!est.covered) throw NotCoveredError(Vec(x.begin(), x.end()));
  const MinimizerResult r =
      minimize_hamiltonian(system(), 0.0, x, est.nu, man_->options().hamiltonian);
  out.nu = est.nu;
  out.W = est.W;
  out.multivalued = est.multivalued;
  out.ref = est.nearest;
  out.degenerate = r.degenerate;
  if (r.degenerate) {
    // on the switching set: keep the control stored on the nearest branch sample
    const auto u = man_->branches()[est.nearest.branch].u(est.nearest.index);
    out.u.assign(u.begin(), u.end());
  } else {
    out.u = r.u_star;
  }
  return out;
}

double FeedbackLaw::switching_value(std::span<const double> x) const {
  const ControlSystem& sys = system();
  if (!sys.is_affine() || sys.m() != 1)
    throw NotAffineError("switching value needs a single-input affine system");
  const CostateEstimate est = man_->interpolate(x);
  if (!est.covered) return std::numeric_limits<double>::quiet_NaN();
  return dot(est.nu, sys.column(0, x));
}

FeedbackLaw assemble_feedback(std::shared_ptr<const LagrangianManifold> manifold,
                              std::vector<Expr> inner, const FeedbackOptions& opt) {
  if (!manifold || manifold->sample_count() == 0)
    throw ValidationError("manifold is empty");
  if (!(opt.C > 0.0)) throw ValidationError("control bound C must be positive");
  DecreaseReport rep = check_decrease(manifold->system(), manifold->lyapunov(), inner, opt);
  return FeedbackLaw(std::move(manifold), std::move(inner), opt, std::move(rep));
}

Vec eval_feedback(const FeedbackLaw& law, std::span<const double> x) { return law(x); }

BoundReport verify_bound(const FeedbackLaw& law, const Box& box, std::size_t grid) {
  BoundReport rep;
  for_each_grid_point(box, grid, [&](const Vec& x) {
    ++rep.samples;
    Vec u;
    try {
      u = law(x);
    } catch (const NotCoveredError&) {
      ++rep.uncovered;
      return;
    }
    const double a = max_abs(u);
    rep.max_abs = std::max(rep.max_abs, a);
    if (a > law.C() * (1.0 + 1e-12) && !rep.witness) {
      rep.ok = false;
      rep.witness = x;
    }
  });
  return rep;
}

// ------------------------------------------------------------ reference curve

bool in_reference_range(double tau) {
  using std::numbers::pi;
  return (tau > pi / 2 && tau < pi) || (tau > 3 * pi / 2 && tau < 2 * pi);
}

std::array<double, 2> reference_switching_point(double tau) {
  if (!in_reference_range(tau)) {
    std::ostringstream s;
    s.precision(17);
    s << "tau = " << tau << " is outside (pi/2, pi) and (3pi/2, 2pi)";
    throw std::domain_error(s.str());
  }
  const double s = std::sin(tau), c = std::cos(tau);
  const double x1 = -s * std::fabs(s) / (2.0 * c * c) + s * s / c + c;
  const double x2 = -std::fabs(s) / c + s;
  return {x1, x2};
}

std::vector<std::array<double, 2>> reference_switching_curve(const std::vector<double>& taus) {
  std::vector<std::array<double, 2>> out;
  out.reserve(taus.size());
  for (double t : taus) out.push_back(reference_switching_point(t));
  return out;
}

std::vector<double> reference_taus(std::size_t count, double margin) {
  using std::numbers::pi;
  std::vector<double> out;
  const std::size_t first = (count + 1) / 2;
  for (std::size_t i = 0; i < count; ++i) {
    const bool second = i >= first;
    const std::size_t k = second ? i - first : i, per = second ? count - first : first;
    const double lo = (second ? 1.5 * pi : 0.5 * pi) + margin;
    const double hi = (second ? 2.0 * pi : pi) - margin;
    out.push_back(per > 1 ? lo + (hi - lo) * double(k) / double(per - 1) : 0.5 * (lo + hi));
  }
  return out;
}

double distance_to_polylines(std::array<double, 2> p,
                             const std::vector<std::vector<SwitchPoint>>& lines) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& line : lines) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      const double ax = line[i].x[0], ay = line[i].x[1];
      double dx = p[0] - ax, dy = p[1] - ay;
      if (i + 1 < line.size()) {
        const double ex = line[i + 1].x[0] - ax, ey = line[i + 1].x[1] - ay;
        const double ee = ex * ex + ey * ey;
        const double s = ee > 0.0 ? std::clamp((dx * ex + dy * ey) / ee, 0.0, 1.0) : 0.0;
        dx -= s * ex;
        dy -= s * ey;
      }
      best = std::min(best, std::hypot(dx, dy));
    }
  }
  return best;
}

CurveComparison compare_switching_curve(const LagrangianManifold& man,
                                        const std::vector<double>& taus) {
  std::vector<std::vector<SwitchPoint>> first;
  for (auto& line : man.switching_polylines())
    if (!line.empty() && line.front().ordinal == 0) first.push_back(std::move(line));
  CurveComparison c;
  for (double tau : taus) {
    const double d = distance_to_polylines(reference_switching_point(tau), first);
    if (c.points == 0 || d > c.max_deviation) {
      c.max_deviation = d;
      c.worst_tau = tau;
    }
    ++c.points;
  }
  return c;
}

}  // namespace pmpstab
