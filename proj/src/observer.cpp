#include "pmpstab/observer.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace pmpstab {

GainMargins gain_margins(const ObserverGains& g) {
  const double d2 = g.delta * g.delta;
  const double c = 2.0 / g.beta1 + g.beta1 / g.beta2;
  return {-2.0 * g.beta2 + g.L / d2, -2.0 + d2 * g.L + c * g.L, -2.0 + d2 * g.L + 2.0 * c * g.L};
}

bool gains_feasible(const ObserverGains& g, double margin) {
  if (!(g.beta1 > 0.0 && g.beta2 > 0.0 && g.delta > 0.0)) return false;
  const GainMargins m = gain_margins(g);
  if (margin == 0.0) return m.first < 0.0 && m.second < 0.0;
  return m.first <= -margin && m.second <= -margin;
}

bool gains_certified(const ObserverGains& g, double margin) {
  if (!gains_feasible(g, margin)) return false;
  const double s = gain_margins(g).second_full;
  return margin == 0.0 ? s < 0.0 : s <= -margin;
}

ObserverGains select_gains(double L, double margin) {
  if (!std::isfinite(L) || L < 0.0) throw ValidationError("Lipschitz constant L must be finite and >= 0");
  ObserverGains g;
  g.L = L;
  g.delta = std::sqrt(std::min(0.25, 0.9 / std::max(L, 1.0)));
  g.beta1 = 8.0 * std::max(1.0, L);
  for (g.beta2 = 1.0; g.beta2 < 1e300; g.beta2 *= 2.0)
    if (gains_certified(g, margin)) return g;
  throw ValidationError("no feasible observer gains found");
}

void require_manipulator_form(const ControlSystem& sys) {
  if (sys.n() != 2 || sys.m() != 1 || !sys.is_affine())
    throw ValidationError("observer needs a planar single-input affine system");
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> d(-3.0, 3.0);
  for (int i = 0; i < 16; ++i) {
    const Vec x{d(rng), d(rng)};
    const Vec f = sys.drift(x);
    const Vec b = sys.column(0, x);
    if (f[0] != x[1] || b[0] != 0.0 || b[1] != 1.0)
      throw ValidationError("observer needs the manipulator form x1' = x2, x2' = f(x1, x2) + u");
  }
}

std::array<double, 2> estimator_step(const ControlSystem& sys, const ObserverGains& g,
                                     std::span<const double> z, double x1_meas, double u) {
  if (z.size() != 2) throw DimensionError("estimator state has two components");
  const Vec xz{x1_meas, z[1]};
  const double f = sys.drift(xz)[1];
  const double r = z[0] - x1_meas;
  return {z[1] - g.beta1 * r, f + u - g.beta2 * r};
}

double error_lyapunov(const ObserverGains& g, ErrorState e) {
  return 2.0 * g.beta2 / g.beta1 * e.e1 * e.e1 - 2.0 * e.e1 * e.e2 +
         (2.0 / g.beta1 + g.beta1 / g.beta2) * e.e2 * e.e2;
}

double error_lyapunov_rate(const ControlSystem& sys, const ObserverGains& g,
                           std::span<const double> x, std::span<const double> z) {
  const double e1 = z[0] - x[0], e2 = z[1] - x[1];
  const double df = sys.drift(Vec{x[0], z[1]})[1] - sys.drift(x)[1];
  const double de1 = e2 - g.beta1 * e1;
  const double de2 = df - g.beta2 * e1;
  const double c = 2.0 / g.beta1 + g.beta1 / g.beta2;
  return (4.0 * g.beta2 / g.beta1 * e1 - 2.0 * e2) * de1 + (-2.0 * e1 + 2.0 * c * e2) * de2;
}

double error_lyapunov_rate_bound(const ObserverGains& g, ErrorState e) {
  const GainMargins m = gain_margins(g);
  return m.first * e.e1 * e.e1 + m.second_full * e.e2 * e.e2;
}

double error_lyapunov_rate_bound_stated(const ObserverGains& g, ErrorState e) {
  const GainMargins m = gain_margins(g);
  return m.first * e.e1 * e.e1 + m.second * e.e2 * e.e2;
}

double extended_W(const FeedbackLaw& law, std::span<const double> x) {
  if (law.in_inner_region(x)) return law.lyapunov().value(x);
  const CostateEstimate est = law.manifold().interpolate(x);
  return est.covered ? est.W : std::numeric_limits<double>::quiet_NaN();
}

ObserverCertificate certify_observer(const FeedbackLaw& law, const CertificateOptions& opt) {
  const LagrangianManifold& man = law.manifold();
  ObserverCertificate c;
  double worst_S = -std::numeric_limits<double>::infinity();
  const auto& refs = man.samples();
  const std::size_t stride =
      std::max<std::size_t>(1, refs.size() / std::max<std::size_t>(opt.max_samples, 1));
  for (std::size_t k = 0; k < refs.size(); k += stride) {
    const Bicharacteristic& b = man.branches()[refs[k].branch];
    const auto x = b.x(refs[k].index);
    if (law.in_inner_region(x)) continue;
    ++c.samples;
    worst_S = std::max(worst_S, b.S(refs[k].index));

    const Vec up{x[0], x[1] + opt.dx2};
    if (law.in_inner_region(up)) continue;
    const CostateEstimate a = man.interpolate(x), z = man.interpolate(up);
    // ν jumps where the selected sheet changes; those pairs are not Lipschitz samples
    if (!a.covered || !z.covered || a.multivalued || z.multivalued) continue;
    c.M_raw = std::max(c.M_raw, std::fabs(z.nu[1] - a.nu[1]) / opt.dx2);
  }
  c.M = opt.safety * c.M_raw;
  c.gamma = c.samples ? -worst_S : 0.0;
  return c;
}

OutputFeedbackRun simulate_output_feedback(const FeedbackLaw& law, const ObserverGains& gains,
                                           std::span<const double> x0,
                                           std::span<const double> z0,
                                           const SimulationOptions& opt) {
  const ControlSystem& sys = law.system();
  require_manipulator_form(sys);
  if (x0.size() != 2 || z0.size() != 2) throw DimensionError("x0 and z0 need two components");
  for (double v : {x0[0], x0[1], z0[0], z0[1]})
    if (!std::isfinite(v)) throw ValidationError("initial states must be finite");
  if (!(gains.beta1 > 0.0 && gains.beta2 > 0.0)) throw ValidationError("gains must be positive");

  OutputFeedbackRun run;
  run.gains = gains;
  if (std::isnan(run.gains.M)) run.gains.M = certify_observer(law).M;

  // the law sees (x₁, z₂); the state is (x₁, x₂, z₁, z₂)
  const HybridModel full = closed_loop_model(law);
  auto seen = [](std::span<const double> y) { return Vec{y[0], y[3]}; };
  HybridModel m;
  m.dim = 4;
  m.m = 1;
  m.mode = [full, seen](std::span<const double> y) { return full.mode(seen(y)); };
  m.control = [full, seen](int mode, std::span<const double> y) {
    return full.control(mode, seen(y));
  };
  m.surface = [full, seen](int a, int b, std::span<const double> y) {
    return full.surface(a, b, seen(y));
  };
  m.field = [&sys, &gains](std::span<const double> y, std::span<const double> u,
                           std::span<double> dy) {
    const Vec f = sys.eval_dynamics(y.first(2), u);
    dy[0] = f[0];
    dy[1] = f[1];
    const auto dz = estimator_step(sys, gains, y.subspan(2, 2), y[0], u[0]);
    dy[2] = dz[0];
    dy[3] = dz[1];
  };

  const LyapunovSpec& lyap = law.lyapunov();
  ModelRunSpec spec;
  spec.plant_dim = 2;
  spec.omega = &sys.omega();
  spec.V = [&](std::span<const double> x) { return lyap.value(x); };
  spec.epsilon = law.epsilon();

  Trajectory& est = run.estimator;
  est.n = 2;
  est.m = 1;
  const double M = run.gains.M;
  auto hook = [&](double t, const Vec& y, const Vec& u, SimEventKind ev) {
    const Vec x{y[0], y[1]}, z{y[2], y[3]};
    const ErrorState e{z[0] - x[0], z[1] - x[1]};
    ErrorSample s{t, e.e1, e.e2, error_lyapunov(gains, e), extended_W(law, x)};
    if (!est.t.empty() && t <= est.t.back()) {
      est.u.back() = u;
      if (ev != SimEventKind::None) est.flag.back() = static_cast<std::int8_t>(ev);
      run.errors.back() = s;
      return;
    }
    est.t.push_back(t);
    est.x.push_back(z);
    est.u.push_back(u);
    est.flag.push_back(static_cast<std::int8_t>(ev));
    run.errors.push_back(s);

    const Vec xz{x[0], z[1]};
    if (law.in_inner_region(x) || law.in_inner_region(xz)) return;
    const FeedbackValue at_x = law.evaluate(x);
    const double du = law(xz)[0] - at_x.u[0];
    if (du == 0.0) return;
    run.mismatches.push_back({t, at_x.nu[1], du, e.e2, 2.0 * M * std::fabs(e.e2)});
  };

  const Vec y0{x0[0], x0[1], z0[0], z0[1]};
  run.plant = simulate_model(m, y0, spec, opt, hook);
  est.status = run.plant.status;
  run.status = run.plant.status;
  run.message = run.plant.message;
  return run;
}

}  // namespace pmpstab
