#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>
#include <random>

#include "fixtures.hpp"
#include "pmpstab/observer.hpp"

using namespace pmpstab;
using namespace pmpstab::testing;

namespace {

// both gain inequalities, substituted directly
double first_lhs(double b2, double d, double L) { return -2 * b2 + L / (d * d); }
double second_lhs(double b1, double b2, double d, double L) {
  return -2 + d * d * L + (2 / b1 + b1 / b2) * L;
}
double second_full_lhs(double b1, double b2, double d, double L) {
  return -2 + d * d * L + 2 * (2 / b1 + b1 / b2) * L;
}

const FeedbackLaw& pendulum_law() {
  static const FeedbackLaw law = [] {
    ManifoldOptions o;
    o.seeds = 256;
    o.tau_max = 10.0;
    auto man = std::make_shared<const LagrangianManifold>(
        build_manifold(pendulum(), unit_circle(), o));
    return assemble_feedback(man, exprs({"sin(x1)-x1-x2"}, 2), {});
  }();
  return law;
}

SimulationOptions long_run() {
  SimulationOptions o;
  o.t_max = 100.0;
  o.dwell_time = 10.0;
  return o;
}

}  // namespace

TEST_CASE("gain selection for L = 1") {
  const ObserverGains g = select_gains(1.0);
  CHECK(g.delta == 0.5);
  CHECK(g.beta1 == 8.0);
  CHECK(g.beta2 == 16.0);
  CHECK(first_lhs(g.beta2, g.delta, 1.0) <= -0.1);
  CHECK(second_lhs(g.beta1, g.beta2, g.delta, 1.0) <= -0.1);
  CHECK(second_full_lhs(g.beta1, g.beta2, g.delta, 1.0) <= -0.1);
  CHECK(gains_feasible(g, 0.1));
  CHECK(gains_certified(g, 0.1));
  // β₂ = 8 passes the stated inequalities but not the full one
  CHECK(gains_feasible({8.0, 8.0, 0.5, 1.0}, 0.1));
  CHECK_FALSE(gains_certified({8.0, 8.0, 0.5, 1.0}, 0.1));

  // the larger β₂ quoted for L = 1 is feasible as well
  const ObserverGains quoted{4.0, 100.0, 0.5, 1.0};
  CHECK(first_lhs(100, 0.5, 1) == doctest::Approx(-196.0));
  CHECK(second_lhs(4, 100, 0.5, 1) == doctest::Approx(-1.21));
  CHECK(gain_margins(quoted).first == doctest::Approx(-196.0));
  CHECK(gain_margins(quoted).second == doctest::Approx(-1.21));
  CHECK(gains_feasible(quoted));
  CHECK(gains_certified(quoted));
}

TEST_CASE("gain selection edge cases") {
  const ObserverGains z = select_gains(0.0);
  CHECK(z.beta1 > 0.0);
  CHECK(z.beta2 > 0.0);
  CHECK(-2 * z.beta2 < 0.0);
  CHECK(gains_feasible(z, 0.1));

  CHECK_THROWS_AS(select_gains(-1.0), ValidationError);
  CHECK_THROWS_AS(select_gains(INFINITY), ValidationError);
  CHECK_THROWS_AS(select_gains(NAN), ValidationError);
  CHECK_FALSE(gains_feasible({4.0, 1.0, 0.5, 1.0}));
  CHECK_FALSE(gains_feasible({0.0, 4.0, 0.5, 1.0}));
}

TEST_CASE("property: selected gains satisfy both inequalities for any L") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> logL(-3.0, 4.0);
  std::vector<double> Ls{100.0, 1e3, 0.5};
  for (int i = 0; i < 200; ++i) Ls.push_back(std::pow(10.0, logL(rng)));
  for (double L : Ls) {
    const ObserverGains g = select_gains(L);
    CHECK(g.L == L);
    CHECK(first_lhs(g.beta2, g.delta, L) <= -0.1);
    CHECK(second_lhs(g.beta1, g.beta2, g.delta, L) <= -0.1);
    CHECK(second_full_lhs(g.beta1, g.beta2, g.delta, L) <= -0.1);
  }
}

TEST_CASE("estimator examples") {
  const ObserverGains g{4.0, 100.0, 0.5, 1.0};
  const auto dz = estimator_step(double_integrator(), g, Vec{1.0, 1.0}, 0.0, 0.0);
  CHECK(dz[0] == -3.0);
  CHECK(dz[1] == -100.0);

  // exact estimate: ż equals the plant right-hand side for any u
  const ControlSystem damped = planar_affine("x2", "-sin(x1)-0.5*x2");
  for (double u : {-1.0, 0.0, 0.3}) {
    const Vec x{0.7, -0.4};
    const auto d = estimator_step(damped, g, x, x[0], u);
    const Vec f = damped.eval_dynamics(x, Vec{u});
    CHECK(d[0] == doctest::Approx(f[0]).epsilon(1e-15));
    CHECK(d[1] == doctest::Approx(f[1]).epsilon(1e-15));
  }

  // f is evaluated at the measured x₁ and the estimated z₂
  const auto d = estimator_step(damped, g, Vec{0.2, 0.9}, 0.5, 0.25);
  CHECK(d[0] == doctest::Approx(0.9 - 4.0 * (0.2 - 0.5)).epsilon(1e-15));
  CHECK(d[1] == doctest::Approx(-std::sin(0.5) - 0.45 + 0.25 - 100.0 * (0.2 - 0.5)).epsilon(1e-14));
}

TEST_CASE("manipulator form is required") {
  require_manipulator_form(double_integrator());
  require_manipulator_form(pendulum());
  CHECK_THROWS_AS(require_manipulator_form(planar_affine("x2+x1", "0")), ValidationError);
  CHECK_THROWS_AS(require_manipulator_form(planar_affine("x2", "0", "1", "0")), ValidationError);
}

TEST_CASE("error Lyapunov examples") {
  const ObserverGains g{4.0, 100.0, 0.5, 1.0};
  CHECK(error_lyapunov(g, {1.0, 0.0}) == doctest::Approx(50.0).epsilon(1e-15));
  CHECK(error_lyapunov(g, {0.0, 0.0}) == 0.0);
  CHECK(error_lyapunov(g, {0.0, 1.0}) == doctest::Approx(0.54).epsilon(1e-15));
}

TEST_CASE("property: error Lyapunov form is positive definite for positive gains") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> lg(-2.0, 3.0);
  std::normal_distribution<double> n01;
  for (int i = 0; i < 100; ++i) {
    const double b1 = std::pow(10.0, lg(rng)), b2 = std::pow(10.0, lg(rng));
    const double a = 2 * b2 / b1, c = 2 / b1 + b1 / b2;
    // eigenvalues of [[a, −1], [−1, c]]
    const double mean = 0.5 * (a + c), rad = std::sqrt(0.25 * (a - c) * (a - c) + 1.0);
    CHECK(mean - rad > 0.0);
    CHECK(a * c - 1.0 == doctest::Approx(4 * b2 / (b1 * b1) + 1.0).epsilon(1e-12));
    const ObserverGains g{b1, b2, 0.5, 1.0};
    for (int k = 0; k < 10; ++k) {
      const ErrorState e{n01(rng), n01(rng)};
      CHECK(error_lyapunov(g, e) > 0.0);
    }
  }
}

TEST_CASE("property: the error-form rate obeys the proof's bound") {
  const ControlSystem sys = planar_affine("x2", "-sin(x1)-0.5*sin(x2)");
  const ObserverGains g = select_gains(0.5);
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> d(-3.0, 3.0);
  for (int i = 0; i < 1000; ++i) {
    const Vec x{d(rng), d(rng)}, z{d(rng), d(rng)};
    const ErrorState e{z[0] - x[0], z[1] - x[1]};
    const double rate = error_lyapunov_rate(sys, g, x, z);
    CHECK(rate <= error_lyapunov_rate_bound(g, e) + 1e-12);
    CHECK(error_lyapunov_rate_bound(g, e) <= 0.0);

    // oracle: finite-difference gradient of V_e times ė from the two right-hand sides
    const double u = 0.3;
    const auto dz = estimator_step(sys, g, z, x[0], u);
    const Vec dx = sys.eval_dynamics(x, Vec{u});
    const double h = 1e-6;
    const double g1 = (error_lyapunov(g, {e.e1 + h, e.e2}) - error_lyapunov(g, {e.e1 - h, e.e2})) / (2 * h);
    const double g2 = (error_lyapunov(g, {e.e1, e.e2 + h}) - error_lyapunov(g, {e.e1, e.e2 - h})) / (2 * h);
    const double oracle = g1 * (dz[0] - dx[0]) + g2 * (dz[1] - dx[1]);
    CHECK(rate == doctest::Approx(oracle).epsilon(1e-6).scale(1.0));
  }
}

TEST_CASE("the stated e2 coefficient needs f independent of x2") {
  const ObserverGains g{4.0, 4.0, 0.5, 1.0};
  // f = −x₂ is 1-Lipschitz in x₂; e = (0, 1) gives dV/dt = −2 − 2c = −5
  const ControlSystem lin = planar_affine("x2", "-x2");
  const Vec x{0.0, 0.0}, z{0.0, 1.0};
  CHECK(error_lyapunov_rate(lin, g, x, z) == doctest::Approx(-5.0));
  CHECK(error_lyapunov_rate_bound_stated(g, {0.0, 1.0}) == doctest::Approx(-0.25));
  CHECK(error_lyapunov_rate_bound(g, {0.0, 1.0}) == doctest::Approx(1.25));
  // f = +x₂ flips the sign of Δf
  const ControlSystem anti = planar_affine("x2", "x2");
  const double rate = error_lyapunov_rate(anti, g, x, z);
  CHECK(rate == doctest::Approx(1.0));
  CHECK(rate > error_lyapunov_rate_bound_stated(g, {0.0, 1.0}));
  CHECK(rate <= error_lyapunov_rate_bound(g, {0.0, 1.0}));

  // with f independent of x₂ the stated bound holds
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> d(-3.0, 3.0);
  for (int i = 0; i < 200; ++i) {
    const Vec a{d(rng), d(rng)}, b{d(rng), d(rng)};
    CHECK(error_lyapunov_rate(pendulum(), g, a, b) <=
          error_lyapunov_rate_bound_stated(g, {b[0] - a[0], b[1] - a[1]}) + 1e-12);
  }
}

TEST_CASE("certificate on the pendulum manifold") {
  const ObserverCertificate c = certify_observer(pendulum_law());
  CHECK(c.samples > 1000);
  CHECK(std::isfinite(c.M));
  CHECK(c.M > 0.0);
  CHECK(c.M == doctest::Approx(1.25 * c.M_raw));
  // S vanishes at the tangency seeds, so the measured margin is zero
  CHECK(std::fabs(c.gamma) <= 1e-6);
}

TEST_CASE("output feedback stabilizes the pendulum") {
  const FeedbackLaw& law = pendulum_law();
  const ObserverGains g = select_gains(1.0);
  const OutputFeedbackRun run =
      simulate_output_feedback(law, g, Vec{2.0, 0.0}, Vec{2.0, 1.0}, long_run());
  INFO(run.message);
  CHECK(run.status == SimStatus::Converged);
  REQUIRE(run.plant.size() == run.errors.size());
  REQUIRE(run.estimator.size() == run.errors.size());
  CHECK(run.plant.t == run.estimator.t);
  CHECK(run.plant.t.back() >= 20.0);

  for (std::size_t i = 0; i < run.errors.size(); ++i) {
    const ErrorSample& e = run.errors[i];
    CHECK(e.e1 == doctest::Approx(run.estimator.x[i][0] - run.plant.x[i][0]).epsilon(1e-15));
    if (e.t >= 20.0) CHECK(std::hypot(e.e1, e.e2) <= 1e-3);
    // V_e reaches the rounding floor of z − x near 1e-35
    if (i >= 2) CHECK(e.V_e <= run.errors[i - 1].V_e + 1e-20);
    const Vec& x = run.plant.x[i];
    const Vec& z = run.estimator.x[i];
    CHECK(error_lyapunov_rate(law.system(), g, x, z) <=
          error_lyapunov_rate_bound_stated(g, {e.e1, e.e2}) + 1e-12);
  }
  CHECK(norm(run.plant.x.back()) <= 1e-2);
  CHECK(run.plant.u_in_omega);

  for (const MismatchSample& m : run.mismatches) {
    CHECK(m.du != 0.0);
    CHECK(std::fabs(m.nu2 * m.du) <= m.bound);
  }

  // once the estimate has settled, W no longer increases along the plant
  double last_W = INFINITY;
  for (const ErrorSample& e : run.errors) {
    if (std::hypot(e.e1, e.e2) > 1e-6 || std::isnan(e.W)) continue;
    CHECK(e.W <= last_W + 1e-6);
    last_W = e.W;
  }
}

TEST_CASE("exact initial estimate reproduces the full-state loop") {
  const FeedbackLaw& law = pendulum_law();
  const ObserverGains g = select_gains(1.0);
  SimulationOptions opt;
  opt.t_max = 30.0;
  const OutputFeedbackRun run = simulate_output_feedback(law, g, Vec{2.0, 0.0}, Vec{2.0, 0.0}, opt);
  const Trajectory full = simulate_closed_loop(law, Vec{2.0, 0.0}, opt);
  for (const ErrorSample& e : run.errors) {
    CHECK(std::fabs(e.e1) <= 1e-9);
    CHECK(std::fabs(e.e2) <= 1e-9);
  }
  CHECK(run.mismatches.empty());
  CHECK(run.status == full.status);
  CHECK(run.plant.t_converged == doctest::Approx(full.t_converged).epsilon(1e-6));
}

TEST_CASE("output feedback input validation") {
  const FeedbackLaw& law = pendulum_law();
  const ObserverGains g = select_gains(1.0);
  CHECK_THROWS_AS(simulate_output_feedback(law, g, Vec{1.0}, Vec{1.0, 0.0}), DimensionError);
  CHECK_THROWS_AS(simulate_output_feedback(law, g, Vec{NAN, 0.0}, Vec{1.0, 0.0}), ValidationError);
  CHECK_THROWS_AS(simulate_output_feedback(law, ObserverGains{}, Vec{1.0, 0.0}, Vec{1.0, 0.0}),
                  ValidationError);
}
