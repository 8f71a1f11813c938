#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>
#include <random>

#include "fixtures.hpp"
#include "pmpstab/simulate.hpp"

using namespace pmpstab;
using namespace pmpstab::testing;

namespace {

std::shared_ptr<const LagrangianManifold> di_manifold() {
  static std::shared_ptr<const LagrangianManifold> man = [] {
    ManifoldOptions o;
    o.seeds = 256;
    o.tau_max = 10.0;
    return std::make_shared<const LagrangianManifold>(
        build_manifold(double_integrator(), unit_circle(), o));
  }();
  return man;
}

const FeedbackLaw& di_law() {
  static const FeedbackLaw law = assemble_feedback(di_manifold(), exprs({"-x1-x2"}, 2), {});
  return law;
}

// ẋ = u with u = −sgn x: reaches 0 and slides with u_eq = 0.
HybridModel relay() {
  HybridModel m;
  m.dim = 1;
  m.m = 1;
  m.mode = [](std::span<const double> y) { return y[0] >= 0.0 ? 1 : 2; };
  m.control = [](int mode, std::span<const double>) { return Vec{mode == 1 ? -1.0 : 1.0}; };
  m.field = [](std::span<const double>, std::span<const double> u, std::span<double> dy) {
    dy[0] = u[0];
  };
  m.surface = [](int, int, std::span<const double> y) { return y[0]; };
  return m;
}

}  // namespace

TEST_CASE("relay reaches the surface and slides with zero equivalent control") {
  FilippovStepper st(relay(), {}, 0.0, {1.0});
  CHECK_FALSE(st.sliding());
  StepOutcome last;
  bool entered = false;
  while (st.t() < 3.0) {
    last = st.step(0.05);
    if (last.event == SimEventKind::SlidingEnter) {
      entered = true;
      CHECK(last.t == doctest::Approx(1.0).epsilon(1e-10));
    }
  }
  CHECK(entered);
  CHECK(st.sliding());
  CHECK(st.sliding_alpha(st.y()) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(std::fabs(st.u()[0]) <= 1e-12);
  CHECK(std::fabs(st.y()[0]) <= 1e-10);
  CHECK(std::fabs(st.sliding_surface_rate()) <= 1e-6);
}

TEST_CASE("relay started on the surface slides at once") {
  FilippovStepper st(relay(), {}, 0.0, {0.0});
  CHECK(st.sliding());
  st.step(0.5);
  CHECK(std::fabs(st.y()[0]) <= 1e-12);
}

TEST_CASE("sliding ends when the equivalent control leaves the admissible range") {
  // ẋ = u + t/2 with u = −sgn x: sliding needs |t/2| < 1, so it ends at t = 2
  HybridModel m = relay();
  m.dim = 2;  // second component carries time
  m.mode = [](std::span<const double> y) { return y[0] >= 0.0 ? 1 : 2; };
  m.field = [](std::span<const double> y, std::span<const double> u, std::span<double> dy) {
    dy[0] = u[0] + 0.5 * y[1];
    dy[1] = 1.0;
  };
  FilippovStepper st(m, {}, 0.0, {0.0, 0.0});
  REQUIRE(st.sliding());
  double exit_t = -1.0;
  while (st.t() < 3.0) {
    const StepOutcome o = st.step(0.05);
    if (o.event == SimEventKind::SlidingExit) exit_t = o.t;
  }
  CHECK(exit_t == doctest::Approx(2.0).epsilon(1e-8));
  CHECK_FALSE(st.sliding());
  CHECK(st.y()[0] > 0.0);
}

TEST_CASE("double integrator converges from (3, 3)") {
  const FeedbackLaw& law = di_law();
  SimulationOptions opt;
  opt.t_max = 30.0;
  const Trajectory tr = simulate_closed_loop(law, Vec{3.0, 3.0}, opt);
  INFO(tr.message);
  CHECK(tr.status == SimStatus::Converged);
  CHECK(tr.u_in_omega);
  CHECK(tr.max_abs_u <= 1.0);
  CHECK(tr.max_inner_v_increase <= 1e-9);
  CHECK_FALSE(tr.left_inner_after_entry);
  CHECK(tr.forced_sliding == 0);

  std::size_t switches = 0, boundary = 0;
  for (const auto& e : tr.events) {
    switches += e.kind == SimEventKind::ControlSwitch;
    boundary += e.kind == SimEventKind::BoundaryCross;
  }
  CHECK(switches >= 1);
  CHECK(boundary >= 1);
  for (std::size_t i = 1; i < tr.size(); ++i) CHECK(tr.t[i] > tr.t[i - 1]);
}

TEST_CASE("property: bang-bang arcs conserve x2^2/2 - u x1") {
  const FeedbackLaw& law = di_law();
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> d(-3.0, 3.0);
  for (int trial = 0; trial < 8; ++trial) {
    const Vec x0{d(rng), d(rng)};
    if (law.in_inner_region(x0)) continue;
    SimulationOptions opt;
    opt.t_max = 20.0;
    const Trajectory tr = simulate_closed_loop(law, x0, opt);
    for (std::size_t i = 1; i < tr.size(); ++i) {
      if (tr.flag[i] != 0 || tr.flag[i - 1] != 0) continue;
      if (law.in_inner_region(tr.x[i]) || law.in_inner_region(tr.x[i - 1])) continue;
      if (tr.u[i] != tr.u[i - 1]) continue;
      const double u = tr.u[i][0];
      const auto energy = [&](const Vec& x) { return 0.5 * x[1] * x[1] - u * x[0]; };
      CHECK(energy(tr.x[i]) == doctest::Approx(energy(tr.x[i - 1])).epsilon(1e-7));
    }
  }
}

TEST_CASE("the origin is an equilibrium of the closed loop") {
  SimulationOptions opt;
  opt.t_max = 5.0;
  const Trajectory tr = simulate_closed_loop(di_law(), Vec{0.0, 0.0}, opt);
  CHECK(tr.status == SimStatus::Converged);
  for (const auto& x : tr.x) CHECK(norm(x) == 0.0);
}

TEST_CASE("uncovered start and input validation") {
  const Trajectory tr = simulate_closed_loop(di_law(), Vec{500.0, 500.0}, {});
  CHECK(tr.status == SimStatus::NotCovered);
  CHECK_FALSE(tr.message.empty());
  CHECK_THROWS_AS(simulate_closed_loop(di_law(), Vec{1.0}, {}), DimensionError);
  CHECK_THROWS_AS(simulate_closed_loop(di_law(), Vec{NAN, 0.0}, {}), ValidationError);
}

TEST_CASE("batch simulation and the stabilization verdict") {
  const std::vector<Vec> x0s{{3.0, 3.0}, {-2.0, 1.0}, {0.3, -0.2}, {1.5, -2.5}};
  SimulationOptions opt;
  opt.t_max = 30.0;
  const auto one = simulate_batch(di_law(), x0s, opt, 1);
  const auto four = simulate_batch(di_law(), x0s, opt, 4);
  REQUIRE(one.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(one[i].t == four[i].t);
    CHECK(one[i].x == four[i].x);
  }
  const auto v = stabilization_verdict(one, {{1.0, 0.5}, {5.0, 3.0}});
  CHECK(v.converged_all);
  CHECK(v.stable_all);
  CHECK(v.stability_tested >= 2);

  // the same verdict with a destabilized copy of one trajectory
  auto bad = one;
  bad[1].status = SimStatus::Diverged;
  bad[2].x.push_back({4.0, 4.0});
  const auto w = stabilization_verdict(bad, {{1.0, 0.5}});
  CHECK_FALSE(w.converged_all);
  CHECK(w.convergence_witness == std::optional<std::size_t>(1));
  CHECK_FALSE(w.stable_all);
  CHECK(w.stability_witness == std::optional<std::size_t>(2));
}

TEST_CASE("a destabilizing closed loop diverges") {
  HybridModel m = relay();
  m.control = [](int mode, std::span<const double>) { return Vec{mode == 1 ? 1.0 : -1.0}; };
  FilippovStepper st(m, {}, 0.0, {0.1});
  while (st.t() < 2.0) st.step(0.1);
  CHECK(st.y()[0] == doctest::Approx(2.1).epsilon(1e-9));
}
