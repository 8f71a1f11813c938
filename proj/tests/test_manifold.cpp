#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "fixtures.hpp"
#include "pmpstab/manifold.hpp"

using namespace pmpstab;
using namespace pmpstab::testing;
using std::numbers::pi;

namespace {

ManifoldOptions options(std::size_t seeds, double tau_max) {
  ManifoldOptions o;
  o.seeds = seeds;
  o.tau_max = tau_max;
  return o;
}

// Closed-form double-integrator branch from the unit circle before any switch:
// ν(τ) = (cosψ, sinψ + τ cosψ), u = −sgn ν₂, x₁' = −x₂, x₂' = −u.
Vec di_state(double psi, double tau) {
  const double s = std::sin(psi) > 0 ? 1.0 : -1.0;  // sign of ν₂ at τ = 0⁺
  const double x2 = std::sin(psi) + s * tau;
  const double x1 = std::cos(psi) - std::sin(psi) * tau - 0.5 * s * tau * tau;
  return {x1, x2};
}

}  // namespace

TEST_CASE("seed examples") {
  const LyapunovSpec V = unit_circle();
  const Seed s0 = seed_at(V, 0.0);
  CHECK(s0.x0[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::fabs(s0.x0[1]) <= 1e-12);
  CHECK(s0.nu0 == V.gradient(s0.x0));
  const Seed s1 = seed_at(V, pi / 2);
  CHECK(std::fabs(s1.x0[0]) <= 1e-12);
  CHECK(s1.x0[1] == doctest::Approx(1.0).epsilon(1e-12));

  const auto seeds = seed_manifold(V, 256);
  REQUIRE(seeds.size() == 256);
  for (std::size_t k = 0; k < seeds.size(); ++k) {
    CHECK(seeds[k].psi == doctest::Approx(2 * pi * double(k) / 256.0).epsilon(1e-15));
    CHECK(std::fabs(V.value(seeds[k].x0) - 0.5) <= 1e-12);
  }
  CHECK_THROWS(seed_manifold(V, 4));

  const LyapunovSpec line(Expr::parse("0.5*x1^2", 1, 0), 1, 0.5, {{-10, 10}});
  const auto two = seed_manifold(line, 8);
  REQUIRE(two.size() == 2);
  CHECK(two[0].x0[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(two[1].x0[0] == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("branch at psi = 3pi/4 switches at tau = 1") {
  const auto br = integrate_bicharacteristic(double_integrator(), unit_circle(),
                                             seed_at(unit_circle(), 3 * pi / 4), options(8, 3.0));
  REQUIRE_FALSE(br.failure);
  REQUIRE(br.switch_count() >= 1);
  const auto& ev = br.events.front();
  CHECK(ev.kind == EventKind::Switch);
  CHECK(ev.tau == doctest::Approx(1.0).epsilon(1e-9));
  const Vec expect = {-0.5 - std::sqrt(2.0), 1.0 + std::sqrt(0.5)};
  CHECK(distance(ev.x, expect) <= 1e-8);
  CHECK(std::fabs(ev.nu[1]) <= 1e-9);
  CHECK(std::fabs(ev.bracket) > 1e-8);

  // before the switch the branch follows the closed form
  for (double tau : {0.1, 0.5, 0.9}) CHECK(distance(br.state_at(tau).x, di_state(3 * pi / 4, tau)) <= 1e-9);
}

TEST_CASE("branch at psi = 0 keeps W and S constant") {
  const auto br = integrate_bicharacteristic(double_integrator(), unit_circle(),
                                             seed_at(unit_circle(), 0.0), options(8, 5.0));
  REQUIRE_FALSE(br.failure);
  CHECK(br.switch_count() == 0);
  CHECK(br.tau_end() == doctest::Approx(5.0));
  for (std::size_t i = 0; i < br.size(); ++i) {
    CHECK(std::fabs(br.W(i) - 0.5) <= 1e-9);
    CHECK(std::fabs(br.S(i)) <= 1e-9);
    CHECK(std::fabs(br.nu(i)[1] - br.tau(i)) <= 1e-9);
  }
}

TEST_CASE("branch at psi = pi/2 never switches") {
  const auto br = integrate_bicharacteristic(double_integrator(), unit_circle(),
                                             seed_at(unit_circle(), pi / 2), options(8, 10.0));
  CHECK(br.switch_count() == 0);
  for (std::size_t i = 0; i < br.size(); ++i) CHECK(br.nu(i)[1] == doctest::Approx(1.0));
}

TEST_CASE("manifold build, switch families and queries") {
  const LagrangianManifold man = build_manifold(double_integrator(), unit_circle(), options(256, 10.0));
  REQUIRE(man.branches().size() == 256);
  CHECK(man.failures().empty());
  for (std::size_t k = 0; k < 256; ++k) {
    const double psi = man.seeds()[k].psi;
    const bool expect_switch = std::tan(psi) < -1e-12 && -std::tan(psi) < 10.0;
    CHECK((man.branches()[k].switch_count() > 0) == expect_switch);
  }

  // the first switch of each branch lies on the closed-form curve family
  for (const auto& p : man.switching_curve()) {
    if (p.ordinal != 0) continue;
    CHECK(p.tau == doctest::Approx(-std::tan(p.psi)).epsilon(1e-8));
    CHECK(distance(p.x, di_state(p.psi, p.tau)) <= 1e-8);
    CHECK(std::fabs(p.nu[0]) > 1e-8);  // ⟨ν, ad_f b⟩ = −ν₁
  }

  const auto& b = man.branches()[10];
  const ManifoldQuery q = man.query(b.x(5));
  CHECK(q.covered);
  CHECK(q.distance == 0.0);

  const auto curve = man.switching_curve();
  const auto hit = std::find_if(curve.begin(), curve.end(),
                                [](const SwitchPoint& p) { return std::fabs(p.psi - 3 * pi / 4) < 1e-12; });
  REQUIRE(hit != curve.end());
  const ManifoldQuery qs = man.query(hit->x);
  REQUIRE(qs.covered);
  CHECK(std::fabs(qs.nu[1]) <= 1e-6);

  const double far[] = {100.0, 100.0};
  const LagrangianManifold small = build_manifold(double_integrator(), unit_circle(), options(16, 0.5));
  CHECK_FALSE(small.query(far).covered);
}

TEST_CASE("jacobian along branches") {
  const LagrangianManifold man = build_manifold(double_integrator(), unit_circle(), options(256, 2.0));
  // branch 32 is ψ = π/4
  const double expect = -std::sqrt(0.5) * (1.0 - std::sqrt(0.5));
  CHECK(man.jacobian_along(32, 0.0) == doctest::Approx(expect).epsilon(1e-3));
  CHECK(std::fabs(man.jacobian_along(0, 0.0)) <= 1e-3);  // tangency seed
  CHECK_THROWS_AS(man.jacobian_along(32, 2.5), std::out_of_range);
}

TEST_CASE("illumination") {
  const LagrangianManifold man = build_manifold(double_integrator(), unit_circle(), options(256, 10.0));
  const auto r = man.illumination_check({{0.0, 0.0}, {3.0, 3.0}, {-3.0, -3.0}});
  CHECK(r[0] == Illumination::Inner);
  CHECK(r[1] == Illumination::Illuminated);
  CHECK(r[2] == Illumination::Illuminated);
  const LagrangianManifold short_man = build_manifold(double_integrator(), unit_circle(), options(256, 0.1));
  CHECK(short_man.illumination_check({{3.0, 3.0}})[0] == Illumination::Dark);
}

TEST_CASE("wedges between diverging neighbours are covered") {
  // just past the switching curve the switch points are about 1.4 apart, so
  // (-8.7, 4.1) is farther than any sample's coverage radius
  const LagrangianManifold man = build_manifold(double_integrator(), unit_circle(), options(256, 10.0));
  const Vec x{-8.7, 4.1};
  const ManifoldQuery q = man.query(x);
  REQUIRE(q.covered);
  CHECK(q.distance > man.coverage_radius(q.ref));
  // below the switching curve the time-optimal control is u = +1, so ν₂ < 0
  const CostateEstimate e = man.interpolate(x);
  REQUIRE(e.covered);
  CHECK(e.nu[1] < 0.0);
  CHECK(man.illumination_check({x})[0] == Illumination::Illuminated);
}

TEST_CASE("scalar system has no switches") {
  const ControlSystem sys =
      ControlSystem::affine(1, {Expr::parse("0", 1, 0)}, {{Expr::parse("1", 1, 0)}}, ControlSet::unit_box(1));
  const LyapunovSpec V(Expr::parse("0.5*x1^2", 1, 0), 1, 0.5, {{-20, 20}});
  const LagrangianManifold man = build_manifold(sys, V, options(8, 5.0));
  CHECK(man.branches().size() == 2);
  CHECK(man.switching_curve().empty());
  CHECK(man.branches()[0].state_at(2.0).x[0] == doctest::Approx(3.0));
}

TEST_CASE("pendulum manifold switches are transversal") {
  const LyapunovSpec V = unit_circle(0.125);
  const LagrangianManifold man = build_manifold(pendulum(), V, options(64, 5.0));
  CHECK(man.failures().empty());
  for (const auto& p : man.switching_curve()) {
    CHECK(std::fabs(p.nu[0]) > 1e-8);
    const double bracket = dot(p.nu, pendulum().lie_bracket_adfb(p.x));
    CHECK(bracket == doctest::Approx(-p.nu[0]));
  }
}

TEST_CASE("property: Hamiltonian is conserved along branches") {
  for (const auto& sys : {double_integrator(), pendulum()}) {
    const LagrangianManifold man = build_manifold(sys, unit_circle(0.125), options(64, 6.0));
    for (const auto& b : man.branches()) {
      double worst = 0.0;
      for (std::size_t i = 0; i < b.size(); ++i) worst = std::max(worst, std::fabs(b.S(i) - b.S(0)));
      CHECK(worst <= 1e-7);
    }
  }
}

TEST_CASE("property: scaling the seed co-state scales ν and W − V only") {
  const ControlSystem sys = pendulum();
  const LyapunovSpec V = unit_circle();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ang(0.0, 2 * pi), lam(0.2, 5.0);
  for (int s = 0; s < 20; ++s) {
    const Seed seed = seed_at(V, ang(rng));
    const double l = lam(rng);
    Seed scaled = seed;
    for (auto& v : scaled.nu0) v *= l;
    // scaling ν changes the step sequence, so integrate tightly
    ManifoldOptions tight = options(8, 4.0);
    tight.ode.rtol = 1e-12;
    tight.ode.atol = 1e-14;
    const auto a = trace_flow(sys, seed, 0.5, 4.0, -1, tight);
    const auto b = trace_flow(sys, scaled, 0.5, 4.0, -1, tight);
    REQUIRE(a.events.size() == b.events.size());
    for (std::size_t e = 0; e < a.events.size(); ++e)
      CHECK(distance(a.events[e].x, b.events[e].x) <= 1e-9);
    for (double tau : {0.5, 1.7, 3.9}) {
      const auto sa = a.state_at(tau), sb = b.state_at(tau);
      CHECK(distance(sa.x, sb.x) <= 1e-9);
      for (int i = 0; i < 2; ++i) CHECK(sb.nu[i] == doctest::Approx(l * sa.nu[i]).epsilon(1e-8));
      CHECK((sb.W - 0.5) == doctest::Approx(l * (sa.W - 0.5)).epsilon(1e-7));
    }
  }
}

TEST_CASE("property: W is path independent up to the Stokes term") {
  // ν·∂x/∂ψ stays 0, so the cross path at fixed τ carries no action and the
  // two routes differ only by ∬ dν∧dx = −(S_b − S_a)τ.
  const LyapunovSpec V = unit_circle();
  const ManifoldOptions opt = options(8, 3.0);
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> ang(0.0, 2 * pi), gap(0.05, 0.5), t(0.2, 2.5);
  for (const auto& sys : {double_integrator(), pendulum()}) {
    for (int s = 0; s < 20; ++s) {
      const double pa = ang(rng), pb = pa + gap(rng), tau = t(rng);
      const auto ba = integrate_bicharacteristic(sys, V, seed_at(V, pa), opt);
      const auto bb = integrate_bicharacteristic(sys, V, seed_at(V, pb), opt);
      const double across = transverse_action(sys, V, pa, pb, tau, 400, opt);
      INFO("psi_a=", pa, " psi_b=", pb, " tau=", tau);
      CHECK(std::fabs(across) <= 1e-5);
      const double stokes = -(bb.S(0) - ba.S(0)) * tau;
      CHECK(std::fabs(ba.state_at(tau).W + across + stokes - bb.state_at(tau).W) <= 1e-5);
    }
  }
}

TEST_CASE("property: forward flow returns samples to the seed") {
  const ControlSystem sys = double_integrator();
  const LyapunovSpec V = unit_circle();
  const LagrangianManifold man = build_manifold(sys, V, options(64, 4.0));
  std::mt19937_64 rng(8);
  for (int s = 0; s < 20; ++s) {
    const auto& ref = man.samples()[rng() % man.sample_count()];
    const auto& b = man.branches()[ref.branch];
    const double tau = b.tau(ref.index);
    if (tau == 0.0) continue;
    Seed start{0.0, Vec(b.x(ref.index).begin(), b.x(ref.index).end()),
               Vec(b.nu(ref.index).begin(), b.nu(ref.index).end())};
    const auto back = trace_flow(sys, start, b.W(ref.index), tau, +1, man.options());
    REQUIRE(back.size() > 0);
    CHECK(back.tau_end() == doctest::Approx(tau).epsilon(1e-12));
    const auto end = back.state_at(back.tau_end());
    CHECK(distance(end.x, b.seed.x0) <= 1e-6);
    CHECK(std::fabs(V.value(end.x) - 0.5) <= 1e-6);
  }
}

TEST_CASE("manifold build is deterministic across thread counts") {
  ManifoldOptions one = options(32, 4.0), many = options(32, 4.0);
  one.threads = 1;
  many.threads = 4;
  const auto a = build_manifold(pendulum(), unit_circle(0.125), one);
  const auto b = build_manifold(pendulum(), unit_circle(0.125), many);
  REQUIRE(a.sample_count() == b.sample_count());
  for (std::size_t k = 0; k < 32; ++k) {
    const auto& ba = a.branches()[k];
    const auto& bb = b.branches()[k];
    REQUIRE(ba.size() == bb.size());
    for (std::size_t i = 0; i < ba.size(); ++i) {
      CHECK(ba.x(i)[0] == bb.x(i)[0]);
      CHECK(ba.W(i) == bb.W(i));
    }
  }
}
