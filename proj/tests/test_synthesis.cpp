#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numbers>
#include <random>

#include "fixtures.hpp"
#include "pmpstab/synthesis.hpp"

using namespace pmpstab;
using namespace pmpstab::testing;
using std::numbers::pi;

namespace {

std::shared_ptr<const LagrangianManifold> di_manifold(std::size_t seeds = 256, double k = 1.0) {
  static std::map<std::pair<std::size_t, double>, std::shared_ptr<const LagrangianManifold>> cache;
  auto& slot = cache[{seeds, k}];
  if (!slot) {
    ManifoldOptions o;
    o.seeds = seeds;
    o.tau_max = 10.0;
    slot = std::make_shared<const LagrangianManifold>(
        build_manifold(double_integrator(k), unit_circle(), o));
  }
  return slot;
}

std::vector<Expr> di_inner() { return exprs({"-x1-x2"}, 2); }

}  // namespace

TEST_CASE("decrease condition accepts the stabilizing law") {
  const DecreaseReport r = check_decrease(double_integrator(), unit_circle(), di_inner(), {});
  CHECK(r.samples > 256);
  CHECK(r.max_inside <= 1e-9);
  CHECK(r.level_margin <= 0.0);
  // |−x1−x2| peaks at √2 on the unit circle, before saturation
  CHECK(r.max_inner_abs == doctest::Approx(std::sqrt(2.0)).epsilon(1e-3));
}

TEST_CASE("decrease condition rejects a destabilizing law with a witness") {
  bool thrown = false;
  try {
    check_decrease(double_integrator(), unit_circle(), exprs({"x1"}, 2), {});
  } catch (const DecreaseViolation& e) {
    thrown = true;
    const Vec& w = e.witness();
    // V' = x2 (x1 + clamp(x1)) must be positive at the witness
    const double u = std::clamp(w[0], -1.0, 1.0);
    CHECK(w[1] * (w[0] + u) > 0.0);
    CHECK(e.derivative() == doctest::Approx(w[1] * (w[0] + u)).epsilon(1e-12));
    CHECK(0.5 * (w[0] * w[0] + w[1] * w[1]) <= 0.5 + 1e-12);
  }
  CHECK(thrown);
}

TEST_CASE("decrease condition on a drift-free zero system") {
  const ControlSystem zero = planar_affine("0", "0", "0", "0");
  const DecreaseReport r = check_decrease(zero, unit_circle(), di_inner(), {});
  CHECK(r.max_inside == 0.0);
  CHECK(r.level_margin == 0.0);
}

TEST_CASE("inner law validation") {
  CHECK_THROWS_AS(check_decrease(double_integrator(), unit_circle(), exprs({"-x1", "0"}, 2), {}),
                  DimensionError);
  CHECK_THROWS_AS(
      check_decrease(double_integrator(), unit_circle(), {Expr::parse("-u1", 2, 1)}, {}),
      ValidationError);
  FeedbackOptions bad;
  bad.C = 0.0;
  CHECK_THROWS_AS(assemble_feedback(di_manifold(), di_inner(), bad), ValidationError);
  CHECK_THROWS_AS(assemble_feedback(nullptr, di_inner(), {}), ValidationError);
}

TEST_CASE("feedback evaluation examples") {
  const FeedbackLaw law = assemble_feedback(di_manifold(), di_inner(), {});
  const Vec in{0.5, 0.0};
  const FeedbackValue v = law.evaluate(in);
  CHECK(v.inner);
  CHECK(v.u[0] == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK(eval_feedback(law, in)[0] == doctest::Approx(-0.5).epsilon(1e-15));

  // saturated inner law stays in Ω
  const Vec corner{0.7, 0.7};
  CHECK(law(corner)[0] == -1.0);

  // outside: bang-bang, sign opposite to the interpolated ⟨ν, b⟩ = ν2
  const Vec far{3.0, 3.0};
  const FeedbackValue o = law.evaluate(far);
  CHECK_FALSE(o.inner);
  CHECK(std::fabs(o.u[0]) == 1.0);
  CHECK(o.u[0] == (o.nu[1] > 0 ? -1.0 : 1.0));
  CHECK(law.switching_value(far) == doctest::Approx(o.nu[1]).epsilon(1e-12));

  CHECK_THROWS_AS(law.evaluate(Vec{500.0, -500.0}), NotCoveredError);
  CHECK(std::isnan(law.switching_value(Vec{500.0, -500.0})));
  try {
    law.evaluate(Vec{500.0, -500.0});
  } catch (const NotCoveredError& e) {
    CHECK(e.point() == Vec{500.0, -500.0});
  }
}

TEST_CASE("bound verification") {
  const FeedbackLaw law = assemble_feedback(di_manifold(), di_inner(), {});
  const BoundReport ok = verify_bound(law, {{-3, 3}, {-3, 3}}, 31);
  CHECK(ok.ok);
  CHECK(ok.samples == 31 * 31);
  CHECK(ok.max_abs == doctest::Approx(1.0));

  FeedbackOptions loose;
  loose.C = 1.0;
  const FeedbackLaw wide = assemble_feedback(di_manifold(256, 2.0), di_inner(), loose);
  const BoundReport bad = verify_bound(wide, {{-3, 3}, {-3, 3}}, 31);
  CHECK_FALSE(bad.ok);
  REQUIRE(bad.witness.has_value());
  CHECK(std::fabs(wide(*bad.witness)[0]) > 1.0);
  CHECK(bad.max_abs == doctest::Approx(2.0));
}

TEST_CASE("reference switching curve") {
  const auto p = reference_switching_point(3 * pi / 4);
  CHECK(p[0] == doctest::Approx(-0.5 - std::sqrt(2.0)).epsilon(1e-14));
  CHECK(p[1] == doctest::Approx(1.0 + std::sqrt(0.5)).epsilon(1e-14));
  const auto q = reference_switching_point(7 * pi / 4);
  CHECK(q[0] == doctest::Approx(0.5 + std::sqrt(2.0)).epsilon(1e-14));
  CHECK(q[1] == doctest::Approx(-1.0 - std::sqrt(0.5)).epsilon(1e-14));

  for (double t : {0.0, pi / 2, 1.0, pi, 4.0, 3 * pi / 2, 2 * pi, 7.0})
    CHECK_THROWS_AS(reference_switching_point(t), std::domain_error);

  // point symmetry x ↦ −x between the two arcs
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> d(pi / 2 + 1e-6, pi - 1e-6);
  for (int i = 0; i < 200; ++i) {
    const double t = d(rng);
    const auto a = reference_switching_point(t);
    const auto b = reference_switching_point(t + pi);
    CHECK(a[0] == doctest::Approx(-b[0]).epsilon(1e-12));
    CHECK(a[1] == doctest::Approx(-b[1]).epsilon(1e-12));
  }
  CHECK(reference_switching_curve({3 * pi / 4, 7 * pi / 4}).size() == 2);
}

TEST_CASE("manifold switching points follow the reference curve") {
  const auto man = di_manifold();
  std::size_t checked = 0;
  for (const SwitchPoint& s : man->switching_curve()) {
    if (s.ordinal != 0 || !in_reference_range(s.psi)) continue;
    const auto r = reference_switching_point(s.psi);
    CHECK(s.x[0] == doctest::Approx(r[0]).epsilon(1e-6));
    CHECK(s.x[1] == doctest::Approx(r[1]).epsilon(1e-6));
    ++checked;
  }
  CHECK(checked > 50);
}

TEST_CASE("property: the outer law minimizes the Hamiltonian") {
  const FeedbackLaw law = assemble_feedback(di_manifold(), di_inner(), {});
  const ControlSystem& sys = law.system();
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> d(-4.0, 4.0);
  std::size_t checked = 0;
  for (int i = 0; i < 500; ++i) {
    const Vec x{d(rng), d(rng)};
    FeedbackValue v;
    try {
      v = law.evaluate(x);
    } catch (const NotCoveredError&) {
      continue;
    }
    if (v.inner || v.degenerate) continue;
    REQUIRE(sys.omega().contains(v.u));
    const double h = dot(v.nu, sys.eval_dynamics(x, v.u));
    for (double w = -1.0; w <= 1.0; w += 0.05) {
      const Vec alt{w};
      CHECK(h <= dot(v.nu, sys.eval_dynamics(x, alt)) + 1e-12);
    }
    ++checked;
  }
  CHECK(checked > 300);
}

TEST_CASE("evaluation is deterministic") {
  const FeedbackLaw a = assemble_feedback(di_manifold(), di_inner(), {});
  const FeedbackLaw b = assemble_feedback(di_manifold(), di_inner(), {});
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> d(-3.0, 3.0);
  for (int i = 0; i < 200; ++i) {
    const Vec x{d(rng), d(rng)};
    CHECK(a(x) == b(x));
    CHECK(a(x) == a(x));
  }
}

TEST_CASE("reference parameters avoid the asymptotes") {
  const auto taus = reference_taus(50);
  REQUIRE(taus.size() == 50);
  CHECK(taus.front() == doctest::Approx(pi / 2 + 0.05).epsilon(1e-15));
  CHECK(taus[24] == doctest::Approx(pi - 0.05).epsilon(1e-15));
  CHECK(taus[25] == doctest::Approx(3 * pi / 2 + 0.05).epsilon(1e-15));
  CHECK(taus.back() == doctest::Approx(2 * pi - 0.05).epsilon(1e-15));
  for (double t : taus) CHECK(in_reference_range(t));
  CHECK(reference_taus(1).size() == 1);
}

TEST_CASE("distance to polylines") {
  auto sp = [](double a, double b) {
    SwitchPoint p;
    p.x = {a, b};
    return p;
  };
  const std::vector<std::vector<SwitchPoint>> lines{{sp(0, 0), sp(2, 0)}, {sp(5, 5)}};
  CHECK(distance_to_polylines({1.0, 1.0}, lines) == 1.0);
  CHECK(distance_to_polylines({3.0, 0.0}, lines) == 1.0);
  CHECK(distance_to_polylines({5.0, 8.0}, lines) == 3.0);
  CHECK(std::isinf(distance_to_polylines({0.0, 0.0}, {})));
}

TEST_CASE("computed switching curve matches the reference away from the asymptotes") {
  // the first switch on branch ψ happens at τ = |tan ψ|; stay well inside τ <= 10
  const CurveComparison c = compare_switching_curve(*di_manifold(), reference_taus(40, 0.5));
  CHECK(c.points == 40);
  CHECK(c.max_deviation <= 1e-3);

  const CurveComparison far = compare_switching_curve(*di_manifold(), {pi / 2 + 0.05});
  CHECK(far.max_deviation > 1.0);
}
