#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "pmpstab/config.hpp"
#include "pmpstab/hamiltonian.hpp"
#include "pmpstab/io.hpp"
#include "pmpstab/manifold.hpp"
#include "pmpstab/observer.hpp"
#include "pmpstab/simulate.hpp"
#include "pmpstab/synthesis.hpp"

namespace py = pybind11;
using namespace pmpstab;

namespace {

std::vector<Expr> parse_exprs(const std::vector<std::string>& src, std::size_t n, std::size_t m) {
  std::vector<Expr> out;
  out.reserve(src.size());
  for (const auto& s : src) out.push_back(Expr::parse(s, n, m));
  return out;
}

ControlSet make_control_set(const std::optional<std::vector<Interval>>& bounds,
                            const std::optional<std::vector<Vec>>& points, std::size_t m) {
  if (bounds && points) throw ValidationError("give either bounds or points, not both");
  if (points) return ControlSet::finite(*points);
  if (bounds) return ControlSet::box(*bounds);
  return ControlSet::unit_box(m);
}

py::dict trajectory_dict(const Trajectory& tr) {
  py::dict d;
  d["t"] = tr.t;
  d["x"] = tr.x;
  d["u"] = tr.u;
  d["event_flag"] = std::vector<int>(tr.flag.begin(), tr.flag.end());
  d["status"] = sim_status_name(tr.status);
  d["message"] = tr.message;
  d["max_abs_u"] = tr.max_abs_u;
  d["u_in_omega"] = tr.u_in_omega;
  return d;
}

SimulationOptions sim_options(double t_max, double dwell_time) {
  SimulationOptions o;
  o.t_max = t_max;
  o.dwell_time = dwell_time;
  return o;
}

std::shared_ptr<const LagrangianManifold> manifold_from(const ControlSystem& sys,
                                                        const LyapunovSpec& lyap,
                                                        const ManifoldOptions& opt) {
  return std::make_shared<const LagrangianManifold>(build_manifold(sys, lyap, opt));
}

}  // namespace

PYBIND11_MODULE(pmpstab, m) {
  m.doc() = "Bang-bang stabilizing feedback from Lagrangian manifolds of the Pontryagin system.";

  py::register_exception<ExprSyntaxError>(m, "ExprSyntaxError", PyExc_ValueError);
  py::register_exception<NotCoveredError>(m, "NotCoveredError", PyExc_RuntimeError);

  py::class_<Expr>(m, "Expr")
      .def_static("parse", &Expr::parse, py::arg("source"), py::arg("n"), py::arg("m") = 0)
      .def("eval",
           [](const Expr& e, const Vec& x, const Vec& u, double t) { return e.eval(x, u, t); },
           py::arg("x"), py::arg("u") = Vec{}, py::arg("t") = 0.0)
      .def("diff_x", [](const Expr& e, std::size_t i) { return e.diff(Variable::state(i)); },
           py::arg("i"), "Partial derivative in x_{i+1}.")
      .def("diff_u", [](const Expr& e, std::size_t j) { return e.diff(Variable::control(j)); },
           py::arg("j"))
      .def("__str__", &Expr::str)
      .def("__repr__", [](const Expr& e) { return "Expr(" + e.str() + ")"; });

  py::class_<ControlSystem>(m, "ControlSystem")
      .def_static(
          "affine",
          [](const std::vector<std::string>& drift,
             const std::vector<std::vector<std::string>>& columns,
             std::optional<std::vector<Interval>> bounds, std::optional<std::vector<Vec>> points) {
            const std::size_t n = drift.size();
            std::vector<std::vector<Expr>> cols;
            for (const auto& c : columns) cols.push_back(parse_exprs(c, n, 0));
            return ControlSystem::affine(n, parse_exprs(drift, n, 0), std::move(cols),
                                         make_control_set(bounds, points, columns.size()));
          },
          py::arg("drift"), py::arg("columns"), py::arg("bounds") = py::none(),
          py::arg("points") = py::none(),
          "dx/dt = drift(x) + sum_j u_j columns[j](x); Ω defaults to [-1, 1]^m.")
      .def_static(
          "general",
          [](const std::vector<std::string>& f, std::size_t m,
             std::optional<std::vector<Interval>> bounds, std::optional<std::vector<Vec>> points) {
            const std::size_t n = f.size();
            return ControlSystem::general(n, m, parse_exprs(f, n, m),
                                          make_control_set(bounds, points, m));
          },
          py::arg("f"), py::arg("m"), py::arg("bounds") = py::none(),
          py::arg("points") = py::none())
      .def_property_readonly("n", &ControlSystem::n)
      .def_property_readonly("m", &ControlSystem::m)
      .def_property_readonly("is_affine", &ControlSystem::is_affine)
      .def("eval_dynamics",
           [](const ControlSystem& s, const Vec& x, const Vec& u, double t) {
             return s.eval_dynamics(t, x, u);
           },
           py::arg("x"), py::arg("u"), py::arg("t") = 0.0)
      .def("lie_bracket_adfb", [](const ControlSystem& s, const Vec& x) { return s.lie_bracket_adfb(x); },
           py::arg("x"))
      .def("rank_condition", [](const ControlSystem& s, const Vec& x) { return s.rank_condition(x); },
           py::arg("x"));

  m.def(
      "minimize_hamiltonian",
      [](const ControlSystem& s, const Vec& x, const Vec& nu, double t) {
        const MinimizerResult r = minimize_hamiltonian(s, t, x, nu);
        return py::make_tuple(r.u_star, r.s_value, r.degenerate);
      },
      py::arg("system"), py::arg("x"), py::arg("nu"), py::arg("t") = 0.0,
      "Returns (u_star, S, degenerate).");
  m.def(
      "hamiltonian_value",
      [](const ControlSystem& s, const Vec& x, const Vec& nu, double t) {
        return hamiltonian_value(s, t, x, nu);
      },
      py::arg("system"), py::arg("x"), py::arg("nu"), py::arg("t") = 0.0);

  py::class_<LyapunovSpec>(m, "Lyapunov")
      .def(py::init([](const std::string& V, std::size_t n, double epsilon,
                       std::optional<Box> box) {
             return LyapunovSpec(Expr::parse(V, n, 0), n, epsilon,
                                 box.value_or(Box(n, Interval{-20.0, 20.0})));
           }),
           py::arg("V"), py::arg("n"), py::arg("epsilon") = 0.5, py::arg("box") = py::none())
      .def_property_readonly("epsilon", &LyapunovSpec::epsilon)
      .def("value", [](const LyapunovSpec& l, const Vec& x) { return l.value(x); }, py::arg("x"))
      .def("gradient", [](const LyapunovSpec& l, const Vec& x) { return l.gradient(x); },
           py::arg("x"));

  py::class_<SwitchPoint>(m, "SwitchPoint")
      .def_readonly("x", &SwitchPoint::x)
      .def_readonly("nu", &SwitchPoint::nu)
      .def_readonly("branch", &SwitchPoint::branch)
      .def_readonly("psi", &SwitchPoint::psi)
      .def_readonly("tau", &SwitchPoint::tau)
      .def_readonly("ordinal", &SwitchPoint::ordinal);

  py::class_<LagrangianManifold, std::shared_ptr<LagrangianManifold>>(m, "Manifold")
      .def_property_readonly("branch_count",
                             [](const LagrangianManifold& man) { return man.branches().size(); })
      .def_property_readonly("sample_count", &LagrangianManifold::sample_count)
      .def_property_readonly("failed_branches",
                             [](const LagrangianManifold& man) { return man.failures().size(); })
      .def("switching_curve", &LagrangianManifold::switching_curve)
      .def(
          "illumination",
          [](const LagrangianManifold& man, const std::vector<Vec>& pts) {
            std::vector<std::string> out;
            for (Illumination c : man.illumination_check(pts)) out.emplace_back(illumination_name(c));
            return out;
          },
          py::arg("points"), "'inner', 'illuminated' or 'dark' per point.")
      .def(
          "query",
          [](const LagrangianManifold& man, const Vec& x) -> py::object {
            const ManifoldQuery q = man.query(x);
            if (!q.covered) return py::none();
            py::dict d;
            d["nu"] = q.nu;
            d["W"] = q.W;
            d["u"] = q.u;
            d["distance"] = q.distance;
            d["multivalued"] = q.multivalued;
            return d;
          },
          py::arg("x"), "Nearest covering sample, or None outside the projection.")
      .def(
          "to_csv",
          [](const LagrangianManifold& man) {
            std::ostringstream out;
            write_manifold_csv(out, man);
            return out.str();
          });

  m.def(
      "build_manifold",
      [](const ControlSystem& s, const LyapunovSpec& l, std::size_t seeds, double tau_max,
         unsigned threads) {
        ManifoldOptions o;
        o.seeds = seeds;
        o.tau_max = tau_max;
        o.threads = threads;
        py::gil_scoped_release release;
        return std::const_pointer_cast<LagrangianManifold>(manifold_from(s, l, o));
      },
      py::arg("system"), py::arg("lyapunov"), py::arg("seeds") = 256, py::arg("tau_max") = 10.0,
      py::arg("threads") = 0u);

  py::class_<FeedbackLaw>(m, "FeedbackLaw")
      .def_property_readonly("epsilon", &FeedbackLaw::epsilon)
      .def_property_readonly("C", &FeedbackLaw::C)
      .def("__call__", [](const FeedbackLaw& law, const Vec& x) { return law(x); }, py::arg("x"))
      .def(
          "evaluate",
          [](const FeedbackLaw& law, const Vec& x) {
            const FeedbackValue v = law.evaluate(x);
            py::dict d;
            d["u"] = v.u;
            d["inner"] = v.inner;
            d["nu"] = v.nu;
            d["W"] = v.W;
            d["degenerate"] = v.degenerate;
            d["multivalued"] = v.multivalued;
            return d;
          },
          py::arg("x"))
      .def("switching_value",
           [](const FeedbackLaw& law, const Vec& x) { return law.switching_value(x); },
           py::arg("x"))
      .def(
          "simulate",
          [](const FeedbackLaw& law, const Vec& x0, double t_max, double dwell_time) {
            Trajectory tr;
            {
              py::gil_scoped_release release;
              tr = simulate_closed_loop(law, x0, sim_options(t_max, dwell_time));
            }
            return trajectory_dict(tr);
          },
          py::arg("x0"), py::arg("t_max") = 100.0, py::arg("dwell_time") = 1.0)
      .def(
          "to_csv",
          [](const FeedbackLaw& law) {
            std::ostringstream out;
            write_feedback(out, law);
            return out.str();
          });

  m.def(
      "assemble_feedback",
      [](std::shared_ptr<LagrangianManifold> man, const std::vector<std::string>& inner, double C) {
        FeedbackOptions o;
        o.C = C;
        const std::size_t n = man->system().n();
        return assemble_feedback(std::move(man), parse_exprs(inner, n, 0), o);
      },
      py::arg("manifold"), py::arg("inner"), py::arg("C") = 1.0,
      "Checks the decrease condition of the inner law and returns the composite law.");

  py::class_<RunConfig>(m, "Config")
      .def_static("load", &load_config, py::arg("path"))
      .def_static("parse", &parse_config, py::arg("json_text"))
      .def("echo", &echo_config)
      .def("system", &build_system)
      .def("lyapunov", &build_lyapunov)
      .def(
          "synthesize",
          [](const RunConfig& cfg) {
            const ControlSystem sys = build_system(cfg);
            const LyapunovSpec lyap = build_lyapunov(cfg);
            std::shared_ptr<const LagrangianManifold> man;
            {
              py::gil_scoped_release release;
              man = manifold_from(sys, lyap, cfg.manifold);
            }
            return assemble_feedback(std::move(man), build_inner(cfg), cfg.feedback);
          },
          "Builds the manifold and the composite law described by the config.")
      .def("gains", &build_gains);

  py::class_<ObserverGains>(m, "ObserverGains")
      .def(py::init([](double beta1, double beta2, double delta, double L) {
             return ObserverGains{beta1, beta2, delta, L};
           }),
           py::arg("beta1"), py::arg("beta2"), py::arg("delta"), py::arg("L"))
      .def_readwrite("beta1", &ObserverGains::beta1)
      .def_readwrite("beta2", &ObserverGains::beta2)
      .def_readwrite("delta", &ObserverGains::delta)
      .def_readwrite("L", &ObserverGains::L)
      .def_readwrite("M", &ObserverGains::M)
      .def("feasible", [](const ObserverGains& g, double margin) { return gains_feasible(g, margin); },
           py::arg("margin") = 0.0)
      .def("margins", [](const ObserverGains& g) {
        const GainMargins gm = gain_margins(g);
        return py::make_tuple(gm.first, gm.second, gm.second_full);
      });

  m.def("select_gains", &select_gains, py::arg("L"), py::arg("margin") = 0.1);
  m.def(
      "error_lyapunov",
      [](const ObserverGains& g, double e1, double e2) { return error_lyapunov(g, {e1, e2}); },
      py::arg("gains"), py::arg("e1"), py::arg("e2"));
  m.def(
      "simulate_output_feedback",
      [](const FeedbackLaw& law, const ObserverGains& g, const Vec& x0, const Vec& z0, double t_max,
         double dwell_time) {
        OutputFeedbackRun run;
        {
          py::gil_scoped_release release;
          run = simulate_output_feedback(law, g, x0, z0, sim_options(t_max, dwell_time));
        }
        py::dict d;
        d["plant"] = trajectory_dict(run.plant);
        d["estimator"] = trajectory_dict(run.estimator);
        std::vector<std::vector<double>> errors;
        for (const ErrorSample& e : run.errors) errors.push_back({e.t, e.e1, e.e2, e.V_e, e.W});
        d["errors"] = errors;
        std::vector<std::vector<double>> mismatches;
        for (const MismatchSample& s : run.mismatches)
          mismatches.push_back({s.t, s.nu2, s.du, s.e2, s.bound});
        d["mismatches"] = mismatches;
        d["status"] = sim_status_name(run.status);
        d["M"] = run.gains.M;
        return d;
      },
      py::arg("law"), py::arg("gains"), py::arg("x0"), py::arg("z0"), py::arg("t_max") = 100.0,
      py::arg("dwell_time") = 10.0,
      "errors rows are (t, e1, e2, V_e, W); mismatches rows are (t, nu2, du, e2, bound).");

  m.def("reference_switching_point", &reference_switching_point, py::arg("tau"));
  m.def("reference_taus", &reference_taus, py::arg("count"), py::arg("margin") = 0.05);
  m.def(
      "compare_switching_curve",
      [](const LagrangianManifold& man, const std::vector<double>& taus) {
        const CurveComparison c = compare_switching_curve(man, taus);
        return py::make_tuple(c.max_deviation, c.worst_tau, c.points);
      },
      py::arg("manifold"), py::arg("taus"), "Returns (max_deviation, worst_tau, points).");
}
