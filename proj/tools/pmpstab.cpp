// pmpstab: synthesize, simulate and inspect stabilizing feedback laws.
//
// Exit codes: 0 success, 1 validation error, 2 numerical failure. On failure
// one line `error=<kind> message="<text>"` goes to stderr.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "pmpstab/config.hpp"
#include "pmpstab/grid.hpp"
#include "pmpstab/io.hpp"

using namespace pmpstab;

namespace {

struct NumericalFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError(path + ": cannot open for writing");
  return out;
}

Vec parse_vec(const std::string& s, std::size_t n, const std::string& what) {
  Vec v;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    std::size_t used = 0;
    double d = 0.0;
    try {
      d = std::stod(cell, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != cell.size() || !std::isfinite(d))
      throw ValidationError(what + ": '" + cell + "' is not a finite number");
    v.push_back(d);
  }
  if (v.size() != n)
    throw ValidationError(what + ": needs " + std::to_string(n) + " comma-separated values");
  return v;
}

struct Common {
  std::string config;
  bool echo = false;

  RunConfig load() const {
    RunConfig c = load_config(config);
    if (echo) std::cout << echo_config(c) << '\n';
    return c;
  }
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON run configuration")->required();
  sub->add_flag("--echo-config", c.echo, "print the resolved configuration first");
}

FeedbackLaw synthesize_law(const RunConfig& cfg) {
  const ControlSystem sys = build_system(cfg);
  const LyapunovSpec lyap = build_lyapunov(cfg);
  auto man = std::make_shared<const LagrangianManifold>(build_manifold(sys, lyap, cfg.manifold));
  return assemble_feedback(man, build_inner(cfg), cfg.feedback);
}

std::size_t count_switches(const LagrangianManifold& man) {
  std::size_t k = 0;
  for (const auto& b : man.branches()) k += b.switch_count();
  return k;
}

double final_norm(const Trajectory& tr) { return tr.x.empty() ? NAN : norm(tr.x.back()); }
double t_end(const Trajectory& tr) { return tr.t.empty() ? NAN : tr.t.back(); }

// synthesize ---------------------------------------------------------------

struct SynthesizeArgs {
  Common common;
  std::string out;
};

int run_synthesize(const SynthesizeArgs& a) {
  const RunConfig cfg = a.common.load();
  const FeedbackLaw law = synthesize_law(cfg);
  const LagrangianManifold& man = law.manifold();
  std::ofstream out = open_out(a.out);
  write_feedback(out, law);

  std::cout << "branches=" << man.branches().size() << " samples=" << man.sample_count()
            << " switch_events=" << count_switches(man)
            << " failed_branches=" << man.failures().size() << '\n';
  const DecreaseReport& d = law.decrease_report();
  std::cout << "decrease max_inside=" << format_number(d.max_inside)
            << " level_margin=" << format_number(d.level_margin) << '\n';
  if (cfg.bound_check_armed()) {
    const BoundReport b = verify_bound(law, cfg.grid.box, cfg.grid.per_axis);
    std::cout << "bound C=" << format_number(law.C()) << " max_abs_u=" << format_number(b.max_abs)
              << " samples=" << b.samples << " uncovered=" << b.uncovered
              << " ok=" << (b.ok ? "true" : "false") << '\n';
    if (!b.ok) {
      std::ostringstream s;
      s << "|u| exceeds C = " << format_number(law.C()) << " at (";
      for (std::size_t i = 0; i < b.witness->size(); ++i)
        s << (i ? "," : "") << format_number((*b.witness)[i]);
      s << ")";
      throw NumericalFailure(s.str());
    }
  }
  return 0;
}

// simulate -----------------------------------------------------------------

struct SimulateArgs {
  Common common;
  std::string x0;
  bool grid = false;
  std::string out;
  std::string out_dir;
};

int run_simulate(const SimulateArgs& a) {
  const RunConfig cfg = a.common.load();
  const std::size_t n = cfg.system.n;
  if (a.x0.empty() == !a.grid) throw ValidationError("give exactly one of --x0 and --grid");
  std::vector<Vec> x0s;
  if (a.grid) {
    if (a.out_dir.empty()) throw ValidationError("--grid needs --out-dir");
    x0s = grid_points(cfg.grid.box, cfg.grid.per_axis);
  } else {
    if (a.out.empty()) throw ValidationError("--x0 needs --out");
    x0s.push_back(parse_vec(a.x0, n, "--x0"));
  }

  const FeedbackLaw law = synthesize_law(cfg);
  const auto runs = simulate_batch(law, x0s, cfg.simulation, cfg.manifold.threads);

  std::size_t converged = 0;
  for (const auto& tr : runs) converged += tr.status == SimStatus::Converged;

  if (!a.grid) {
    const Trajectory& tr = runs[0];
    std::ofstream out = open_out(a.out);
    write_trajectory_csv(out, tr);
    std::cout << "status=" << sim_status_name(tr.status) << " t_end=" << format_number(t_end(tr))
              << " final_norm=" << format_number(final_norm(tr))
              << " max_abs_u=" << format_number(tr.max_abs_u) << " events=" << tr.events.size()
              << '\n';
  } else {
    std::filesystem::create_directories(a.out_dir);
    std::ofstream summary = open_out(a.out_dir + "/summary.csv");
    summary << "index,";
    for (std::size_t i = 1; i <= n; ++i) summary << "x0_" << i << ',';
    summary << "status,t_end,final_norm,max_abs_u,u_in_omega\n";
    for (std::size_t k = 0; k < runs.size(); ++k) {
      char name[32];
      std::snprintf(name, sizeof name, "/traj_%04zu.csv", k);
      std::ofstream out = open_out(a.out_dir + name);
      write_trajectory_csv(out, runs[k]);
      summary << k << ',';
      for (double v : x0s[k]) summary << format_number(v) << ',';
      summary << sim_status_name(runs[k].status) << ',' << format_number(t_end(runs[k])) << ','
              << format_number(final_norm(runs[k])) << ',' << format_number(runs[k].max_abs_u)
              << ',' << (runs[k].u_in_omega ? 1 : 0) << '\n';
    }
    const StabilizationVerdict v = stabilization_verdict(runs, {});
    std::cout << "trajectories=" << runs.size() << " converged=" << converged
              << " converged_all=" << (v.converged_all ? "true" : "false") << '\n';
  }
  if (converged != runs.size()) {
    for (std::size_t k = 0; k < runs.size(); ++k)
      if (runs[k].status != SimStatus::Converged)
        throw NumericalFailure("trajectory " + std::to_string(k) + " ended with status " +
                               sim_status_name(runs[k].status) +
                               (runs[k].message.empty() ? "" : ": " + runs[k].message));
  }
  return 0;
}

// switching-curve ----------------------------------------------------------

struct CurveArgs {
  Common common;
  std::string out;
  bool compare = false;
  std::size_t count = 50;
  double margin = 0.05;
};

int run_switching_curve(const CurveArgs& a) {
  const RunConfig cfg = a.common.load();
  const ControlSystem sys = build_system(cfg);
  const LagrangianManifold man = build_manifold(sys, build_lyapunov(cfg), cfg.manifold);
  const auto taus = reference_taus(std::max<std::size_t>(a.count, 200), a.margin);
  std::ofstream out = open_out(a.out);
  write_switching_curve_csv(out, man.switching_polylines(), taus);

  const auto lines = man.switching_polylines();
  std::cout << "polylines=" << lines.size() << " switch_events=" << count_switches(man) << '\n';
  if (a.compare) {
    if (a.count == 0) throw ValidationError("--count must be positive");
    const CurveComparison c = compare_switching_curve(man, reference_taus(a.count, a.margin));
    std::cout << "max_deviation=" << format_number(c.max_deviation)
              << " worst_tau=" << format_number(c.worst_tau) << " points=" << c.points << '\n';
  }
  return 0;
}

// illuminate ---------------------------------------------------------------

struct IlluminateArgs {
  Common common;
  std::string out;
};

int run_illuminate(const IlluminateArgs& a) {
  const RunConfig cfg = a.common.load();
  const ControlSystem sys = build_system(cfg);
  const LagrangianManifold man = build_manifold(sys, build_lyapunov(cfg), cfg.manifold);
  const auto points = grid_points(cfg.grid.box, cfg.grid.per_axis);
  const auto classes = man.illumination_check(points);
  std::ofstream out = open_out(a.out);
  write_illumination_csv(out, points, classes);

  std::size_t k[3] = {0, 0, 0};
  for (auto c : classes) ++k[static_cast<int>(c)];
  std::cout << "points=" << points.size() << " inner=" << k[0] << " illuminated=" << k[1]
            << " dark=" << k[2] << '\n';
  return 0;
}

// observer -----------------------------------------------------------------

struct ObserverArgs {
  Common common;
  std::string errors;
  std::string trajectory;
  std::string estimator;
  std::string mismatches;
};

int run_observer(const ObserverArgs& a) {
  const RunConfig cfg = a.common.load();
  const FeedbackLaw law = synthesize_law(cfg);
  ObserverGains g = build_gains(cfg);
  const GainMargins m = gain_margins(g);
  std::cout << "gains beta1=" << format_number(g.beta1) << " beta2=" << format_number(g.beta2)
            << " delta=" << format_number(g.delta) << " L=" << format_number(g.L) << '\n';
  std::cout << "inequalities first=" << format_number(m.first)
            << " second=" << format_number(m.second)
            << " second_full=" << format_number(m.second_full)
            << " feasible=" << (gains_feasible(g, cfg.observer.margin) ? "true" : "false")
            << " certified=" << (gains_certified(g, cfg.observer.margin) ? "true" : "false")
            << '\n';
  if (std::isnan(g.M)) {
    const ObserverCertificate c = certify_observer(law);
    g.M = c.M;
    std::cout << "certificate M=" << format_number(c.M) << " gamma=" << format_number(c.gamma)
              << " samples=" << c.samples << '\n';
  }

  SimulationOptions opt = cfg.simulation;
  opt.t_max = cfg.observer.t_max;
  opt.dwell_time = cfg.observer.dwell_time;
  const OutputFeedbackRun run =
      simulate_output_feedback(law, g, cfg.observer.x0, cfg.observer.z0, opt);

  auto write = [](const std::string& path, auto&& fn) {
    if (path.empty()) return;
    std::ofstream out = open_out(path);
    fn(out);
  };
  write(a.errors, [&](std::ostream& o) { write_error_log_csv(o, run.errors); });
  write(a.trajectory, [&](std::ostream& o) { write_trajectory_csv(o, run.plant); });
  write(a.estimator, [&](std::ostream& o) { write_trajectory_csv(o, run.estimator); });
  write(a.mismatches, [&](std::ostream& o) { write_mismatch_csv(o, run.mismatches); });

  double e_late = 0.0;
  for (const auto& e : run.errors)
    if (e.t >= 20.0) e_late = std::max(e_late, std::hypot(e.e1, e.e2));
  std::size_t violations = 0;
  for (const auto& s : run.mismatches) violations += std::fabs(s.nu2 * s.du) > s.bound;
  std::cout << "status=" << sim_status_name(run.status)
            << " final_norm=" << format_number(final_norm(run.plant))
            << " max_error_after_20=" << format_number(e_late)
            << " mismatches=" << run.mismatches.size() << " bound_violations=" << violations
            << '\n';
  if (run.status != SimStatus::Converged)
    throw NumericalFailure(std::string("output feedback ended with status ") +
                           sim_status_name(run.status) +
                           (run.message.empty() ? "" : ": " + run.message));
  return 0;
}

// plot ---------------------------------------------------------------------

struct PlotArgs {
  std::string in, out;
  PlotSpec spec;
  std::string y;
};

int run_plot(PlotArgs a) {
  std::ifstream in(a.in);
  if (!in) throw ValidationError(a.in + ": cannot open");
  const CsvTable t = read_csv(in);
  PlotSpec& s = a.spec;
  if (!a.y.empty()) {
    std::stringstream ss(a.y);
    for (std::string c; std::getline(ss, c, ',');) s.y.push_back(c);
  }
  // sensible defaults for the files this tool writes
  if (s.group.empty()) {
    if (t.column("polyline")) s.group = "polyline";
    else if (t.column("psi")) s.group = "psi";
    else if (t.column("class")) s.group = "class", s.points = true;
  }
  if (s.x.empty() && t.column("e1")) s.x = "t";
  if (s.title.empty()) s.title = std::filesystem::path(a.in).filename().string();
  const std::string svg = render_svg(t, s);
  std::ofstream out = open_out(a.out);
  out << svg;
  std::cout << "rows=" << t.rows.size() << '\n';
  return 0;
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  std::string out;
  for (char c : s) out += c == '"' ? std::string("\\\"") : std::string(1, c);
  return out;
}

int fail(const char* kind, const std::string& message, int code) {
  std::cerr << "error=" << kind << " message=\"" << one_line(message) << "\"\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pontryagin-type synthesis of stabilizing feedback laws"};
  app.require_subcommand(1);

  SynthesizeArgs syn;
  auto* s_syn = app.add_subcommand("synthesize", "build the manifold and the law, write the law");
  add_common(s_syn, syn.common);
  s_syn->add_option("--out", syn.out, "feedback file (manifold CSV with header)")->required();

  SimulateArgs sim;
  auto* s_sim = app.add_subcommand("simulate", "closed-loop Filippov simulation");
  add_common(s_sim, sim.common);
  s_sim->add_option("--x0", sim.x0, "initial state, comma-separated");
  s_sim->add_flag("--grid", sim.grid, "simulate from every point of the configured grid");
  s_sim->add_option("--out", sim.out, "trajectory CSV (with --x0)");
  s_sim->add_option("--out-dir", sim.out_dir, "directory for grid trajectories and summary.csv");

  CurveArgs cur;
  auto* s_cur = app.add_subcommand("switching-curve", "computed and reference switching curves");
  add_common(s_cur, cur.common);
  s_cur->add_option("--out", cur.out, "curve CSV")->required();
  s_cur->add_flag("--compare", cur.compare, "print the deviation from the reference curve");
  s_cur->add_option("--count", cur.count, "reference parameters compared")->capture_default_str();
  s_cur->add_option("--margin", cur.margin, "excluded distance from the interval ends")
      ->capture_default_str();

  IlluminateArgs ill;
  auto* s_ill = app.add_subcommand("illuminate", "classify grid points as inner, illuminated, dark");
  add_common(s_ill, ill.common);
  s_ill->add_option("--out", ill.out, "illumination CSV")->required();

  ObserverArgs obs;
  auto* s_obs = app.add_subcommand("observer", "gain selection and output-feedback run");
  add_common(s_obs, obs.common);
  s_obs->add_option("--errors", obs.errors, "error log CSV (t, e1, e2, V_e, W)");
  s_obs->add_option("--trajectory", obs.trajectory, "plant trajectory CSV");
  s_obs->add_option("--estimator", obs.estimator, "estimator trajectory CSV");
  s_obs->add_option("--mismatches", obs.mismatches, "switch-mismatch CSV");

  PlotArgs plt;
  auto* s_plt = app.add_subcommand("plot", "render a CSV written by this tool as SVG");
  s_plt->add_option("--in", plt.in, "input CSV")->required();
  s_plt->add_option("--out", plt.out, "output SVG")->required();
  s_plt->add_option("--x", plt.spec.x, "x column");
  s_plt->add_option("--y", plt.y, "y columns, comma-separated");
  s_plt->add_option("--group", plt.spec.group, "column whose changes split polylines");
  s_plt->add_option("--events", plt.spec.events, "column marking events (default event_flag)");
  s_plt->add_flag("--points", plt.spec.points, "markers instead of polylines");
  s_plt->add_option("--title", plt.spec.title, "figure title");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("validation", e.what(), 1);
  }

  try {
    if (*s_syn) return run_synthesize(syn);
    if (*s_sim) return run_simulate(sim);
    if (*s_cur) return run_switching_curve(cur);
    if (*s_ill) return run_illuminate(ill);
    if (*s_obs) return run_observer(obs);
    if (*s_plt) return run_plot(plt);
  } catch (const std::invalid_argument& e) {
    // ValidationError, DimensionError, ConfigError, DecreaseViolation
    return fail("validation", e.what(), 1);
  } catch (const ExprSyntaxError& e) {
    return fail("validation", e.what(), 1);
  } catch (const std::domain_error& e) {
    return fail("validation", e.what(), 1);
  } catch (const std::exception& e) {
    return fail("numerical", e.what(), 2);
  }
  return 0;
}
