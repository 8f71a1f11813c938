#include "pmpstab/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace pmpstab {

using json = nlohmann::json;

namespace {

// Reads one JSON object, remembering which keys were consumed.
class Block {
 public:
  Block(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  const json& at(const std::string& key) {
    if (!has(key)) throw ConfigError(field(key) + ": required field missing");
    return j_.at(key);
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(field(key) + ": wrong type");
    }
  }

  template <typename T>
  void get(const std::string& key, std::optional<T>& out) {
    if (!has(key) || j_.at(key).is_null()) return;
    T v{};
    get(key, v);
    out = v;
  }

  Block sub(const std::string& key) { return Block(at(key), field(key)); }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(field(it.key()) + ": unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ConfigError(field + ": " + what);
}

void positive(double v, const std::string& field) {
  require(std::isfinite(v) && v > 0.0, field, "must be finite and > 0");
}

Box read_box(Block& b, const std::string& key) {
  std::vector<std::vector<double>> raw;
  b.get(key, raw);
  Box out;
  for (const auto& r : raw) {
    require(r.size() == 2 && std::isfinite(r[0]) && std::isfinite(r[1]) && r[0] < r[1],
            b.field(key), "each entry must be [lo, hi] with lo < hi");
    out.emplace_back(r[0], r[1]);
  }
  return out;
}

json box_json(const Box& box) {
  json a = json::array();
  for (const auto& [lo, hi] : box) a.push_back({lo, hi});
  return a;
}

Box square(std::size_t n, double h) { return Box(n, Interval{-h, h}); }

Expr parse_field(const std::string& src, std::size_t n, std::size_t m, const std::string& field) {
  try {
    return Expr::parse(src, n, m);
  } catch (const ExprSyntaxError& e) {
    throw ConfigError(field + ": " + e.what());
  }
}

void read_system(Block b, SystemConfig& s) {
  b.get("type", s.type);
  require(s.type == "affine" || s.type == "general", b.field("type"),
          "must be \"affine\" or \"general\"");
  b.get("n", s.n);
  b.get("m", s.m);
  require(s.n >= 1, b.field("n"), "must be >= 1");
  require(s.m >= 1, b.field("m"), "must be >= 1");
  if (s.type == "affine") {
    b.get("drift", s.drift);
    b.get("columns", s.columns);
    require(s.drift.size() == s.n, b.field("drift"), "needs n = " + std::to_string(s.n) + " entries");
    require(s.columns.size() == s.m, b.field("columns"),
            "needs m = " + std::to_string(s.m) + " columns");
    for (const auto& c : s.columns)
      require(c.size() == s.n, b.field("columns"), "each column needs n entries");
    for (std::size_t i = 0; i < s.n; ++i) parse_field(s.drift[i], s.n, 0, b.field("drift"));
    for (const auto& c : s.columns)
      for (const auto& e : c) parse_field(e, s.n, 0, b.field("columns"));
  } else {
    b.get("f", s.f);
    require(s.f.size() == s.n, b.field("f"), "needs n = " + std::to_string(s.n) + " entries");
    for (const auto& e : s.f) parse_field(e, s.n, s.m, b.field("f"));
  }
  b.finish();
}

void read_control(Block b, ControlConfig& c, std::size_t m) {
  b.get("type", c.type);
  require(c.type == "box" || c.type == "finite", b.field("type"),
          "must be \"box\" or \"finite\"");
  b.get("k", c.k);
  b.get("C", c.C);
  positive(c.k, b.field("k"));
  positive(c.C, b.field("C"));
  if (c.type == "box") {
    c.bounds = read_box(b, "bounds");
    if (c.bounds.empty()) c.bounds = square(m, c.k);
    require(c.bounds.size() == m, b.field("bounds"), "needs m = " + std::to_string(m) + " intervals");
  } else {
    b.get("points", c.points);
    require(!c.points.empty(), b.field("points"), "needs at least one point");
    for (const auto& p : c.points) require(p.size() == m, b.field("points"), "each point needs m entries");
  }
  b.finish();
}

void read_lyapunov(Block b, LyapunovConfig& l, std::size_t n) {
  l.V = b.at("V").is_string() ? b.at("V").get<std::string>() : "";
  require(!l.V.empty(), b.field("V"), "must be a nonempty expression");
  parse_field(l.V, n, 0, b.field("V"));
  b.get("epsilon", l.epsilon);
  positive(l.epsilon, b.field("epsilon"));
  l.box = read_box(b, "box");
  if (l.box.empty()) l.box = square(n, 20.0);
  require(l.box.size() == n, b.field("box"), "needs n intervals");
  b.get("check_grid", l.check_grid);
  require(l.check_grid >= 2, b.field("check_grid"), "must be >= 2");
  b.finish();
}

void read_ode(Block& b, OdeOptions& o) {
  b.get("rtol", o.rtol);
  b.get("atol", o.atol);
  b.get("h_max", o.h_max);
  positive(o.rtol, b.field("rtol"));
  positive(o.atol, b.field("atol"));
  positive(o.h_max, b.field("h_max"));
}

void read_manifold(Block b, ManifoldOptions& o) {
  b.get("seeds", o.seeds);
  b.get("tau_max", o.tau_max);
  b.get("state_budget", o.state_budget);
  b.get("sample_dtau", o.sample_dtau);
  b.get("event_tol", o.event_tol);
  b.get("transversality_tol", o.transversality_tol);
  b.get("max_switches", o.max_switches);
  b.get("query_radius", o.query_radius);
  b.get("radius_factor", o.radius_factor);
  b.get("threads", o.threads);
  read_ode(b, o.ode);
  require(o.seeds >= 2, b.field("seeds"), "must be >= 2");
  positive(o.tau_max, b.field("tau_max"));
  positive(o.state_budget, b.field("state_budget"));
  positive(o.sample_dtau, b.field("sample_dtau"));
  positive(o.event_tol, b.field("event_tol"));
  positive(o.radius_factor, b.field("radius_factor"));
  if (o.query_radius) positive(*o.query_radius, b.field("query_radius"));
  b.finish();
}

void read_feedback(Block b, FeedbackOptions& o) {
  b.get("saturate_inner", o.saturate_inner);
  b.get("decrease_grid", o.decrease_grid);
  b.get("level_samples", o.level_samples);
  b.get("decrease_tol", o.decrease_tol);
  require(o.decrease_grid >= 2, b.field("decrease_grid"), "must be >= 2");
  require(o.level_samples >= 1, b.field("level_samples"), "must be >= 1");
  b.finish();
}

void read_simulation(Block b, SimulationOptions& o, GridConfig& g, std::size_t n) {
  b.get("t_max", o.t_max);
  b.get("convergence_radius", o.convergence_radius);
  b.get("dwell_time", o.dwell_time);
  b.get("blowup_radius", o.blowup_radius);
  b.get("sample_dt", o.sample_dt);
  read_ode(b, o.filippov.ode);
  b.get("locate_tol", o.filippov.locate_tol);
  g.box = read_box(b, "grid_box");
  b.get("grid", g.per_axis);
  positive(o.t_max, b.field("t_max"));
  positive(o.convergence_radius, b.field("convergence_radius"));
  require(o.dwell_time >= 0.0, b.field("dwell_time"), "must be >= 0");
  positive(o.blowup_radius, b.field("blowup_radius"));
  positive(o.sample_dt, b.field("sample_dt"));
  positive(o.filippov.locate_tol, b.field("locate_tol"));
  require(g.per_axis >= 1, b.field("grid"), "must be >= 1");
  if (g.box.empty()) g.box = square(n, 5.0);
  require(g.box.size() == n, b.field("grid_box"), "needs n intervals");
  b.finish();
}

void read_observer(Block b, ObserverConfig& o) {
  b.get("L", o.L);
  b.get("margin", o.margin);
  b.get("beta1", o.beta1);
  b.get("beta2", o.beta2);
  b.get("delta", o.delta);
  b.get("M", o.M);
  b.get("x0", o.x0);
  b.get("z0", o.z0);
  b.get("t_max", o.t_max);
  b.get("dwell_time", o.dwell_time);
  require(std::isfinite(o.L) && o.L >= 0.0, b.field("L"), "must be finite and >= 0");
  require(o.margin >= 0.0, b.field("margin"), "must be >= 0");
  require(o.beta1.has_value() == o.beta2.has_value(), b.field("beta1"),
          "beta1 and beta2 must be given together");
  if (o.beta1) positive(*o.beta1, b.field("beta1"));
  if (o.beta2) positive(*o.beta2, b.field("beta2"));
  if (o.delta) positive(*o.delta, b.field("delta"));
  if (o.M) require(*o.M >= 0.0, b.field("M"), "must be >= 0");
  require(o.x0.size() == 2, b.field("x0"), "needs 2 entries");
  require(o.z0.size() == 2, b.field("z0"), "needs 2 entries");
  positive(o.t_max, b.field("t_max"));
  b.finish();
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json ode_fields(json j, const OdeOptions& o) {
  j["rtol"] = o.rtol;
  j["atol"] = o.atol;
  j["h_max"] = o.h_max;
  return j;
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("parse error at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  RunConfig cfg;
  Block root(j, "");
  read_system(root.sub("system"), cfg.system);
  const std::size_t n = cfg.system.n, m = cfg.system.m;
  if (root.has("control")) read_control(root.sub("control"), cfg.control, m);
  else read_control(Block(json::object(), "control"), cfg.control, m);
  read_lyapunov(root.sub("lyapunov"), cfg.lyapunov, n);

  root.get("inner", cfg.inner);
  require(cfg.inner.size() == m, "inner", "needs m = " + std::to_string(m) + " expressions");
  for (const auto& e : cfg.inner) parse_field(e, n, m, "inner");

  const json empty = json::object();
  read_manifold(Block(root.has("manifold") ? root.at("manifold") : empty, "manifold"),
                cfg.manifold);
  read_feedback(Block(root.has("feedback") ? root.at("feedback") : empty, "feedback"),
                cfg.feedback);
  cfg.feedback.C = cfg.control.C;
  read_simulation(Block(root.has("simulation") ? root.at("simulation") : empty, "simulation"),
                  cfg.simulation, cfg.grid, n);
  read_observer(Block(root.has("observer") ? root.at("observer") : empty, "observer"),
                cfg.observer);
  root.finish();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string echo_config(const RunConfig& c) {
  json j;
  json sys{{"type", c.system.type}, {"n", c.system.n}, {"m", c.system.m}};
  if (c.system.type == "affine") {
    sys["drift"] = c.system.drift;
    sys["columns"] = c.system.columns;
  } else {
    sys["f"] = c.system.f;
  }
  j["system"] = sys;

  json ctl{{"type", c.control.type}, {"k", c.control.k}, {"C", c.control.C}};
  if (c.control.type == "box") ctl["bounds"] = box_json(c.control.bounds);
  else ctl["points"] = c.control.points;
  j["control"] = ctl;

  j["lyapunov"] = {{"V", c.lyapunov.V},
                   {"epsilon", c.lyapunov.epsilon},
                   {"box", box_json(c.lyapunov.box)},
                   {"check_grid", c.lyapunov.check_grid}};
  j["inner"] = c.inner;

  const ManifoldOptions& mo = c.manifold;
  j["manifold"] = ode_fields({{"seeds", mo.seeds},
                              {"tau_max", mo.tau_max},
                              {"state_budget", mo.state_budget},
                              {"sample_dtau", mo.sample_dtau},
                              {"event_tol", mo.event_tol},
                              {"transversality_tol", mo.transversality_tol},
                              {"max_switches", mo.max_switches},
                              {"query_radius", opt_json(mo.query_radius)},
                              {"radius_factor", mo.radius_factor},
                              {"threads", mo.threads}},
                             mo.ode);

  j["feedback"] = {{"saturate_inner", c.feedback.saturate_inner},
                   {"decrease_grid", c.feedback.decrease_grid},
                   {"level_samples", c.feedback.level_samples},
                   {"decrease_tol", c.feedback.decrease_tol}};

  const SimulationOptions& so = c.simulation;
  j["simulation"] = ode_fields({{"t_max", so.t_max},
                                {"convergence_radius", so.convergence_radius},
                                {"dwell_time", so.dwell_time},
                                {"blowup_radius", so.blowup_radius},
                                {"sample_dt", so.sample_dt},
                                {"locate_tol", so.filippov.locate_tol},
                                {"grid_box", box_json(c.grid.box)},
                                {"grid", c.grid.per_axis}},
                               so.filippov.ode);

  const ObserverConfig& o = c.observer;
  j["observer"] = {{"L", o.L},
                   {"margin", o.margin},
                   {"beta1", opt_json(o.beta1)},
                   {"beta2", opt_json(o.beta2)},
                   {"delta", opt_json(o.delta)},
                   {"M", opt_json(o.M)},
                   {"x0", o.x0},
                   {"z0", o.z0},
                   {"t_max", o.t_max},
                   {"dwell_time", o.dwell_time}};
  return j.dump(2);
}

ControlSet build_control_set(const RunConfig& cfg) {
  return cfg.control.type == "box" ? ControlSet::box(cfg.control.bounds)
                                   : ControlSet::finite(cfg.control.points);
}

ControlSystem build_system(const RunConfig& cfg) {
  const SystemConfig& s = cfg.system;
  const ControlSet omega = build_control_set(cfg);
  if (s.type == "general") {
    std::vector<Expr> f;
    for (const auto& e : s.f) f.push_back(Expr::parse(e, s.n, s.m));
    return ControlSystem::general(s.n, s.m, std::move(f), omega);
  }
  std::vector<Expr> drift;
  for (const auto& e : s.drift) drift.push_back(Expr::parse(e, s.n, 0));
  std::vector<std::vector<Expr>> cols;
  for (const auto& c : s.columns) {
    cols.emplace_back();
    for (const auto& e : c) cols.back().push_back(Expr::parse(e, s.n, 0));
  }
  return ControlSystem::affine(s.n, std::move(drift), std::move(cols), omega);
}

LyapunovSpec build_lyapunov(const RunConfig& cfg) {
  const LyapunovConfig& l = cfg.lyapunov;
  return LyapunovSpec(Expr::parse(l.V, cfg.system.n, 0), cfg.system.n, l.epsilon, l.box,
                      l.check_grid);
}

std::vector<Expr> build_inner(const RunConfig& cfg) {
  std::vector<Expr> out;
  for (const auto& e : cfg.inner) out.push_back(Expr::parse(e, cfg.system.n, cfg.system.m));
  return out;
}

ObserverGains build_gains(const RunConfig& cfg) {
  const ObserverConfig& o = cfg.observer;
  ObserverGains g = select_gains(o.L, o.margin);
  if (o.beta1) {
    g.beta1 = *o.beta1;
    g.beta2 = *o.beta2;
  }
  if (o.delta) g.delta = *o.delta;
  if (o.M) g.M = *o.M;
  return g;
}

}  // namespace pmpstab
