#include "pmpstab/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "pmpstab/parallel.hpp"

namespace pmpstab {

const char* sim_event_name(SimEventKind k) {
  switch (k) {
    case SimEventKind::None: return "none";
    case SimEventKind::BoundaryCross: return "boundary-cross";
    case SimEventKind::ControlSwitch: return "control-switch";
    case SimEventKind::SlidingEnter: return "sliding-enter";
    case SimEventKind::SlidingExit: return "sliding-exit";
  }
  return "unknown";
}

const char* sim_status_name(SimStatus s) {
  switch (s) {
    case SimStatus::Converged: return "converged";
    case SimStatus::TimeLimit: return "time-limit";
    case SimStatus::Diverged: return "diverged";
    case SimStatus::NotCovered: return "not-covered";
    case SimStatus::Failed: return "failed";
  }
  return "unknown";
}

// ------------------------------------------------------------ stepper

FilippovStepper::FilippovStepper(HybridModel model, FilippovOptions opt, double t0, Vec y0)
    : model_(std::move(model)), opt_(opt), t_(t0), y_(std::move(y0)) {
  if (y_.size() != model_.dim) throw DimensionError("initial state has wrong dimension");
  mode_ = model_.mode(y_);
  // already on a mode boundary with the flow leaving the current mode?
  Vec v(model_.dim);
  model_.field(y_, model_.control(mode_, y_), v);
  const double eta = 1e-9 / std::max(1.0, norm(v));
  Vec probe = y_;
  for (std::size_t i = 0; i < probe.size(); ++i) probe[i] += eta * v[i];
  const int ahead = model_.mode(probe);
  if (ahead != mode_) begin_crossing(mode_, ahead, y_);
}

SimEventKind FilippovStepper::classify(int a, int b) const {
  return (a == kInnerMode || b == kInnerMode) ? SimEventKind::BoundaryCross
                                              : SimEventKind::ControlSwitch;
}

Vec FilippovStepper::u() const {
  if (!sliding_) return model_.control(mode_, y_);
  const double a = std::clamp(sliding_alpha(y_), 0.0, 1.0);
  Vec ua = model_.control(slide_a_, y_);
  const Vec ub = model_.control(slide_b_, y_);
  for (std::size_t j = 0; j < ua.size(); ++j) ua[j] = a * ua[j] + (1.0 - a) * ub[j];
  return ua;
}

Vec FilippovStepper::surface_gradient(std::span<const double> y) const {
  Vec g(y.size());
  Vec p(y.begin(), y.end());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double h = opt_.surface_fd * std::max(1.0, std::fabs(y[i]));
    p[i] = y[i] + h;
    const double sp = model_.surface(slide_a_, slide_b_, p);
    p[i] = y[i] - h;
    const double sm = model_.surface(slide_a_, slide_b_, p);
    p[i] = y[i];
    g[i] = (sp - sm) / (2.0 * h);
  }
  return g;
}

double FilippovStepper::sliding_alpha(std::span<const double> y) const {
  if (!sliding_) return std::numeric_limits<double>::quiet_NaN();
  return alpha_for(surface_gradient(y), y);
}

double FilippovStepper::alpha_for(std::span<const double> g, std::span<const double> y) const {
  Vec va(y.size()), vb(y.size());
  model_.field(y, model_.control(slide_a_, y), va);
  model_.field(y, model_.control(slide_b_, y), vb);
  const double ga = dot(g, va), gb = dot(g, vb);
  if (gb == ga) return 0.5;
  return gb / (gb - ga);
}

void FilippovStepper::sliding_field(std::span<const double> y, std::span<double> dy,
                                    std::span<const double> normal) const {
  const double a = std::clamp(alpha_for(normal, y), 0.0, 1.0);
  Vec va(y.size()), vb(y.size());
  model_.field(y, model_.control(slide_a_, y), va);
  model_.field(y, model_.control(slide_b_, y), vb);
  for (std::size_t i = 0; i < y.size(); ++i) dy[i] = a * va[i] + (1.0 - a) * vb[i];
}

double FilippovStepper::sliding_surface_rate() const {
  if (!sliding_) return std::numeric_limits<double>::quiet_NaN();
  Vec dy(y_.size());
  const Vec g = surface_gradient(y_);
  sliding_field(y_, dy, g);
  return dot(g, dy);
}

SimEventKind FilippovStepper::begin_crossing(int from, int to, std::span<const double> y) {
  recent_changes_.push_back(t_);
  slide_a_ = from;
  slide_b_ = to;
  const Vec g = surface_gradient(y);
  Vec va(y.size()), vb(y.size());
  model_.field(y, model_.control(from, y), va);
  model_.field(y, model_.control(to, y), vb);
  const double ga = dot(g, va), gb = dot(g, vb);
  const bool chattering = recent_changes_.size() >= opt_.chatter_limit;
  if (ga * gb < 0.0 || chattering) {
    if (chattering) {
      ++forced_sliding_;
      forced_ = true;
    }
    recent_changes_.clear();
    sliding_ = true;
    return SimEventKind::SlidingEnter;
  }
  mode_ = to;
  return classify(from, to);
}

StepOutcome FilippovStepper::step(double h) {
  if (!(h > 0.0)) throw std::invalid_argument("step length must be positive");
  // the chattering window is one nominal step
  const double window_start = t_ - h;
  recent_changes_.erase(std::remove_if(recent_changes_.begin(), recent_changes_.end(),
                                       [&](double tc) { return tc < window_start; }),
                        recent_changes_.end());
  return sliding_ ? sliding_step(h) : smooth_step(h);
}

StepOutcome FilippovStepper::smooth_step(double h) {
  const int mode = mode_;
  Dopri5 ode(model_.dim, [&](double, std::span<const double> y, std::span<double> dy) {
    model_.field(y, model_.control(mode, y), dy);
  }, opt_.ode);
  if (h_ode_ <= 0.0) h_ode_ = ode.initial_step(t_, y_);
  const double t_end = t_ + h;
  StepOutcome out;
  while (t_end - t_ > 1e-13 * std::max(1.0, std::fabs(t_end))) {
    DenseStep s = ode.step(t_, y_, h_ode_, t_end);
    const std::size_t checks = std::max<std::size_t>(opt_.checks_per_step, 1);
    double prev = t_;
    for (std::size_t j = 1; j <= checks; ++j) {
      const double tc = j == checks ? s.t1() : s.t0 + s.h * double(j) / double(checks);
      const Vec yc = j == checks ? s.y1 : s.at(tc);
      if (model_.mode(yc) == mode) {
        prev = tc;
        continue;
      }
      double lo = prev, hi = tc;
      const double tol = opt_.locate_tol * std::max(1.0, std::fabs(tc));
      while (hi - lo > tol) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        (model_.mode(s.at(mid)) == mode ? lo : hi) = mid;
      }
      t_ = hi;
      y_ = hi == s.t1() ? s.y1 : s.at(hi);
      const int to = model_.mode(y_);
      out.event = begin_crossing(mode, to, y_);
      out.t = t_;
      out.y = y_;
      out.u = u();
      out.sliding = sliding_;
      return out;
    }
    t_ = s.t1();
    y_ = s.y1;
  }
  t_ = std::max(t_, t_end);
  out.t = t_;
  out.y = y_;
  out.u = u();
  return out;
}

StepOutcome FilippovStepper::sliding_step(double h) {
  // the surface normal is frozen over each integrator step
  Vec normal;
  Dopri5 ode(model_.dim, [&](double, std::span<const double> y, std::span<double> dy) {
    sliding_field(y, dy, normal);
  }, opt_.ode);
  double h_ode = std::min(h, std::max(h_ode_, 1e-6));
  const double t_end = t_ + h;
  // Sliding persists while α stays in [0, 1] and the state remains in one of
  // the two modes. A sliding motion forced by the chatter guard ignores α for
  // one nominal step.
  const bool forced = forced_;
  forced_ = false;
  auto still_sliding = [&](std::span<const double> y) {
    const int here = model_.mode(y);
    if (here != slide_a_ && here != slide_b_) return false;
    if (forced) return true;
    const double a = sliding_alpha(y);
    return a >= 0.0 && a <= 1.0;
  };

  StepOutcome out;
  while (t_end - t_ > 1e-13 * std::max(1.0, std::fabs(t_end))) {
    normal = surface_gradient(y_);
    DenseStep s = ode.step(t_, y_, h_ode, t_end);
    const std::size_t checks = std::max<std::size_t>(opt_.checks_per_step, 1);
    double prev = t_;
    for (std::size_t j = 1; j <= checks; ++j) {
      const double tc = j == checks ? s.t1() : s.t0 + s.h * double(j) / double(checks);
      const Vec yc = j == checks ? s.y1 : s.at(tc);
      if (still_sliding(yc)) {
        prev = tc;
        continue;
      }
      double lo = prev, hi = tc;
      const double tol = opt_.locate_tol * std::max(1.0, std::fabs(tc));
      while (hi - lo > tol) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        (still_sliding(s.at(mid)) ? lo : hi) = mid;
      }
      t_ = hi;
      y_ = hi == s.t1() ? s.y1 : s.at(hi);
      const double a = sliding_alpha(y_);
      int next = model_.mode(y_);
      if (next == slide_a_ || next == slide_b_) {
        if (a >= 1.0) next = slide_a_;
        else if (a <= 0.0) next = slide_b_;
      }
      sliding_ = false;
      mode_ = next;
      out.event = SimEventKind::SlidingExit;
      out.t = t_;
      out.y = y_;
      out.u = u();
      return out;
    }
    t_ = s.t1();
    y_ = s.y1;
  }
  t_ = std::max(t_, t_end);
  out.t = t_;
  out.y = y_;
  out.u = u();
  out.sliding = true;
  return out;
}

// ------------------------------------------------------------ closed loop

HybridModel closed_loop_model(const FeedbackLaw& law) {
  const ControlSystem& sys = law.system();
  auto seen = std::make_shared<std::vector<Vec>>();
  HybridModel m;
  m.dim = sys.n();
  m.m = sys.m();
  m.mode = [&law, seen](std::span<const double> y) {
    const FeedbackValue v = law.evaluate(y);
    if (v.inner) return kInnerMode;
    for (std::size_t i = 0; i < seen->size(); ++i)
      if ((*seen)[i] == v.u) return static_cast<int>(i) + 1;
    seen->push_back(v.u);
    return static_cast<int>(seen->size());
  };
  m.control = [&law, seen](int mode, std::span<const double> y) {
    return mode == kInnerMode ? law.inner_value(y) : (*seen)[static_cast<std::size_t>(mode) - 1];
  };
  m.field = [&sys](std::span<const double> y, std::span<const double> u, std::span<double> dy) {
    const Vec f = sys.eval_dynamics(0.0, y, u);
    std::copy(f.begin(), f.end(), dy.begin());
  };
  m.surface = [&law](int a, int b, std::span<const double> y) {
    if (a == kInnerMode || b == kInnerMode) return law.lyapunov().value(y) - law.epsilon();
    return law.switching_value(y);
  };
  return m;
}

Trajectory simulate_model(const HybridModel& model, std::span<const double> y0,
                          const ModelRunSpec& spec, const SimulationOptions& opt,
                          const SampleHook& on_sample) {
  Trajectory tr;
  const std::size_t n = spec.plant_dim;
  const ControlSet& omega = *spec.omega;
  const double eps = spec.epsilon;
  const auto& V = spec.V;
  tr.n = n;
  tr.m = model.m;
  auto record = [&](double t, const Vec& y, const Vec& u, SimEventKind ev) {
    const Vec x(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(n));
    if (!tr.t.empty() && t <= tr.t.back()) {
      tr.u.back() = u;
      if (ev != SimEventKind::None) tr.flag.back() = static_cast<std::int8_t>(ev);
    } else {
      tr.t.push_back(t);
      tr.x.push_back(x);
      tr.u.push_back(u);
      tr.flag.push_back(static_cast<std::int8_t>(ev));
    }
    if (ev != SimEventKind::None) tr.events.push_back({t, ev});
    for (double c : u) tr.max_abs_u = std::max(tr.max_abs_u, std::fabs(c));
    if (!omega.contains(u, 1e-9)) tr.u_in_omega = false;
    if (on_sample) on_sample(t, y, u, ev);
  };

  try {
    FilippovStepper st(model, opt.filippov, 0.0, Vec(y0.begin(), y0.end()));
    record(0.0, st.y(), st.u(), st.sliding() ? SimEventKind::SlidingEnter : SimEventKind::None);
    bool entered_inner = st.mode() == kInnerMode && !st.sliding();
    double in_ball_since = -1.0;
    auto plant_norm = [&](const Vec& y) { return norm(std::span<const double>(y).first(n)); };
    if (plant_norm(st.y()) <= opt.convergence_radius) in_ball_since = 0.0;

    while (st.t() < opt.t_max) {
      const int mode_before = st.mode();
      const bool slide_before = st.sliding();
      const double v_before = V(std::span<const double>(st.y()).first(n));
      const StepOutcome out = st.step(std::min(opt.sample_dt, opt.t_max - st.t()));
      record(out.t, out.y, out.u, out.event);

      const double v_after = V(std::span<const double>(out.y).first(n));
      if (mode_before == kInnerMode && !slide_before && out.event == SimEventKind::None)
        tr.max_inner_v_increase = std::max(tr.max_inner_v_increase, v_after - v_before);
      if (st.mode() == kInnerMode && !st.sliding()) entered_inner = true;
      if (entered_inner && v_after > eps * (1.0 + 1e-9)) tr.left_inner_after_entry = true;

      const double nx = plant_norm(out.y);
      if (!std::isfinite(nx) || nx > opt.blowup_radius) {
        tr.status = SimStatus::Diverged;
        tr.message = "state norm exceeded the blow-up radius";
        break;
      }
      if (nx <= opt.convergence_radius) {
        if (in_ball_since < 0.0) in_ball_since = out.t;
        if (out.t - in_ball_since >= opt.dwell_time) {
          tr.status = SimStatus::Converged;
          tr.t_converged = in_ball_since;
          break;
        }
      } else {
        in_ball_since = -1.0;
      }
    }
    tr.forced_sliding = st.forced_sliding();
  } catch (const NotCoveredError& e) {
    tr.status = SimStatus::NotCovered;
    tr.message = e.what();
  } catch (const StepUnderflowError& e) {
    tr.status = SimStatus::Failed;
    tr.message = e.what();
  } catch (const ExprDomainError& e) {
    tr.status = SimStatus::Failed;
    tr.message = e.what();
  }
  return tr;
}

Trajectory simulate_closed_loop(const FeedbackLaw& law, std::span<const double> x0,
                                const SimulationOptions& opt) {
  if (x0.size() != law.system().n()) throw DimensionError("x0 has wrong dimension");
  for (double v : x0)
    if (!std::isfinite(v)) throw ValidationError("x0 must be finite");
  const LyapunovSpec& lyap = law.lyapunov();
  ModelRunSpec spec;
  spec.plant_dim = law.system().n();
  spec.omega = &law.system().omega();
  spec.V = [&](std::span<const double> x) { return lyap.value(x); };
  spec.epsilon = law.epsilon();
  return simulate_model(closed_loop_model(law), x0, spec, opt);
}

std::vector<Trajectory> simulate_batch(const FeedbackLaw& law, const std::vector<Vec>& x0s,
                                       const SimulationOptions& opt, unsigned threads) {
  std::vector<Trajectory> out(x0s.size());
  parallel_for(x0s.size(), threads,
               [&](std::size_t i) { out[i] = simulate_closed_loop(law, x0s[i], opt); });
  return out;
}

StepOutcome filippov_step(const FeedbackLaw& law, double t, std::span<const double> x, double h,
                          const FilippovOptions& opt) {
  FilippovStepper st(closed_loop_model(law), opt, t, Vec(x.begin(), x.end()));
  return st.step(h);
}

StabilizationVerdict stabilization_verdict(const std::vector<Trajectory>& trajectories,
                                           const std::vector<StabilityCheck>& table) {
  StabilizationVerdict v;
  v.trajectories = trajectories.size();
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    if (trajectories[i].status != SimStatus::Converged && v.converged_all) {
      v.converged_all = false;
      v.convergence_witness = i;
    }
  }
  for (const auto& check : table) {
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
      const auto& tr = trajectories[i];
      if (tr.x.empty() || norm(tr.x.front()) > check.delta_s) continue;
      ++v.stability_tested;
      double peak = 0.0;
      for (const auto& x : tr.x) peak = std::max(peak, norm(x));
      if (peak > check.eps_s && v.stable_all) {
        v.stable_all = false;
        v.stability_witness = i;
      }
    }
  }
  return v;
}

}  // namespace pmpstab
