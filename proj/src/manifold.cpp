#include "pmpstab/manifold.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "pmpstab/parallel.hpp"

namespace pmpstab {

const char* event_kind_name(EventKind k) {
  switch (k) {
    case EventKind::Switch:
      return "switch";
    case EventKind::TransversalityFailure:
      return "transversality-failure";
    case EventKind::Budget:
      return "budget";
  }
  return "?";
}

const char* illumination_name(Illumination i) {
  switch (i) {
    case Illumination::Inner:
      return "inner";
    case Illumination::Illuminated:
      return "illuminated";
    case Illumination::Dark:
      return "dark";
  }
  return "?";
}

// ------------------------------------------------------------------ seeds

Seed seed_at(const LyapunovSpec& lyap, double psi) {
  const std::size_t n = lyap.n();
  if (n != 1 && n != 2)
    throw DimensionError("seed parametrization is implemented for n = 1 and n = 2 only");
  Vec dir(n);
  if (n == 2) {
    dir = {std::cos(psi), std::sin(psi)};
  } else {
    dir = {std::cos(psi) >= 0.0 ? 1.0 : -1.0};
  }
  // largest radius along dir that stays in the working box
  double r_max = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < n; ++k) {
    if (dir[k] > 0.0) r_max = std::min(r_max, lyap.box()[k].second / dir[k]);
    if (dir[k] < 0.0) r_max = std::min(r_max, lyap.box()[k].first / dir[k]);
  }
  const double eps = lyap.epsilon();
  auto V_at = [&](double r) {
    Vec x(n);
    for (std::size_t k = 0; k < n; ++k) x[k] = r * dir[k];
    return lyap.value(x);
  };
  // grow the bracket geometrically inside the box
  double lo = 0.0, hi = std::min(r_max, 1e-3);
  while (V_at(hi) < eps) {
    if (hi >= r_max) {
      std::ostringstream msg;
      msg << "level set V = " << eps << " not bracketed inside the working box at psi = " << psi;
      throw ValidationError(msg.str());
    }
    lo = hi;
    hi = std::min(2.0 * hi, r_max);
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const double v = V_at(mid);
    if (v == eps) {
      lo = hi = mid;
      break;
    }
    (v < eps ? lo : hi) = mid;
  }
  const double r = std::fabs(V_at(lo) - eps) <= std::fabs(V_at(hi) - eps) ? lo : hi;
  Seed s;
  s.psi = psi;
  s.x0.resize(n);
  for (std::size_t k = 0; k < n; ++k) s.x0[k] = r * dir[k];
  s.nu0 = lyap.gradient(s.x0);
  return s;
}

std::vector<Seed> seed_manifold(const LyapunovSpec& lyap, std::size_t N) {
  if (lyap.n() == 1) return {seed_at(lyap, 0.0), seed_at(lyap, std::numbers::pi)};
  if (lyap.n() != 2)
    throw DimensionError("seed parametrization is implemented for n = 1 and n = 2 only");
  if (N < 8) throw ValidationError("at least 8 seeds are required");
  std::vector<Seed> seeds;
  seeds.reserve(N);
  for (std::size_t k = 0; k < N; ++k)
    seeds.push_back(seed_at(lyap, 2.0 * std::numbers::pi * double(k) / double(N)));
  return seeds;
}

// ------------------------------------------------------- Bicharacteristic

void Bicharacteristic::push_sample(double tau, std::span<const double> y,
                                   std::span<const double> u, double S, std::int8_t flag) {
  tau_.push_back(tau);
  x_.insert(x_.end(), y.begin(), y.begin() + n_);
  nu_.insert(nu_.end(), y.begin() + n_, y.begin() + 2 * n_);
  W_.push_back(y[2 * n_]);
  u_.insert(u_.end(), u.begin(), u.end());
  S_.push_back(S);
  flag_.push_back(flag);
}

std::size_t Bicharacteristic::switch_count() const {
  return static_cast<std::size_t>(std::count_if(
      events.begin(), events.end(), [](const Event& e) { return e.kind == EventKind::Switch; }));
}

bool Bicharacteristic::transversality_failed() const {
  return std::any_of(events.begin(), events.end(), [](const Event& e) {
    return e.kind == EventKind::TransversalityFailure;
  });
}

Bicharacteristic::State Bicharacteristic::state_at(double tau) const {
  if (segments_.empty() || tau < 0.0 || tau > tau_end())
    throw std::out_of_range("tau outside the integrated range of the branch");
  auto it = std::upper_bound(segments_.begin(), segments_.end(), tau,
                             [](double t, const Segment& s) { return t < s.tau_hi; });
  if (it == segments_.end()) it = std::prev(segments_.end());
  const Vec y = it->step.at(tau);
  State st;
  st.x.assign(y.begin(), y.begin() + n_);
  st.nu.assign(y.begin() + n_, y.begin() + 2 * n_);
  st.W = y[2 * n_];
  st.u = it->u;
  return st;
}

// ------------------------------------------------------------ BranchTracer

class BranchTracer {
 public:
  BranchTracer(const ControlSystem& sys, const ManifoldOptions& opt, int direction)
      : sys_(sys), opt_(opt), dir_(direction >= 0 ? 1 : -1), n_(sys.n()), m_(sys.m()) {
    if (!sys.autonomous()) throw ValidationError("bicharacteristics require a stationary system");
  }

  Bicharacteristic run(const Seed& start, double W0, double tau_max);

 private:
  void rhs(std::span<const double> y, std::span<const double> u, std::span<double> dy) const {
    std::span<const double> x = y.first(n_);
    std::span<const double> nu = y.subspan(n_, n_);
    const PhaseVelocity v = pontryagin_rhs(sys_, 0.0, x, nu, u, dir_);
    double dW = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
      dy[i] = v.dx[i];
      dy[n_ + i] = v.dnu[i];
      dW += nu[i] * v.dx[i];
    }
    dy[2 * n_] = dW;
  }

  bool box_affine() const {
    return sys_.is_affine() && sys_.omega().kind() == ControlSet::Kind::Box;
  }

  // Minimizer with degenerate channels resolved towards the side the flow enters.
  Vec select_control(std::span<const double> y) const {
    std::span<const double> x = y.first(n_);
    std::span<const double> nu = y.subspan(n_, n_);
    MinimizerResult r = minimize_hamiltonian(sys_, 0.0, x, nu, opt_.hamiltonian);
    if (!r.degenerate) return r.u_star;
    if (box_affine() && m_ == 1) {
      // d/dτ ⟨ν, b⟩ = dir · ⟨ν, [f, b]⟩ independently of u
      const double rate = dir_ * dot(nu, sys_.lie_bracket_adfb(x));
      const auto [lo, hi] = sys_.omega().bounds()[0];
      if (rate > 0.0) return {lo};
      if (rate < 0.0) return {hi};
      return r.u_star;
    }
    // probe a short way along the flow and re-minimize there
    Vec dy(2 * n_ + 1);
    rhs(y, r.u_star, dy);
    const double scale = std::max(1.0, norm(dy));
    const double eta = 1e-7 / scale;
    Vec yp(y.begin(), y.end());
    for (std::size_t i = 0; i < yp.size(); ++i) yp[i] += eta * dy[i];
    MinimizerResult rp = minimize_hamiltonian(sys_, 0.0, std::span<const double>(yp).first(n_),
                                              std::span<const double>(yp).subspan(n_, n_),
                                              opt_.hamiltonian);
    if (box_affine()) {
      for (std::size_t j = 0; j < m_; ++j) {
        const double sig = dot(nu, sys_.column(j, x));
        if (std::fabs(sig) <= opt_.hamiltonian.switch_tol) r.u_star[j] = rp.u_star[j];
      }
      return r.u_star;
    }
    return rp.degenerate ? r.u_star : rp.u_star;
  }

  // Whether `u` is still the minimizing branch at y.
  bool consistent(std::span<const double> y, std::span<const double> u) const {
    std::span<const double> x = y.first(n_);
    std::span<const double> nu = y.subspan(n_, n_);
    if (box_affine()) {
      const auto& bounds = sys_.omega().bounds();
      for (std::size_t j = 0; j < m_; ++j) {
        const double sig = dot(nu, sys_.column(j, x));
        if (u[j] == bounds[j].first) {
          if (sig < 0.0) return false;
        } else if (u[j] == bounds[j].second) {
          if (sig > 0.0) return false;
        } else if (std::fabs(sig) > 100.0 * opt_.hamiltonian.switch_tol) {
          return false;
        }
      }
      return true;
    }
    const MinimizerResult r = minimize_hamiltonian(sys_, 0.0, x, nu, opt_.hamiltonian);
    if (r.degenerate) return true;
    return distance(r.u_star, u) <= 1e-12;
  }

  double hamiltonian_at(std::span<const double> y, std::span<const double> u) const {
    return dot(y.subspan(n_, n_), sys_.eval_dynamics(0.0, y.first(n_), u));
  }

  const ControlSystem& sys_;
  const ManifoldOptions& opt_;
  int dir_;
  std::size_t n_, m_;
};

Bicharacteristic BranchTracer::run(const Seed& start, double W0, double tau_max) {
  Bicharacteristic br;
  br.seed = start;
  br.direction = dir_;
  br.n_ = n_;
  br.m_ = m_;
  if (start.x0.size() != n_ || start.nu0.size() != n_)
    throw DimensionError("seed has wrong dimension");

  const std::size_t dim = 2 * n_ + 1;
  Vec y(dim);
  std::copy(start.x0.begin(), start.x0.end(), y.begin());
  std::copy(start.nu0.begin(), start.nu0.end(), y.begin() + n_);
  y[2 * n_] = W0;

  Vec u;
  try {
    u = select_control(y);
  } catch (const std::exception& e) {
    br.failure = e.what();
    return br;
  }
  br.push_sample(0.0, y, u, hamiltonian_at(y, u), kSampleRegular);

  Vec frozen_u = u;
  Dopri5 ode(dim, [&](double, std::span<const double> yy, std::span<double> dy) {
    rhs(yy, frozen_u, dy);
  }, opt_.ode);

  const bool single_affine = box_affine() && m_ == 1;
  const double dtau = opt_.sample_dtau;
  double tau = 0.0;
  double h = 0.0;
  std::size_t switches = 0;

  try {
    h = ode.initial_step(0.0, y);
    while (tau < tau_max) {
      frozen_u = u;
      DenseStep step = ode.step(tau, y, h, tau_max);
      const double t1 = step.t1();

      // candidate check points: forced grid inside the step, then its end
      std::vector<double> checks;
      for (double g = (std::floor(tau / dtau) + 1.0) * dtau; g < t1 - 1e-12; g += dtau)
        checks.push_back(g);
      checks.push_back(t1);

      double prev_t = tau;
      double stop_at = t1;
      bool event = false;
      for (double tc : checks) {
        const Vec yc = tc == t1 ? step.y1 : step.at(tc);
        if (!consistent(yc, u)) {
          event = true;
          // bracket [prev_t, tc]: localize the first branch change
          double a = prev_t, b = tc;
          double found = b;
          for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (a + b);
            if (mid <= a || mid >= b) break;
            // run to the resolution of the bracket; stopping at |σ| <= event_tol
            // would make the event time depend on the scale of ν
            const Vec ym = step.at(mid);
            if (consistent(ym, u)) {
              a = mid;
            } else {
              b = mid;
            }
            found = b;
          }
          stop_at = found;
          break;
        }
        if (norm(std::span<const double>(yc).first(n_)) > opt_.state_budget) {
          stop_at = tc;
          break;
        }
        br.push_sample(tc, yc, u, hamiltonian_at(yc, u), kSampleRegular);
        prev_t = tc;
      }

      br.segments_.push_back({step, tau, stop_at, u});
      y = stop_at == t1 ? step.y1 : step.at(stop_at);
      tau = stop_at;

      if (norm(std::span<const double>(y).first(n_)) > opt_.state_budget) {
        if (br.tau_.back() != tau) br.push_sample(tau, y, u, hamiltonian_at(y, u), kSampleBudget);
        else br.flag_.back() = kSampleBudget;
        br.events.push_back({tau, Vec(y.begin(), y.begin() + n_),
                             Vec(y.begin() + n_, y.begin() + 2 * n_), EventKind::Budget,
                             std::numeric_limits<double>::quiet_NaN()});
        break;
      }
      if (!event) continue;

      const Vec x_ev(y.begin(), y.begin() + n_);
      const Vec nu_ev(y.begin() + n_, y.begin() + 2 * n_);
      double bracket = std::numeric_limits<double>::quiet_NaN();
      if (single_affine) {
        bracket = dot(nu_ev, sys_.lie_bracket_adfb(x_ev));
        if (std::fabs(bracket) <= opt_.transversality_tol) {
          br.push_sample(tau, y, u, hamiltonian_at(y, u), kSampleTransversalityFailure);
          br.events.push_back({tau, x_ev, nu_ev, EventKind::TransversalityFailure, bracket});
          break;
        }
      }
      const Vec u_new = select_control(y);
      if (distance(u_new, u) == 0.0) continue;  // grazing contact, no branch change
      br.push_sample(tau, y, u, hamiltonian_at(y, u), kSampleRegular);
      u = u_new;
      br.push_sample(tau, y, u, hamiltonian_at(y, u), kSampleSwitch);
      br.events.push_back({tau, x_ev, nu_ev, EventKind::Switch, bracket});
      if (++switches > opt_.max_switches) {
        br.flag_.back() = kSampleBudget;
        br.events.push_back({tau, x_ev, nu_ev, EventKind::Budget, bracket});
        break;
      }
      h = std::max(h, opt_.ode.h_min * 100.0);
    }
  } catch (const StepUnderflowError& e) {
    br.failure = e.what();
  } catch (const ExprDomainError& e) {
    br.failure = e.what();
  }
  return br;
}

Bicharacteristic trace_flow(const ControlSystem& sys, const Seed& start, double W0,
                            double tau_max, int direction, const ManifoldOptions& opt) {
  return BranchTracer(sys, opt, direction).run(start, W0, tau_max);
}

Bicharacteristic integrate_bicharacteristic(const ControlSystem& sys, const LyapunovSpec& lyap,
                                            const Seed& seed, const ManifoldOptions& opt) {
  if (std::fabs(lyap.value(seed.x0) - lyap.epsilon()) > 1e-9)
    throw ValidationError("seed does not lie on the level set V = epsilon");
  return trace_flow(sys, seed, lyap.value(seed.x0), opt.tau_max, -1, opt);
}

// ------------------------------------------------------ LagrangianManifold

LagrangianManifold::LagrangianManifold(const ControlSystem& sys, const LyapunovSpec& lyap,
                                       ManifoldOptions opt)
    : sys_(sys), lyap_(lyap), opt_(std::move(opt)) {
  if (sys_.n() != lyap_.n()) throw DimensionError("system and Lyapunov function dimensions differ");
  seeds_ = seed_manifold(lyap_, opt_.seeds);
  branches_.resize(seeds_.size());
  parallel_for(seeds_.size(), opt_.threads, [&](std::size_t k) {
    branches_[k] = integrate_bicharacteristic(sys_, lyap_, seeds_[k], opt_);
  });
  std::size_t failed = 0;
  for (std::size_t k = 0; k < branches_.size(); ++k) {
    const auto& b = branches_[k];
    std::string why;
    if (b.failure) why = *b.failure;
    else if (b.transversality_failed()) why = "transversality failure at a switch";
    if (!why.empty()) {
      ++failed;
      std::ostringstream msg;
      msg << "branch " << k << " (psi=" << seeds_[k].psi << "): " << why;
      failures_.push_back(msg.str());
    }
  }
  if (2 * failed > branches_.size())
    throw NumericalError("manifold construction failed on " + std::to_string(failed) + " of " +
                         std::to_string(branches_.size()) + " branches");
  build_index();
}

std::size_t LagrangianManifold::branch_gap(std::size_t a, std::size_t b) const {
  const std::size_t N = branches_.size();
  const std::size_t d = a > b ? a - b : b - a;
  return sys_.n() == 2 ? std::min(d, N - d) : d;
}

void LagrangianManifold::build_index() {
  const std::size_t n = sys_.n();
  const std::size_t N = branches_.size();
  offsets_.assign(N + 1, 0);
  for (std::size_t k = 0; k < N; ++k) offsets_[k + 1] = offsets_[k] + branches_[k].size();
  const std::size_t total = offsets_[N];
  refs_.resize(total);
  spacing_.assign(total, 0.0);
  std::vector<double> coords(total * n);
  for (std::size_t k = 0; k < N; ++k)
    for (std::size_t i = 0; i < branches_[k].size(); ++i) {
      const std::size_t f = offsets_[k] + i;
      refs_[f] = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(i)};
      const auto x = branches_[k].x(i);
      std::copy(x.begin(), x.end(), coords.begin() + f * n);
    }

  parallel_for(N, opt_.threads, [&](std::size_t k) {
    const auto& b = branches_[k];
    for (std::size_t i = 0; i < b.size(); ++i) {
      double along = 0.0;
      if (i > 0) along = std::max(along, distance(b.x(i), b.x(i - 1)));
      if (i + 1 < b.size()) along = std::max(along, distance(b.x(i), b.x(i + 1)));
      double across = std::numeric_limits<double>::infinity();
      if (n == 2 && N > 1) {
        for (std::size_t nb : {(k + 1) % N, (k + N - 1) % N}) {
          const auto& other = branches_[nb];
          if (other.size() == 0) continue;
          const double t = std::min(b.tau(i), other.tau_end());
          across = std::min(across, distance(b.x(i), other.state_at(t).x));
        }
      }
      spacing_[offsets_[k] + i] = std::isfinite(across) ? std::max(along, across) : along;
    }
  });

  std::vector<double> sorted(spacing_);
  double cell = 1.0;
  if (!sorted.empty()) {
    std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
    cell = sorted[sorted.size() / 2];
  }
  if (!(cell > 0.0)) cell = 1e-3;
  max_radius_ = 0.0;
  for (const SampleRef& r : refs_) max_radius_ = std::max(max_radius_, coverage_radius(r));
  index_.build(n, std::move(coords), opt_.radius_factor * cell);
}

double LagrangianManifold::coverage_radius(SampleRef r) const {
  if (opt_.query_radius) return *opt_.query_radius;
  return opt_.radius_factor * spacing(r);
}

namespace {
constexpr std::size_t kQueryCandidates = 24;
constexpr double kSheetTol = 1e-3;
}  // namespace

ManifoldQuery LagrangianManifold::query(std::span<const double> x) const {
  if (x.size() != sys_.n()) throw DimensionError("query point has wrong dimension");
  ManifoldQuery q;
  const auto hits = index_.k_nearest(x, kQueryCandidates, max_radius_);

  struct Cand {
    SampleRef ref;
    double d;
    double W_pred;
  };
  std::vector<Cand> covering;
  for (const auto& [id, d] : hits) {
    const SampleRef r = refs_[id];
    if (d > coverage_radius(r)) continue;
    const auto& b = branches_[r.branch];
    const auto xs = b.x(r.index);
    const auto nus = b.nu(r.index);
    double pred = b.W(r.index);
    for (std::size_t i = 0; i < x.size(); ++i) pred += nus[i] * (x[i] - xs[i]);
    covering.push_back({r, d, pred});
  }
  if (covering.empty()) {
    // thin wedges between diverging neighbours: accept points inside a ruled cell
    if (hits.empty()) return q;
    ManifoldQuery near;
    near.ref = refs_[hits.front().first];
    CostateEstimate est;
    if (!interpolate_planar(x, near, est)) return q;
    const auto& b = branches_[near.ref.branch];
    const auto u = b.u(near.ref.index);
    q.covered = true;
    q.ref = near.ref;
    q.distance = hits.front().second;
    q.nu = est.nu;
    q.u.assign(u.begin(), u.end());
    q.W = est.W;
    return q;
  }

  Cand chosen = covering.front();
  for (const auto& c : covering) {
    if (branch_gap(c.ref.branch, chosen.ref.branch) <= 2) continue;
    if (std::fabs(c.W_pred - chosen.W_pred) > kSheetTol * std::max(1.0, std::fabs(chosen.W_pred))) {
      q.multivalued = true;
      if (c.W_pred < chosen.W_pred) chosen = c;
    }
  }
  const auto& b = branches_[chosen.ref.branch];
  q.covered = true;
  q.ref = chosen.ref;
  q.distance = chosen.d;
  const auto nu = b.nu(chosen.ref.index);
  const auto u = b.u(chosen.ref.index);
  q.nu.assign(nu.begin(), nu.end());
  q.u.assign(u.begin(), u.end());
  q.W = b.W(chosen.ref.index);
  return q;
}

bool LagrangianManifold::invert_cell(std::size_t b, std::size_t c, std::span<const double> x,
                                     double tau0, CostateEstimate& est) const {
  // Solves x = (1 − s) x_b(τ) + s x_c(τ) for (s, τ) by Newton's method on the
  // ruled surface between two neighbouring branches.
  const Bicharacteristic& B = branches_[b];
  const Bicharacteristic& C = branches_[c];
  if (B.size() < 2 || C.size() < 2) return false;
  const double T = std::min(B.tau_end(), C.tau_end());
  double s = 0.5, tau = std::clamp(tau0, 0.0, T);
  const double scale = std::max(1.0, std::hypot(x[0], x[1]));
  auto velocity = [&](const Bicharacteristic& br, const Bicharacteristic::State& st) {
    Vec v = sys_.eval_dynamics(st.x, st.u);
    for (double& c : v) c *= br.direction;
    return v;
  };
  int outside = 0;  // consecutive iterates with s clamped away from the cell
  for (int it = 0; it < 40; ++it) {
    const auto sb = B.state_at(tau), sc = C.state_at(tau);
    const double F0 = (1 - s) * sb.x[0] + s * sc.x[0] - x[0];
    const double F1 = (1 - s) * sb.x[1] + s * sc.x[1] - x[1];
    if (std::hypot(F0, F1) <= 1e-11 * scale) {
      if (s < -1e-9 || s > 1.0 + 1e-9) return false;
      s = std::clamp(s, 0.0, 1.0);
      est.nu = {(1 - s) * sb.nu[0] + s * sc.nu[0], (1 - s) * sb.nu[1] + s * sc.nu[1]};
      est.W = (1 - s) * sb.W + s * sc.W;
      return true;
    }
    const Vec vb = velocity(B, sb), vc = velocity(C, sc);
    const double j00 = sc.x[0] - sb.x[0], j10 = sc.x[1] - sb.x[1];
    const double j01 = (1 - s) * vb[0] + s * vc[0], j11 = (1 - s) * vb[1] + s * vc[1];
    const double det = j00 * j11 - j01 * j10;
    if (det == 0.0 || !std::isfinite(det)) return false;
    const double ds = (F0 * j11 - F1 * j01) / det;
    const double dt = (j00 * F1 - j10 * F0) / det;
    const double s_next = s - ds;
    s = std::clamp(s_next, -0.5, 1.5);
    outside = s != s_next ? outside + 1 : 0;
    if (outside == 3) return false;
    const double next = tau - dt;
    if (next < 0.0 && tau == 0.0) return false;
    if (next > T && tau == T) return false;
    tau = std::clamp(next, 0.0, T);
  }
  return false;
}

bool LagrangianManifold::interpolate_planar(std::span<const double> x, const ManifoldQuery& q,
                                            CostateEstimate& est) const {
  const std::size_t N = branches_.size();
  if (sys_.n() != 2 || N < 4) return false;
  const std::size_t b = q.ref.branch;
  const double tau0 = branches_[b].tau(q.ref.index);
  for (std::size_t off : {0u, 1u, 2u}) {
    const std::size_t up = (b + off) % N, down = (b + N - off) % N;
    if (invert_cell(up, (up + 1) % N, x, tau0, est)) return true;
    if (invert_cell((down + N - 1) % N, down, x, tau0, est)) return true;
  }
  return false;
}

CostateEstimate LagrangianManifold::interpolate(std::span<const double> x, std::size_t k) const {
  CostateEstimate est;
  const ManifoldQuery q = query(x);
  if (!q.covered) return est;
  est.covered = true;
  est.nearest = q.ref;
  est.multivalued = q.multivalued;
  const std::size_t n = sys_.n();
  const auto& pb = branches_[q.ref.branch];
  const auto pnu = pb.nu(q.ref.index);
  const auto px = pb.x(q.ref.index);
  double pW = pb.W(q.ref.index);
  for (std::size_t i = 0; i < n; ++i) pW += pnu[i] * (x[i] - px[i]);

  if (interpolate_planar(x, q, est)) return est;
  if (q.distance == 0.0 || k <= 1) {
    est.nu = q.nu;
    est.W = pW;
    return est;
  }
  const double reach = 2.0 * coverage_radius(q.ref) + q.distance;
  const auto hits = index_.k_nearest(x, 3 * k, reach);
  Vec nu(n, 0.0);
  double W = 0.0, wsum = 0.0;
  std::size_t used = 0;
  for (const auto& [id, d] : hits) {
    if (used == k) break;
    const SampleRef r = refs_[id];
    const auto& b = branches_[r.branch];
    const auto xs = b.x(r.index);
    const auto nus = b.nu(r.index);
    double pred = b.W(r.index);
    for (std::size_t i = 0; i < n; ++i) pred += nus[i] * (x[i] - xs[i]);
    const bool same_sheet =
        branch_gap(r.branch, q.ref.branch) <= 2 ||
        std::fabs(pred - pW) <= kSheetTol * std::max(1.0, std::fabs(pW));
    if (!same_sheet) continue;
    if (d == 0.0) {
      est.nu.assign(nus.begin(), nus.end());
      est.W = pred;
      return est;
    }
    const double w = 1.0 / (d * d);
    for (std::size_t i = 0; i < n; ++i) nu[i] += w * nus[i];
    W += w * pred;
    wsum += w;
    ++used;
  }
  if (wsum == 0.0) {
    est.nu = q.nu;
    est.W = pW;
    return est;
  }
  for (auto& v : nu) v /= wsum;
  est.nu = std::move(nu);
  est.W = W / wsum;
  return est;
}

double LagrangianManifold::jacobian_along(std::size_t branch, double tau) const {
  if (sys_.n() != 2) throw DimensionError("jacobian_along is defined for planar systems");
  const std::size_t N = branches_.size();
  if (branch >= N) throw std::out_of_range("branch index out of range");
  const auto& b = branches_[branch];
  const auto& next = branches_[(branch + 1) % N];
  const auto& prev = branches_[(branch + N - 1) % N];
  const auto st = b.state_at(tau);
  const auto xn = next.state_at(tau).x;
  const auto xp = prev.state_at(tau).x;
  const double dpsi = 2.0 * (2.0 * std::numbers::pi / double(N));
  const double dx_dpsi0 = (xn[0] - xp[0]) / dpsi;
  const double dx_dpsi1 = (xn[1] - xp[1]) / dpsi;
  const Vec f = sys_.eval_dynamics(0.0, st.x, st.u);
  const double s = b.direction >= 0 ? 1.0 : -1.0;
  return det2(dx_dpsi0, dx_dpsi1, s * f[0], s * f[1]);
}

std::vector<Illumination> LagrangianManifold::illumination_check(
    const std::vector<Vec>& points) const {
  std::vector<Illumination> out(points.size());
  parallel_for(points.size(), opt_.threads, [&](std::size_t i) {
    if (lyap_.value(points[i]) <= lyap_.epsilon()) {
      out[i] = Illumination::Inner;
    } else {
      out[i] = query(points[i]).covered ? Illumination::Illuminated : Illumination::Dark;
    }
  });
  return out;
}

std::vector<SwitchPoint> LagrangianManifold::switching_curve() const {
  std::vector<SwitchPoint> pts;
  for (std::size_t k = 0; k < branches_.size(); ++k) {
    std::size_t ordinal = 0;
    for (const auto& e : branches_[k].events) {
      if (e.kind != EventKind::Switch) continue;
      pts.push_back({e.x, e.nu, k, seeds_[k].psi, e.tau, ordinal++});
    }
  }
  std::stable_sort(pts.begin(), pts.end(), [](const SwitchPoint& a, const SwitchPoint& b) {
    return a.ordinal < b.ordinal || (a.ordinal == b.ordinal && a.branch < b.branch);
  });
  return pts;
}

std::vector<std::vector<SwitchPoint>> LagrangianManifold::switching_polylines() const {
  std::vector<std::vector<SwitchPoint>> lines;
  for (auto& p : switching_curve()) {
    if (lines.empty() || lines.back().back().ordinal != p.ordinal ||
        lines.back().back().branch + 1 != p.branch)
      lines.emplace_back();
    lines.back().push_back(std::move(p));
  }
  return lines;
}

LagrangianManifold build_manifold(const ControlSystem& sys, const LyapunovSpec& lyap,
                                  const ManifoldOptions& opt) {
  return LagrangianManifold(sys, lyap, opt);
}

double transverse_action(const ControlSystem& sys, const LyapunovSpec& lyap, double psi_a,
                         double psi_b, double tau, std::size_t pieces,
                         const ManifoldOptions& opt) {
  if (pieces == 0) throw std::invalid_argument("pieces must be positive");
  ManifoldOptions local = opt;
  local.tau_max = tau;
  std::vector<Bicharacteristic::State> states(pieces + 1);
  parallel_for(pieces + 1, opt.threads, [&](std::size_t i) {
    const double psi = psi_a + (psi_b - psi_a) * double(i) / double(pieces);
    const auto br = integrate_bicharacteristic(sys, lyap, seed_at(lyap, psi), local);
    if (br.failure || br.tau_end() < tau)
      throw NumericalError("branch did not reach the requested tau");
    states[i] = br.state_at(tau);
  });
  double action = 0.0;
  for (std::size_t i = 0; i < pieces; ++i)
    for (std::size_t c = 0; c < sys.n(); ++c)
      action += 0.5 * (states[i].nu[c] + states[i + 1].nu[c]) *
                (states[i + 1].x[c] - states[i].x[c]);
  return action;
}

}  // namespace pmpstab
