#include "pmpstab/system.hpp"

#include <algorithm>
#include <cmath>

#include "pmpstab/grid.hpp"

namespace pmpstab {

// ------------------------------------------------------------ ControlSet

ControlSet ControlSet::box(std::vector<Interval> bounds) {
  if (bounds.empty()) throw ValidationError("control box must have at least one channel");
  for (const auto& [lo, hi] : bounds) {
    if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi))
      throw ValidationError("control box bounds must satisfy lo < hi");
  }
  ControlSet s;
  s.kind_ = Kind::Box;
  s.dim_ = bounds.size();
  s.bounds_ = std::move(bounds);
  return s;
}

ControlSet ControlSet::unit_box(std::size_t m) {
  return box(std::vector<Interval>(m, Interval{-1.0, 1.0}));
}

ControlSet ControlSet::finite(std::vector<Vec> points) {
  if (points.empty()) throw ValidationError("finite control set must be non-empty");
  const std::size_t m = points.front().size();
  if (m == 0) throw ValidationError("control points must have at least one channel");
  for (const auto& p : points) {
    if (p.size() != m) throw ValidationError("control points have inconsistent dimension");
    for (double v : p)
      if (!std::isfinite(v)) throw ValidationError("control points must be finite");
  }
  ControlSet s;
  s.kind_ = Kind::Finite;
  s.dim_ = m;
  s.points_ = std::move(points);
  return s;
}

Vec ControlSet::midpoint() const {
  Vec mid(dim_, 0.0);
  if (kind_ == Kind::Box) {
    for (std::size_t j = 0; j < dim_; ++j) mid[j] = 0.5 * (bounds_[j].first + bounds_[j].second);
  } else {
    // the finite set need not be convex; the first point stands in for "any u"
    mid = points_.front();
  }
  return mid;
}

bool ControlSet::contains(std::span<const double> u, double tol) const {
  if (u.size() != dim_) return false;
  if (kind_ == Kind::Box) {
    for (std::size_t j = 0; j < dim_; ++j)
      if (u[j] < bounds_[j].first - tol || u[j] > bounds_[j].second + tol) return false;
    return true;
  }
  return std::any_of(points_.begin(), points_.end(),
                     [&](const Vec& p) { return distance(p, u) <= tol; });
}

// --------------------------------------------------------- ControlSystem

namespace {

std::vector<std::vector<Expr>> jacobian_exprs(const std::vector<Expr>& f, std::size_t n) {
  std::vector<std::vector<Expr>> J(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) {
    J[i].reserve(n);
    for (std::size_t k = 0; k < n; ++k) J[i].push_back(f[i].diff(Variable::state(k)));
  }
  return J;
}

Matrix eval_matrix(const std::vector<std::vector<Expr>>& J, const EvalPoint& p, bool* kink) {
  Matrix out(J.size(), J.empty() ? 0 : J.front().size());
  for (std::size_t i = 0; i < out.rows; ++i)
    for (std::size_t k = 0; k < out.cols; ++k) {
      out(i, k) = J[i][k].eval(p);
      if (kink && J[i][k].kink()) *kink = true;
    }
  return out;
}

void check_exprs(const std::vector<Expr>& es, std::size_t n, std::size_t m, bool allow_u,
                 const char* what) {
  for (const auto& e : es) {
    if (e.empty()) throw ValidationError(std::string(what) + ": empty expression");
    for (std::size_t k = n; k < n + 8; ++k)
      if (e.depends_on(Variable::state(k)))
        throw DimensionError(std::string(what) + ": state index out of range");
    if (!allow_u && e.depends_on_kind(VarKind::Control))
      throw ValidationError(std::string(what) + ": must not depend on the control");
    for (std::size_t j = m; j < m + 8; ++j)
      if (e.depends_on(Variable::control(j)))
        throw DimensionError(std::string(what) + ": control index out of range");
  }
}

}  // namespace

ControlSystem ControlSystem::affine(std::size_t n, std::vector<Expr> drift,
                                    std::vector<std::vector<Expr>> columns, ControlSet omega) {
  if (n == 0) throw DimensionError("state dimension must be positive");
  if (drift.size() != n)
    throw DimensionError("drift has " + std::to_string(drift.size()) + " components, expected " +
                         std::to_string(n));
  if (columns.empty()) throw DimensionError("affine system needs at least one input column");
  for (const auto& c : columns)
    if (c.size() != n) throw DimensionError("input column has wrong length");
  if (omega.dim() != columns.size())
    throw DimensionError("control set dimension does not match number of input columns");
  check_exprs(drift, n, 0, false, "drift");
  for (const auto& c : columns) check_exprs(c, n, 0, false, "input column");

  ControlSystem s;
  s.n_ = n;
  s.m_ = columns.size();
  s.affine_ = true;
  s.omega_ = std::move(omega);
  s.drift_ = std::move(drift);
  s.columns_ = std::move(columns);
  for (const auto& e : s.drift_) s.autonomous_ = s.autonomous_ && !e.depends_on(Variable::time());
  for (const auto& c : s.columns_)
    for (const auto& e : c) s.autonomous_ = s.autonomous_ && !e.depends_on(Variable::time());

  s.f_.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Expr fi = s.drift_[i];
    for (std::size_t j = 0; j < s.m_; ++j)
      fi = fi + s.columns_[j][i] * Expr::variable(Variable::control(j));
    s.f_.push_back(fi);
  }
  s.df_dx_ = jacobian_exprs(s.f_, n);
  s.ddrift_dx_ = jacobian_exprs(s.drift_, n);
  for (const auto& c : s.columns_) s.dcol_dx_.push_back(jacobian_exprs(c, n));
  return s;
}

ControlSystem ControlSystem::general(std::size_t n, std::size_t m, std::vector<Expr> f,
                                     ControlSet omega) {
  if (n == 0 || m == 0) throw DimensionError("dimensions must be positive");
  if (f.size() != n)
    throw DimensionError("vector field has " + std::to_string(f.size()) +
                         " components, expected " + std::to_string(n));
  if (omega.dim() != m) throw DimensionError("control set dimension does not match m");
  check_exprs(f, n, m, true, "vector field");
  ControlSystem s;
  s.n_ = n;
  s.m_ = m;
  s.affine_ = false;
  s.omega_ = std::move(omega);
  s.f_ = std::move(f);
  for (const auto& e : s.f_) s.autonomous_ = s.autonomous_ && !e.depends_on(Variable::time());
  s.df_dx_ = jacobian_exprs(s.f_, n);
  return s;
}

void ControlSystem::check_dims(std::span<const double> x, std::span<const double> u) const {
  if (x.size() != n_) throw DimensionError("state vector has wrong length");
  if (u.size() != m_) throw DimensionError("control vector has wrong length");
}

void ControlSystem::require_affine(const char* what) const {
  if (!affine_) throw NotAffineError(std::string(what) + " requires a control-affine system");
}

void ControlSystem::require_planar_single_input(const char* what) const {
  require_affine(what);
  if (n_ != 2 || m_ != 1)
    throw DimensionError(std::string(what) + " requires a planar single-input system");
}

Vec ControlSystem::eval_dynamics(double t, std::span<const double> x,
                                 std::span<const double> u) const {
  check_dims(x, u);
  Vec out(n_);
  if (affine_) {
    const EvalPoint p{x, {}, t};
    for (std::size_t i = 0; i < n_; ++i) {
      double v = drift_[i].eval(p);
      for (std::size_t j = 0; j < m_; ++j) v += u[j] * columns_[j][i].eval(p);
      out[i] = v;
    }
  } else {
    const EvalPoint p{x, u, t};
    for (std::size_t i = 0; i < n_; ++i) out[i] = f_[i].eval(p);
  }
  return out;
}

Vec ControlSystem::drift(std::span<const double> x) const {
  require_affine("drift");
  if (x.size() != n_) throw DimensionError("state vector has wrong length");
  Vec out(n_);
  for (std::size_t i = 0; i < n_; ++i) out[i] = drift_[i].eval(x);
  return out;
}

Vec ControlSystem::column(std::size_t j, std::span<const double> x) const {
  require_affine("column");
  if (x.size() != n_) throw DimensionError("state vector has wrong length");
  Vec out(n_);
  for (std::size_t i = 0; i < n_; ++i) out[i] = columns_.at(j)[i].eval(x);
  return out;
}

ControlSystem::Jacobian ControlSystem::jacobian_x(double t, std::span<const double> x,
                                                  std::span<const double> u) const {
  check_dims(x, u);
  Jacobian J;
  J.value = eval_matrix(df_dx_, EvalPoint{x, u, t}, &J.kink);
  return J;
}

Matrix ControlSystem::drift_jacobian(std::span<const double> x) const {
  require_affine("drift_jacobian");
  return eval_matrix(ddrift_dx_, EvalPoint{x}, nullptr);
}

Matrix ControlSystem::column_jacobian(std::size_t j, std::span<const double> x) const {
  require_affine("column_jacobian");
  return eval_matrix(dcol_dx_.at(j), EvalPoint{x}, nullptr);
}

Vec ControlSystem::lie_bracket_adfb(std::span<const double> x) const {
  require_affine("lie_bracket_adfb");
  if (m_ != 1) throw NotAffineError("lie_bracket_adfb requires a single-input system");
  if (x.size() != n_) throw DimensionError("state vector has wrong length");
  const Vec f = drift(x);
  const Vec b = column(0, x);
  const Vec db_f = column_jacobian(0, x) * f;
  const Vec df_b = drift_jacobian(x) * b;
  Vec out(n_);
  for (std::size_t i = 0; i < n_; ++i) out[i] = db_f[i] - df_b[i];
  return out;
}

double ControlSystem::equilibrium_residual(std::span<const double> x) const {
  require_planar_single_input("equilibrium_residual");
  const Vec f = drift(x);
  const Vec b = column(0, x);
  return det2(f[0], f[1], b[0], b[1]);
}

bool ControlSystem::rank_condition(std::span<const double> x, double tol) const {
  require_planar_single_input("rank_condition");
  const Vec b = column(0, x);
  const Vec ad = lie_bracket_adfb(x);
  return std::fabs(det2(b[0], b[1], ad[0], ad[1])) > tol;
}

// ---------------------------------------------------------- LyapunovSpec


LyapunovSpec::LyapunovSpec(Expr V, std::size_t n, double epsilon, Box box,
                           std::size_t check_grid)
    : V_(std::move(V)), n_(n), epsilon_(epsilon), box_(std::move(box)) {
  if (!(epsilon_ > 0.0) || !std::isfinite(epsilon_))
    throw ValidationError("lyapunov.epsilon must be positive");
  if (box_.size() != n_) throw DimensionError("working box dimension does not match n");
  for (const auto& [lo, hi] : box_)
    if (!(lo < 0.0 && hi > 0.0)) throw ValidationError("working box must contain the origin");
  if (V_.depends_on_kind(VarKind::Control) || V_.depends_on(Variable::time()))
    throw ValidationError("V must depend on x only");
  for (std::size_t k = n_; k < n_ + 8; ++k)
    if (V_.depends_on(Variable::state(k))) throw DimensionError("V: state index out of range");
  for (std::size_t k = 0; k < n_; ++k) grad_.push_back(V_.diff(Variable::state(k)));

  const Vec origin(n_, 0.0);
  if (std::fabs(V_.eval(origin)) > 1e-12) throw ValidationError("V(0) must be 0");
  for_each_grid_point(box_, check_grid, [&](const Vec& x) {
    if (norm(x) == 0.0) return;
    if (!(V_.eval(x) > 0.0)) throw ValidationError("V is not positive away from the origin");
  });
}

Vec LyapunovSpec::gradient(std::span<const double> x) const {
  Vec g(n_);
  for (std::size_t k = 0; k < n_; ++k) g[k] = grad_[k].eval(x);
  return g;
}

// ---------------------------------------------------------- growth bound

GrowthBoundReport sample_growth_bound(const ControlSystem& sys, const Box& box,
                                      std::size_t grid) {
  GrowthBoundReport r;
  double max_radius = 0.0;
  for (const auto& [lo, hi] : box) max_radius = std::max({max_radius, -lo, hi});
  const Vec u = sys.omega().midpoint();
  for_each_grid_point(box, grid, [&](const Vec& x) {
    const double nx = norm(x);
    if (nx == 0.0) return;
    double q = 0.0;
    try {
      const Vec Jx = sys.jacobian_x(0.0, x, u).value * x;
      q = norm(Jx) / nx;
    } catch (const ExprDomainError&) {
      return;
    }
    double& slot = nx <= 0.5 * max_radius ? r.q_inner : r.q_outer;
    slot = std::max(slot, q);
  });
  if (r.q_outer > 1.5 * r.q_inner + 1e-12)
    r.warning = "growth constant keeps increasing towards the box boundary (inner " +
                std::to_string(r.q_inner) + ", outer " + std::to_string(r.q_outer) +
                "); the uniform bound is an assumption";
  return r;
}

}  // namespace pmpstab
