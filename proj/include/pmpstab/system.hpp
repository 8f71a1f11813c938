#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pmpstab/expr.hpp"
#include "pmpstab/linalg.hpp"

namespace pmpstab {

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NotAffineError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Interval = std::pair<double, double>;
using Box = std::vector<Interval>;

/// Compact control constraint set: a box or a finite list of points.
class ControlSet {
 public:
  enum class Kind { Box, Finite };

  static ControlSet box(std::vector<Interval> bounds);
  static ControlSet unit_box(std::size_t m);
  static ControlSet finite(std::vector<Vec> points);

  Kind kind() const { return kind_; }
  std::size_t dim() const { return dim_; }
  const std::vector<Interval>& bounds() const { return bounds_; }
  const std::vector<Vec>& points() const { return points_; }

  Vec midpoint() const;
  bool contains(std::span<const double> u, double tol = 1e-12) const;

 private:
  Kind kind_ = Kind::Box;
  std::size_t dim_ = 0;
  std::vector<Interval> bounds_;
  std::vector<Vec> points_;
};

/// ẋ = f(t, x, u), either general or affine in u: ẋ = drift(x) + Σ u_j b_j(x).
class ControlSystem {
 public:
  static ControlSystem affine(std::size_t n, std::vector<Expr> drift,
                              std::vector<std::vector<Expr>> columns, ControlSet omega);
  static ControlSystem general(std::size_t n, std::size_t m, std::vector<Expr> f,
                               ControlSet omega);

  std::size_t n() const { return n_; }
  std::size_t m() const { return m_; }
  bool is_affine() const { return affine_; }
  bool autonomous() const { return autonomous_; }
  const ControlSet& omega() const { return omega_; }

  const std::vector<Expr>& f_exprs() const { return f_; }
  const std::vector<Expr>& drift_exprs() const { return drift_; }
  const std::vector<std::vector<Expr>>& column_exprs() const { return columns_; }

  Vec eval_dynamics(double t, std::span<const double> x, std::span<const double> u) const;
  Vec eval_dynamics(std::span<const double> x, std::span<const double> u) const {
    return eval_dynamics(0.0, x, u);
  }

  /// Affine systems only.
  Vec drift(std::span<const double> x) const;
  Vec column(std::size_t j, std::span<const double> x) const;

  struct Jacobian {
    Matrix value;
    bool kink = false;  // a derivative passed through abs/sign
  };
  Jacobian jacobian_x(double t, std::span<const double> x, std::span<const double> u) const;

  /// Affine only: ∂drift/∂x and ∂b_j/∂x.
  Matrix drift_jacobian(std::span<const double> x) const;
  Matrix column_jacobian(std::size_t j, std::span<const double> x) const;

  /// [f, b] = (∂b/∂x) f − (∂f/∂x) b for a single-input affine system.
  Vec lie_bracket_adfb(std::span<const double> x) const;

  /// det(f(x), b(x)) for planar single-input affine systems.
  double equilibrium_residual(std::span<const double> x) const;

  /// |det(b(x), [f,b](x))| > tol for planar single-input affine systems.
  bool rank_condition(std::span<const double> x, double tol = 1e-9) const;

 private:
  void check_dims(std::span<const double> x, std::span<const double> u) const;
  void require_affine(const char* what) const;
  void require_planar_single_input(const char* what) const;

  std::size_t n_ = 0, m_ = 0;
  bool affine_ = false;
  bool autonomous_ = true;
  ControlSet omega_;
  std::vector<Expr> f_;                        // general form; for affine the assembled f
  std::vector<Expr> drift_;                    // affine
  std::vector<std::vector<Expr>> columns_;     // affine, columns_[j][i]
  std::vector<std::vector<Expr>> df_dx_;       // [i][k] = ∂f_i/∂x_k
  std::vector<std::vector<Expr>> ddrift_dx_;   // affine
  std::vector<std::vector<std::vector<Expr>>> dcol_dx_;  // affine, [j][i][k]
};

/// Lyapunov function data and the level ε that defines the seed manifold.
class LyapunovSpec {
 public:
  /// Checks V(0) = 0 and V > 0 on a grid over `box` (excluding the origin).
  LyapunovSpec(Expr V, std::size_t n, double epsilon, Box box, std::size_t check_grid = 21);

  double value(std::span<const double> x) const { return V_.eval(x); }
  Vec gradient(std::span<const double> x) const;

  const Expr& V() const { return V_; }
  const std::vector<Expr>& grad_exprs() const { return grad_; }
  double epsilon() const { return epsilon_; }
  const Box& box() const { return box_; }
  std::size_t n() const { return n_; }

 private:
  Expr V_;
  std::vector<Expr> grad_;
  std::size_t n_;
  double epsilon_;
  Box box_;
};

/// Sampled estimate of the growth constant Q with ‖(∂f/∂x) x‖ ≤ Q‖x‖ over the box.
/// `warning` is set when the estimate keeps growing towards the box boundary.
struct GrowthBoundReport {
  double q_inner = 0.0;
  double q_outer = 0.0;
  std::optional<std::string> warning;
};
GrowthBoundReport sample_growth_bound(const ControlSystem& sys, const Box& box,
                                      std::size_t grid = 11);

}  // namespace pmpstab
