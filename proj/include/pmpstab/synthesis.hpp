#pragma once

// Composite feedback: the local law w(x) on {V <= ε} and the Pontryagin
// bang-bang law read off the Lagrangian manifold outside.

#include <array>
#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

#include "pmpstab/manifold.hpp"

namespace pmpstab {

class NotCoveredError : public std::runtime_error {
 public:
  explicit NotCoveredError(Vec x);
  const Vec& point() const { return x_; }

 private:
  Vec x_;
};

class DecreaseViolation : public ValidationError {
 public:
  DecreaseViolation(Vec witness, double derivative);
  const Vec& witness() const { return witness_; }
  double derivative() const { return derivative_; }

 private:
  Vec witness_;
  double derivative_;
};

struct FeedbackOptions {
  double C = 1.0;                   // required bound on |u|
  bool saturate_inner = true;       // project w(x) onto a box Ω
  std::size_t decrease_grid = 41;   // points per axis over the box around {V <= ε}
  std::size_t level_samples = 256;  // points on {V = ε}
  double decrease_tol = 1e-9;
};

struct DecreaseReport {
  double max_inside = 0.0;     // max ⟨grad V, f(x, w(x))⟩ over sampled 0 < V <= ε
  double level_margin = 0.0;   // max of the same on {V = ε}; < 0 is the strict condition
  Vec level_witness;           // where level_margin is attained
  double max_inner_abs = 0.0;  // max |w(x)| before saturation on the sampled set
  std::size_t samples = 0;
};

struct FeedbackValue {
  Vec u;
  bool inner = false;
  bool degenerate = false;  // ⟨ν, b⟩ vanished; the stored branch control was used
  Vec nu;                   // co-state used by the outer law
  double W = 0.0;
  bool multivalued = false;
  SampleRef ref{};
};

class FeedbackLaw {
 public:
  FeedbackLaw(std::shared_ptr<const LagrangianManifold> manifold, std::vector<Expr> inner,
              FeedbackOptions opt, DecreaseReport report);

  const LagrangianManifold& manifold() const { return *man_; }
  std::shared_ptr<const LagrangianManifold> manifold_ptr() const { return man_; }
  const ControlSystem& system() const { return man_->system(); }
  const LyapunovSpec& lyapunov() const { return man_->lyapunov(); }
  const std::vector<Expr>& inner() const { return inner_; }
  const FeedbackOptions& options() const { return opt_; }
  const DecreaseReport& decrease_report() const { return report_; }
  double epsilon() const { return man_->epsilon(); }
  double C() const { return opt_.C; }
  /// Largest |bound| of a box Ω (the outer amplitude k).
  double amplitude() const;

  bool in_inner_region(std::span<const double> x) const;
  /// w(x), projected onto Ω when saturate_inner is set.
  Vec inner_value(std::span<const double> x) const;

  /// Full evaluation. Throws NotCoveredError outside the projection of L_ε.
  FeedbackValue evaluate(std::span<const double> x) const;
  Vec operator()(std::span<const double> x) const { return evaluate(x).u; }

  /// Signed switching value ⟨ν(x), b(x)⟩ of the outer law (single input),
  /// with ν interpolated on the manifold. NaN when not covered.
  double switching_value(std::span<const double> x) const;

 private:
  std::shared_ptr<const LagrangianManifold> man_;
  std::vector<Expr> inner_;
  FeedbackOptions opt_;
  DecreaseReport report_;
};

/// Samples the decrease condition of the local law and assembles the law.
/// Throws DecreaseViolation with a witness point when it fails.
FeedbackLaw assemble_feedback(std::shared_ptr<const LagrangianManifold> manifold,
                              std::vector<Expr> inner, const FeedbackOptions& opt = {});

/// Decrease check alone (also used by assemble_feedback).
DecreaseReport check_decrease(const ControlSystem& sys, const LyapunovSpec& lyap,
                              const std::vector<Expr>& inner, const FeedbackOptions& opt);

Vec eval_feedback(const FeedbackLaw& law, std::span<const double> x);

struct BoundReport {
  double max_abs = 0.0;
  bool ok = true;
  std::optional<Vec> witness;  // first grid point with |u| > C
  std::size_t samples = 0;
  std::size_t uncovered = 0;
};

BoundReport verify_bound(const FeedbackLaw& law, const Box& box, std::size_t grid);

/// The closed-form double-integrator switching curve for the unit circle,
/// valid for τ in (π/2, π) ∪ (3π/2, 2π). Throws std::domain_error otherwise.
std::array<double, 2> reference_switching_point(double tau);
std::vector<std::array<double, 2>> reference_switching_curve(const std::vector<double>& taus);
bool in_reference_range(double tau);

/// `count` parameters spread evenly over both reference intervals, each
/// shrunk by `margin` at both ends.
std::vector<double> reference_taus(std::size_t count, double margin = 0.05);

/// Euclidean distance from p to the nearest segment of any polyline.
double distance_to_polylines(std::array<double, 2> p,
                             const std::vector<std::vector<SwitchPoint>>& lines);

struct CurveComparison {
  double max_deviation = 0.0;
  double worst_tau = 0.0;
  std::size_t points = 0;
};

/// Largest distance from the reference curve at `taus` to the first-switch
/// polylines of the manifold.
CurveComparison compare_switching_curve(const LagrangianManifold& man,
                                        const std::vector<double>& taus);

}  // namespace pmpstab
