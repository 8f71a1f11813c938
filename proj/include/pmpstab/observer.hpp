#pragma once

// Output feedback for manipulators ẋ₁ = x₂, ẋ₂ = f(x₁, x₂) + u when only x₁
// is measured: the estimator, its gain inequalities and the coupled run.

#include <array>
#include <limits>
#include <vector>

#include "pmpstab/simulate.hpp"

namespace pmpstab {

struct ObserverGains {
  double beta1 = 0.0;
  double beta2 = 0.0;
  double delta = 0.0;  // Young-inequality parameter
  double L = 0.0;      // Lipschitz constant of f in x₂
  double M = std::numeric_limits<double>::quiet_NaN();  // Lipschitz constant of ∂W/∂x₂ in x₂
};

struct ErrorState {
  double e1 = 0.0;  // z₁ − x₁
  double e2 = 0.0;  // z₂ − x₂
};

/// Left-hand sides of −2β₂ + L/δ² < 0 and −2 + δ²L + (2/β₁ + β₁/β₂)L < 0.
/// Bounding the cross term 2(−e₁ + c·e₂)Δf with |Δf| <= L|e₂| gives 2cL·e₂²
/// rather than cL·e₂²; `second_full` is the second inequality with that term.
struct GainMargins {
  double first = 0.0;
  double second = 0.0;
  double second_full = 0.0;
};

GainMargins gain_margins(const ObserverGains& g);

/// Both inequalities hold with left-hand sides <= −margin (strictly < 0 for margin 0).
bool gains_feasible(const ObserverGains& g, double margin = 0.0);

/// Also requires `second_full` <= −margin, so that the error form decreases.
bool gains_certified(const ObserverGains& g, double margin = 0.0);

/// Deterministic schedule: δ² = min(0.25, 0.9/max(L, 1)), β₁ = 8·max(1, L),
/// β₂ doubled from 1 until gains_certified holds with the margin.
ObserverGains select_gains(double L, double margin = 0.1);

/// Throws ValidationError unless the system is single-input with ẋ₁ = x₂ and b = (0, 1).
void require_manipulator_form(const ControlSystem& sys);

/// ż for the estimator with measured x₁ and applied control u.
std::array<double, 2> estimator_step(const ControlSystem& sys, const ObserverGains& g,
                                     std::span<const double> z, double x1_meas, double u);

double error_lyapunov(const ObserverGains& g, ErrorState e);

/// dV/dt of the error form along the coupled dynamics at plant state x and estimate z.
double error_lyapunov_rate(const ControlSystem& sys, const ObserverGains& g,
                           std::span<const double> x, std::span<const double> z);

/// (−2β₂ + L/δ²)e₁² + (−2 + δ²L + 2(2/β₁ + β₁/β₂)L)e₂², an upper bound on
/// dV/dt whenever f is L-Lipschitz in x₂.
double error_lyapunov_rate_bound(const ObserverGains& g, ErrorState e);

/// The same with (2/β₁ + β₁/β₂)L in the e₂² coefficient. Valid when f does
/// not depend on x₂ (then it is looser than −2β₂e₁² − 2e₂²).
double error_lyapunov_rate_bound_stated(const ObserverGains& g, ErrorState e);

struct ObserverCertificate {
  double M = 0.0;        // estimated Lipschitz constant of ν₂ in x₂, with safety factor
  double M_raw = 0.0;    // largest sampled difference quotient
  double gamma = 0.0;    // −max of S = ν₁x₂ + ν₂(f + u) over samples outside {V <= ε}
  std::size_t samples = 0;
};

struct CertificateOptions {
  double dx2 = 0.02;        // difference-quotient step in x₂
  double safety = 1.25;     // multiplier applied to the sampled maximum
  std::size_t max_samples = 8000;  // manifold samples visited, evenly strided
};

ObserverCertificate certify_observer(const FeedbackLaw& law, const CertificateOptions& opt = {});

/// V(x) on {V <= ε}, the generating function W(x) outside; NaN when not covered.
double extended_W(const FeedbackLaw& law, std::span<const double> x);

struct ErrorSample {
  double t = 0.0;
  double e1 = 0.0, e2 = 0.0;
  double V_e = 0.0;
  double W = 0.0;
};

/// A sample where the law at (x₁, z₂) differs from the law at (x₁, x₂).
struct MismatchSample {
  double t = 0.0;
  double nu2 = 0.0;  // ∂W/∂x₂ at the true state
  double du = 0.0;   // u(x₁, z₂) − u(x₁, x₂)
  double e2 = 0.0;
  double bound = 0.0;  // 2M|e₂|
};

struct OutputFeedbackRun {
  ObserverGains gains;
  Trajectory plant;
  Trajectory estimator;  // x holds z, u is the applied control
  std::vector<ErrorSample> errors;
  std::vector<MismatchSample> mismatches;
  SimStatus status = SimStatus::TimeLimit;
  std::string message;
};

/// Co-integrates plant and estimator with u = law(x₁, z₂). `gains.M` is used
/// for the mismatch bound and estimated from the manifold when NaN.
OutputFeedbackRun simulate_output_feedback(const FeedbackLaw& law, const ObserverGains& gains,
                                           std::span<const double> x0,
                                           std::span<const double> z0,
                                           const SimulationOptions& opt = {});

}  // namespace pmpstab
