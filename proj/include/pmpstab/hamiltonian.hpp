#pragma once

#include "pmpstab/system.hpp"

namespace pmpstab {

/// Tolerances for classifying the minimizer of S = ⟨ν, f⟩.
struct HamiltonianOptions {
  double switch_tol = 1e-10;   // |⟨ν, b_j⟩| at or below this is degenerate
  std::size_t grid_res = 101;  // points per axis for the non-affine box fallback
};

struct MinimizerResult {
  Vec u_star;
  double s_value = 0.0;
  bool degenerate = false;
};

/// u* = argmin over Ω of ⟨ν, f(t, x, u)⟩.
///
/// Affine + box: bang-bang per channel (lo where ⟨ν,b_j⟩ > 0, hi where < 0,
/// midpoint when degenerate). Finite Ω: exhaustive search, first index wins
/// ties. General f + box: grid search over Ω, which is approximate.
MinimizerResult minimize_hamiltonian(const ControlSystem& sys, double t,
                                     std::span<const double> x, std::span<const double> nu,
                                     const HamiltonianOptions& opt = {});

double hamiltonian_value(const ControlSystem& sys, double t, std::span<const double> x,
                         std::span<const double> nu, const HamiltonianOptions& opt = {});

/// Switching functions σ_j = ⟨ν, b_j(x)⟩ of an affine system.
Vec switching_functions(const ControlSystem& sys, std::span<const double> x,
                        std::span<const double> nu);

/// Right-hand side of the Pontryagin flow with the control frozen at `u`.
///   direction = +1:  ẋ =  ∂S/∂ν,  ν̇ = −∂S/∂x
///   direction = -1:  ẋ = −∂S/∂ν,  ν̇ = +∂S/∂x   (the flow that emits L_ε)
struct PhaseVelocity {
  Vec dx;
  Vec dnu;
};
PhaseVelocity pontryagin_rhs(const ControlSystem& sys, double t, std::span<const double> x,
                             std::span<const double> nu, std::span<const double> u,
                             int direction);

struct FlowEvaluation {
  PhaseVelocity velocity;
  MinimizerResult minimizer;
};

/// Reversed flow with u at the current minimizer. A degenerate minimizer is
/// reported through `minimizer.degenerate`; integrators treat it as an event.
FlowEvaluation reversed_rhs(const ControlSystem& sys, std::span<const double> x,
                            std::span<const double> nu, const HamiltonianOptions& opt = {});

FlowEvaluation forward_rhs(const ControlSystem& sys, double t, std::span<const double> x,
                           std::span<const double> nu, const HamiltonianOptions& opt = {});

}  // namespace pmpstab
