#pragma once

// Lagrangian manifold L_ε: the family of bicharacteristics of the reversed
// Pontryagin flow emitted from the seed manifold {ν = grad V(x), V(x) = ε}.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pmpstab/hamiltonian.hpp"
#include "pmpstab/ode.hpp"
#include "pmpstab/spatial_index.hpp"
#include "pmpstab/system.hpp"

namespace pmpstab {

struct ManifoldOptions {
  std::size_t seeds = 256;
  double tau_max = 10.0;
  double state_budget = 1e3;  // stop a branch once ‖x‖ exceeds this
  double sample_dtau = 0.01;  // forced sample spacing along a branch
  double event_tol = 1e-10;
  double transversality_tol = 1e-8;
  std::size_t max_switches = 64;
  OdeOptions ode{1e-10, 1e-12, 1e-14, 0.1};
  HamiltonianOptions hamiltonian{};
  /// Fixed coverage radius. When unset a sample covers the ball of radius
  /// `radius_factor` times its local mesh spacing.
  std::optional<double> query_radius;
  double radius_factor = 2.0;
  unsigned threads = 0;  // 0: PMP_STAB_THREADS or hardware concurrency
};

struct Seed {
  double psi = 0.0;
  Vec x0;
  Vec nu0;
};

enum class EventKind : std::uint8_t { Switch, TransversalityFailure, Budget };

const char* event_kind_name(EventKind k);

/// Sample flag values used in exports.
enum SampleFlag : std::int8_t {
  kSampleRegular = 0,
  kSampleSwitch = 1,
  kSampleTransversalityFailure = 2,
  kSampleBudget = 3,
};

class Bicharacteristic {
 public:
  struct Event {
    double tau = 0.0;
    Vec x;
    Vec nu;
    EventKind kind = EventKind::Switch;
    double bracket = 0.0;  // ⟨ν, ad_f b⟩ at the event (single-input affine), else NaN
  };

  struct State {
    Vec x;
    Vec nu;
    Vec u;
    double W = 0.0;
  };

  Seed seed;
  int direction = -1;
  std::vector<Event> events;
  std::optional<std::string> failure;  // set when integration aborted on an error

  std::size_t n() const { return n_; }
  std::size_t m() const { return m_; }
  std::size_t size() const { return tau_.size(); }
  double tau(std::size_t i) const { return tau_[i]; }
  std::span<const double> x(std::size_t i) const { return {x_.data() + i * n_, n_}; }
  std::span<const double> nu(std::size_t i) const { return {nu_.data() + i * n_, n_}; }
  std::span<const double> u(std::size_t i) const { return {u_.data() + i * m_, m_}; }
  double W(std::size_t i) const { return W_[i]; }
  double S(std::size_t i) const { return S_[i]; }
  std::int8_t flag(std::size_t i) const { return flag_[i]; }

  double tau_end() const { return tau_.empty() ? 0.0 : tau_.back(); }
  std::size_t switch_count() const;
  bool transversality_failed() const;

  /// Continuous state from the integrator's dense output.
  /// Throws std::out_of_range outside [0, tau_end()].
  State state_at(double tau) const;

 private:
  friend class BranchTracer;
  struct Segment {
    DenseStep step;
    double tau_lo = 0.0;
    double tau_hi = 0.0;
    Vec u;
  };

  void push_sample(double tau, std::span<const double> y, std::span<const double> u, double S,
                   std::int8_t flag);

  std::size_t n_ = 0, m_ = 0;
  std::vector<double> tau_, x_, nu_, u_, W_, S_;
  std::vector<std::int8_t> flag_;
  std::vector<Segment> segments_;
};

/// Seed on {V = ε} in direction angle psi (n = 2), or ±1 for n = 1 (psi 0 or π).
Seed seed_at(const LyapunovSpec& lyap, double psi);

/// N seeds with psi_k = 2πk/N (n = 2); the two points of {V = ε} for n = 1.
std::vector<Seed> seed_manifold(const LyapunovSpec& lyap, std::size_t N);

/// Traces the Pontryagin flow from (x0, ν0) with W(0) = W0.
/// direction = -1 is the reversed flow that builds L_ε; +1 runs it backwards.
Bicharacteristic trace_flow(const ControlSystem& sys, const Seed& start, double W0, double tau_max,
                            int direction, const ManifoldOptions& opt);

Bicharacteristic integrate_bicharacteristic(const ControlSystem& sys, const LyapunovSpec& lyap,
                                            const Seed& seed, const ManifoldOptions& opt);

struct SampleRef {
  std::uint32_t branch = 0;
  std::uint32_t index = 0;
};

struct ManifoldQuery {
  bool covered = false;
  Vec nu;
  double W = 0.0;
  Vec u;
  double distance = 0.0;
  SampleRef ref{};
  bool multivalued = false;  // a different sheet projects onto the same x
};

struct CostateEstimate {
  bool covered = false;
  Vec nu;
  double W = 0.0;
  SampleRef nearest{};
  bool multivalued = false;
};

enum class Illumination { Inner, Illuminated, Dark };
const char* illumination_name(Illumination i);

struct SwitchPoint {
  Vec x;
  Vec nu;
  std::size_t branch = 0;
  double psi = 0.0;
  double tau = 0.0;
  std::size_t ordinal = 0;  // 0 for the first switch on the branch
};

class LagrangianManifold {
 public:
  LagrangianManifold(const ControlSystem& sys, const LyapunovSpec& lyap, ManifoldOptions opt);

  const ControlSystem& system() const { return sys_; }
  const LyapunovSpec& lyapunov() const { return lyap_; }
  const ManifoldOptions& options() const { return opt_; }
  double epsilon() const { return lyap_.epsilon(); }
  const std::vector<Seed>& seeds() const { return seeds_; }
  const std::vector<Bicharacteristic>& branches() const { return branches_; }
  const std::vector<std::string>& failures() const { return failures_; }
  std::size_t sample_count() const { return refs_.size(); }
  const std::vector<SampleRef>& samples() const { return refs_; }
  const SpatialIndex& index() const { return index_; }

  /// Local mesh spacing at a sample (max of along-branch and nearest cross-branch gap).
  double spacing(SampleRef r) const { return spacing_[flat(r)]; }
  double coverage_radius(SampleRef r) const;

  ManifoldQuery query(std::span<const double> x) const;

  /// ν and W at x. Planar systems invert the ruled surface between the two
  /// neighbouring branches bracketing x; otherwise inverse-distance weights over nearby samples of the
  /// selected sheet.
  CostateEstimate interpolate(std::span<const double> x, std::size_t k = 6) const;

  /// det(∂x/∂ψ, ∂x/∂τ) on a branch (n = 2). ∂x/∂ψ by central differences
  /// across the neighbouring branches.
  double jacobian_along(std::size_t branch, double tau) const;

  std::vector<Illumination> illumination_check(const std::vector<Vec>& points) const;

  /// Switch events ordered by (ordinal, branch).
  std::vector<SwitchPoint> switching_curve() const;

  /// Splits switching_curve() into polylines of consecutive branches.
  std::vector<std::vector<SwitchPoint>> switching_polylines() const;

 private:
  std::size_t flat(SampleRef r) const { return offsets_[r.branch] + r.index; }
  void build_index();
  std::size_t branch_gap(std::size_t a, std::size_t b) const;
  bool invert_cell(std::size_t b, std::size_t c, std::span<const double> x, double tau0,
                   CostateEstimate& est) const;
  bool interpolate_planar(std::span<const double> x, const ManifoldQuery& q,
                          CostateEstimate& est) const;

  ControlSystem sys_;
  LyapunovSpec lyap_;
  ManifoldOptions opt_;
  std::vector<Seed> seeds_;
  std::vector<Bicharacteristic> branches_;
  std::vector<std::string> failures_;
  std::vector<SampleRef> refs_;
  std::vector<std::size_t> offsets_;
  std::vector<double> spacing_;
  double max_radius_ = 0.0;
  SpatialIndex index_;
};

/// Builds L_ε: seeds, branch integration (parallel, deterministic), spatial
/// index. Throws NumericalError if more than half of the branches fail.
LagrangianManifold build_manifold(const ControlSystem& sys, const LyapunovSpec& lyap,
                                  const ManifoldOptions& opt);

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// ∫ ν·dx along the curve psi ↦ x(psi, tau) for psi in [psi_a, psi_b], using
/// freshly traced branches at `pieces + 1` parameter values.
double transverse_action(const ControlSystem& sys, const LyapunovSpec& lyap, double psi_a,
                         double psi_b, double tau, std::size_t pieces,
                         const ManifoldOptions& opt);

}  // namespace pmpstab
