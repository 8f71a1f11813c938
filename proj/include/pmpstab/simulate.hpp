#pragma once

// Filippov-sense simulation of closed loops with piecewise feedback.
//
// The law is described through a HybridModel: a discrete mode per region,
// a control that is smooth inside each mode, and a scalar surface function
// separating two modes. Integration freezes the mode, localizes mode changes
// by bisection on the dense output, and switches to the equivalent-control
// sliding field when both neighbouring fields point at the surface.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pmpstab/ode.hpp"
#include "pmpstab/synthesis.hpp"

namespace pmpstab {

enum class SimEventKind : std::int8_t {
  None = 0,
  BoundaryCross = 1,
  ControlSwitch = 2,
  SlidingEnter = 3,
  SlidingExit = 4,
};

const char* sim_event_name(SimEventKind k);

constexpr int kInnerMode = 0;

struct HybridModel {
  std::size_t dim = 0;  // length of the integrated state
  std::size_t m = 0;    // control dimension
  std::function<int(std::span<const double> y)> mode;
  std::function<Vec(int mode, std::span<const double> y)> control;
  std::function<void(std::span<const double> y, std::span<const double> u, std::span<double> dy)>
      field;
  /// Scalar whose zero set separates modes a and b near y.
  std::function<double(int a, int b, std::span<const double> y)> surface;
};

struct FilippovOptions {
  OdeOptions ode{1e-9, 1e-12, 1e-14, 0.05};
  double locate_tol = 1e-12;        // resolution of event times
  std::size_t checks_per_step = 4;  // interior mode checks per integrator step
  std::size_t chatter_limit = 50;   // mode changes per nominal step that force sliding
  double surface_fd = 1e-7;         // relative step for the surface gradient
};

struct StepOutcome {
  double t = 0.0;
  Vec y;
  Vec u;
  SimEventKind event = SimEventKind::None;
  bool sliding = false;
};

class FilippovStepper {
 public:
  FilippovStepper(HybridModel model, FilippovOptions opt, double t0, Vec y0);

  /// Advances by at most `h`, stopping early at the first event.
  StepOutcome step(double h);

  double t() const { return t_; }
  const Vec& y() const { return y_; }
  Vec u() const;
  int mode() const { return mode_; }
  bool sliding() const { return sliding_; }
  std::size_t forced_sliding() const { return forced_sliding_; }
  /// Sliding weight α(y) of the first mode; NaN outside sliding.
  double sliding_alpha(std::span<const double> y) const;
  /// σ̇ along the current sliding field (should vanish on the surface).
  double sliding_surface_rate() const;

 private:
  Vec surface_gradient(std::span<const double> y) const;
  double alpha_for(std::span<const double> normal, std::span<const double> y) const;
  void sliding_field(std::span<const double> y, std::span<double> dy,
                     std::span<const double> normal) const;
  SimEventKind begin_crossing(int from, int to, std::span<const double> va_point);
  StepOutcome smooth_step(double h);
  StepOutcome sliding_step(double h);
  SimEventKind classify(int a, int b) const;

  HybridModel model_;
  FilippovOptions opt_;
  double t_;
  Vec y_;
  int mode_;
  bool sliding_ = false;
  int slide_a_ = 0, slide_b_ = 0;
  double h_ode_ = 0.0;
  std::size_t forced_sliding_ = 0;
  bool forced_ = false;
  std::vector<double> recent_changes_;
};

struct SimulationOptions {
  double t_max = 100.0;
  double convergence_radius = 1e-2;
  double dwell_time = 1.0;
  double blowup_radius = 1e6;
  double sample_dt = 0.05;  // longest gap between stored samples
  FilippovOptions filippov{};
};

enum class SimStatus { Converged, TimeLimit, Diverged, NotCovered, Failed };
const char* sim_status_name(SimStatus s);

struct SimEvent {
  double t = 0.0;
  SimEventKind kind = SimEventKind::None;
};

struct Trajectory {
  std::size_t n = 0, m = 0;
  std::vector<double> t;
  std::vector<Vec> x;
  std::vector<Vec> u;
  std::vector<std::int8_t> flag;
  std::vector<SimEvent> events;

  SimStatus status = SimStatus::TimeLimit;
  std::string message;
  double t_converged = -1.0;        // start of the final dwell inside the convergence ball
  double max_abs_u = 0.0;
  bool u_in_omega = true;
  double max_inner_v_increase = 0.0;  // largest V increase over a step spent in the inner region
  bool left_inner_after_entry = false;
  std::size_t forced_sliding = 0;

  std::size_t size() const { return t.size(); }
};

struct ModelRunSpec {
  std::size_t plant_dim = 0;  // leading components of the state recorded as x
  const ControlSet* omega = nullptr;
  std::function<double(std::span<const double> x)> V;  // inner-region statistics
  double epsilon = 0.0;
};

using SampleHook =
    std::function<void(double t, const Vec& y, const Vec& u, SimEventKind event)>;

/// Integrates a hybrid model, sampling at most every opt.sample_dt and at
/// every event. Convergence and blow-up are judged on the plant components.
Trajectory simulate_model(const HybridModel& model, std::span<const double> y0,
                          const ModelRunSpec& spec, const SimulationOptions& opt,
                          const SampleHook& on_sample = {});

/// Closed loop ẋ = f(x, u(x)) with the composite law.
HybridModel closed_loop_model(const FeedbackLaw& law);

Trajectory simulate_closed_loop(const FeedbackLaw& law, std::span<const double> x0,
                                const SimulationOptions& opt = {});

/// Runs a batch of initial states concurrently; output order follows x0s.
std::vector<Trajectory> simulate_batch(const FeedbackLaw& law, const std::vector<Vec>& x0s,
                                       const SimulationOptions& opt = {}, unsigned threads = 0);

/// Single Filippov step of the closed loop from (t, x).
StepOutcome filippov_step(const FeedbackLaw& law, double t, std::span<const double> x, double h,
                          const FilippovOptions& opt = {});

struct StabilityCheck {
  double eps_s = 0.0;
  double delta_s = 0.0;
};

struct StabilizationVerdict {
  bool converged_all = true;
  bool stable_all = true;
  std::optional<std::size_t> convergence_witness;  // index of a trajectory that failed
  std::optional<std::size_t> stability_witness;
  std::size_t trajectories = 0;
  std::size_t stability_tested = 0;
};

StabilizationVerdict stabilization_verdict(const std::vector<Trajectory>& trajectories,
                                           const std::vector<StabilityCheck>& table);

}  // namespace pmpstab
