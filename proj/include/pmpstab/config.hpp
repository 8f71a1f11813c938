#pragma once

// JSON run configuration. Every block is optional except `system`,
// `lyapunov` and `inner`; missing fields take the library defaults and
// unknown keys are rejected.

#include <optional>
#include <string>
#include <vector>

#include "pmpstab/manifold.hpp"
#include "pmpstab/observer.hpp"
#include "pmpstab/simulate.hpp"
#include "pmpstab/synthesis.hpp"

namespace pmpstab {

/// Parse errors carry the byte offset; validation errors name the field.
class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

struct SystemConfig {
  std::string type = "affine";  // affine | general
  std::size_t n = 0, m = 1;
  std::vector<std::string> drift;                 // affine
  std::vector<std::vector<std::string>> columns;  // affine, columns[j][i]
  std::vector<std::string> f;                     // general
};

struct ControlConfig {
  std::string type = "box";  // box | finite
  std::vector<Interval> bounds;  // box; defaults to [−k, k]^m
  std::vector<Vec> points;       // finite
  double k = 1.0;                // outer amplitude
  double C = 1.0;                // required bound on |u|
};

struct LyapunovConfig {
  std::string V;
  double epsilon = 0.5;
  Box box;  // positivity check box; defaults to [−20, 20]^n
  std::size_t check_grid = 21;
};

struct GridConfig {
  Box box;  // defaults to [−5, 5]^n
  std::size_t per_axis = 21;
};

struct ObserverConfig {
  double L = 1.0;
  double margin = 0.1;
  std::optional<double> beta1, beta2, delta, M;
  Vec x0{2.0, 0.0};
  Vec z0{2.0, 1.0};
  double t_max = 100.0;
  double dwell_time = 10.0;
};

struct RunConfig {
  SystemConfig system;
  ControlConfig control;
  LyapunovConfig lyapunov;
  std::vector<std::string> inner;
  ManifoldOptions manifold;
  FeedbackOptions feedback;
  SimulationOptions simulation;
  GridConfig grid;
  ObserverConfig observer;

  /// The bound |u| <= C is checked on the grid when Ω is a box.
  bool bound_check_armed() const { return control.type == "box"; }
};

RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);

/// The fully resolved configuration as pretty-printed JSON.
std::string echo_config(const RunConfig& cfg);

ControlSet build_control_set(const RunConfig& cfg);
ControlSystem build_system(const RunConfig& cfg);
LyapunovSpec build_lyapunov(const RunConfig& cfg);
std::vector<Expr> build_inner(const RunConfig& cfg);

/// Gains from the observer block: explicit β₁, β₂ (both or neither), δ
/// defaulting to the schedule of select_gains.
ObserverGains build_gains(const RunConfig& cfg);

}  // namespace pmpstab
