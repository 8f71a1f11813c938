#pragma once

#include <functional>
#include <span>
#include <stdexcept>

#include "pmpstab/linalg.hpp"

namespace pmpstab {

class StepUnderflowError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One accepted Dormand–Prince 5(4) step together with its 4th-order
/// continuous extension on [t0, t0 + h].
class DenseStep {
 public:
  double t0 = 0.0;
  double h = 0.0;
  Vec y1;

  double t1() const { return t0 + h; }
  Vec at(double t) const;
  double component_at(std::size_t i, double t) const;

 private:
  friend class Dopri5;
  std::size_t dim_ = 0;
  Vec coeff_;  // 5 * dim
};

struct OdeOptions {
  double rtol = 1e-10;
  double atol = 1e-12;
  double h_min = 1e-14;
  double h_max = 0.1;
};

class Dopri5 {
 public:
  using Rhs = std::function<void(double t, std::span<const double> y, std::span<double> dy)>;

  Dopri5(std::size_t dim, Rhs rhs, OdeOptions opt = {});

  /// Advances from (t, y). `h` is the trial step on input and the proposed
  /// next step on output. The step never exceeds `t_limit - t`.
  DenseStep step(double t, std::span<const double> y, double& h, double t_limit);

  const OdeOptions& options() const { return opt_; }

  /// Initial step guess from the local derivative scale.
  double initial_step(double t, std::span<const double> y) const;

 private:
  std::size_t dim_;
  Rhs rhs_;
  OdeOptions opt_;
  // stage scratch
  Vec k_[7];
  Vec tmp_;
};

}  // namespace pmpstab
