#include "pmpstab/ode.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace pmpstab {

namespace {

// Dormand–Prince 5(4) tableau and dense-output weights (Hairer, Nørsett, Wanner).
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784,
                 a76 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                 d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                 d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

}  // namespace

Vec DenseStep::at(double t) const {
  Vec out(dim_);
  for (std::size_t i = 0; i < dim_; ++i) out[i] = component_at(i, t);
  return out;
}

double DenseStep::component_at(std::size_t i, double t) const {
  const double th = h > 0.0 ? (t - t0) / h : 0.0;
  const double th1 = 1.0 - th;
  const double* c = coeff_.data();
  const std::size_t n = dim_;
  return c[i] +
         th * (c[n + i] + th1 * (c[2 * n + i] + th * (c[3 * n + i] + th1 * c[4 * n + i])));
}

Dopri5::Dopri5(std::size_t dim, Rhs rhs, OdeOptions opt)
    : dim_(dim), rhs_(std::move(rhs)), opt_(opt), tmp_(dim) {
  for (auto& k : k_) k.assign(dim, 0.0);
}

double Dopri5::initial_step(double t, std::span<const double> y) const {
  Vec f(dim_);
  rhs_(t, y, f);
  double d0 = 0.0, d1n = 0.0;
  for (std::size_t i = 0; i < dim_; ++i) {
    const double sc = opt_.atol + opt_.rtol * std::fabs(y[i]);
    d0 += (y[i] / sc) * (y[i] / sc);
    d1n += (f[i] / sc) * (f[i] / sc);
  }
  d0 = std::sqrt(d0 / double(dim_));
  d1n = std::sqrt(d1n / double(dim_));
  double h = (d0 < 1e-5 || d1n < 1e-5) ? 1e-6 : 0.01 * d0 / d1n;
  return std::clamp(h, opt_.h_min * 10.0, opt_.h_max);
}

DenseStep Dopri5::step(double t, std::span<const double> y, double& h, double t_limit) {
  const std::size_t n = dim_;
  auto& [k1, k2, k3, k4, k5, k6, k7] = k_;
  rhs_(t, y, k1);

  for (;;) {
    const double remaining = t_limit - t;
    bool clipped = false;
    if (h >= remaining) {
      h = remaining;
      clipped = true;
    }
    h = std::min(h, opt_.h_max);
    if (h < opt_.h_min && !clipped)
      throw StepUnderflowError("step size underflow at t = " + std::to_string(t));

    for (std::size_t i = 0; i < n; ++i) tmp_[i] = y[i] + h * a21 * k1[i];
    rhs_(t + c2 * h, tmp_, k2);
    for (std::size_t i = 0; i < n; ++i) tmp_[i] = y[i] + h * (a31 * k1[i] + a32 * k2[i]);
    rhs_(t + c3 * h, tmp_, k3);
    for (std::size_t i = 0; i < n; ++i)
      tmp_[i] = y[i] + h * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
    rhs_(t + c4 * h, tmp_, k4);
    for (std::size_t i = 0; i < n; ++i)
      tmp_[i] = y[i] + h * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
    rhs_(t + c5 * h, tmp_, k5);
    for (std::size_t i = 0; i < n; ++i)
      tmp_[i] =
          y[i] + h * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] + a65 * k5[i]);
    rhs_(t + h, tmp_, k6);
    Vec y1(n);
    for (std::size_t i = 0; i < n; ++i)
      y1[i] =
          y[i] + h * (a71 * k1[i] + a73 * k3[i] + a74 * k4[i] + a75 * k5[i] + a76 * k6[i]);
    rhs_(t + h, y1, k7);

    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] +
                            e7 * k7[i]);
      const double sc = opt_.atol + opt_.rtol * std::max(std::fabs(y[i]), std::fabs(y1[i]));
      err += (e / sc) * (e / sc);
    }
    err = std::sqrt(err / double(n));
    if (!std::isfinite(err)) err = 1e10;

    if (err <= 1.0) {
      DenseStep s;
      s.t0 = t;
      s.h = h;
      s.dim_ = n;
      s.coeff_.resize(5 * n);
      for (std::size_t i = 0; i < n; ++i) {
        const double ydiff = y1[i] - y[i];
        const double bspl = h * k1[i] - ydiff;
        s.coeff_[i] = y[i];
        s.coeff_[n + i] = ydiff;
        s.coeff_[2 * n + i] = bspl;
        s.coeff_[3 * n + i] = ydiff - h * k7[i] - bspl;
        s.coeff_[4 * n + i] =
            h * (d1 * k1[i] + d3 * k3[i] + d4 * k4[i] + d5 * k5[i] + d6 * k6[i] + d7 * k7[i]);
      }
      s.y1 = std::move(y1);
      const double fac = err == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0);
      const double accepted_h = h;
      h = std::min(accepted_h * fac, opt_.h_max);
      if (clipped && h < accepted_h) h = accepted_h;
      return s;
    }
    h *= std::clamp(0.9 * std::pow(err, -0.25), 0.1, 0.9);
    if (h < opt_.h_min) throw StepUnderflowError("step size underflow at t = " + std::to_string(t));
  }
}

}  // namespace pmpstab
