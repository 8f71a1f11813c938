#pragma once

// Systems shared by several test files.

#include <string>
#include <vector>

#include "pmpstab/system.hpp"

namespace pmpstab::testing {

inline std::vector<Expr> exprs(const std::vector<std::string>& src, std::size_t n,
                               std::size_t m = 0) {
  std::vector<Expr> out;
  for (const auto& s : src) out.push_back(Expr::parse(s, n, m));
  return out;
}

inline ControlSystem planar_affine(const std::string& f1, const std::string& f2,
                                   const std::string& b1 = "0", const std::string& b2 = "1",
                                   double k = 1.0) {
  return ControlSystem::affine(2, exprs({f1, f2}, 2), {exprs({b1, b2}, 2)},
                               ControlSet::box({{-k, k}}));
}

inline ControlSystem double_integrator(double k = 1.0) {
  return planar_affine("x2", "0", "0", "1", k);
}

inline ControlSystem pendulum() { return planar_affine("x2", "-sin(x1)"); }

inline LyapunovSpec unit_circle(double epsilon = 0.5, double half_width = 20.0) {
  return LyapunovSpec(Expr::parse("0.5*(x1^2+x2^2)", 2, 0), 2, epsilon,
                      {{-half_width, half_width}, {-half_width, half_width}});
}

}  // namespace pmpstab::testing
