#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace pmpstab {

using Vec = std::vector<double>;

/// Dense row-major matrix; sizes here are tiny (n <= a handful).
struct Matrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  Vec operator*(std::span<const double> v) const {
    Vec out(rows, 0.0);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) out[i] += (*this)(i, j) * v[j];
    return out;
  }

  /// Aᵀ v
  Vec transpose_times(std::span<const double> v) const {
    Vec out(cols, 0.0);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) out[j] += (*this)(i, j) * v[i];
    return out;
  }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

inline double det2(double a11, double a21, double a12, double a22) {
  // columns (a11, a21) and (a12, a22)
  return a11 * a22 - a12 * a21;
}

inline double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace pmpstab
