#pragma once

#include <utility>
#include <vector>

#include "pmpstab/system.hpp"

namespace pmpstab {

/// Visits every node of a tensor grid over `box` with `per_axis` points per axis.
template <typename F>
void for_each_grid_point(const Box& box, std::size_t per_axis, F&& visit) {
  const std::size_t n = box.size();
  std::vector<std::size_t> idx(n, 0);
  Vec x(n);
  for (;;) {
    for (std::size_t k = 0; k < n; ++k) {
      const double s = per_axis > 1 ? double(idx[k]) / double(per_axis - 1) : 0.5;
      x[k] = box[k].first + s * (box[k].second - box[k].first);
    }
    visit(std::as_const(x));
    std::size_t k = 0;
    while (k < n && ++idx[k] == per_axis) idx[k++] = 0;
    if (k == n) return;
  }
}

inline std::vector<Vec> grid_points(const Box& box, std::size_t per_axis) {
  std::vector<Vec> out;
  for_each_grid_point(box, per_axis, [&](const Vec& x) { out.push_back(x); });
  return out;
}

}  // namespace pmpstab
