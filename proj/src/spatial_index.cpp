#include "pmpstab/spatial_index.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace pmpstab {

namespace {

double dist(std::span<const double> a, const double* b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

bool hit_less(const SpatialIndex::Hit& a, const SpatialIndex::Hit& b) {
  return a.second < b.second || (a.second == b.second && a.first < b.first);
}

}  // namespace

std::int64_t SpatialIndex::key(const std::int64_t* c) const {
  // 21 bits per axis, offset to keep values non-negative.
  std::int64_t k = 0;
  for (std::size_t d = 0; d < dim_; ++d) k = (k << 21) | ((c[d] + (1 << 20)) & 0x1FFFFF);
  return k;
}

void SpatialIndex::cell_of(std::span<const double> x, std::int64_t* c) const {
  for (std::size_t d = 0; d < dim_; ++d) {
    const double v = std::floor(x[d] / cell_);
    c[d] = static_cast<std::int64_t>(std::clamp(v, -1048000.0, 1048000.0));
  }
}

void SpatialIndex::build(std::size_t dim, std::vector<double> coords, double cell_size) {
  if (dim == 0 || dim > 3) throw std::invalid_argument("spatial index supports 1 to 3 dimensions");
  if (!(cell_size > 0.0)) throw std::invalid_argument("cell size must be positive");
  dim_ = dim;
  cell_ = cell_size;
  coords_ = std::move(coords);
  const std::size_t count = coords_.size() / dim_;
  std::vector<std::int64_t> keys(count);
  std::int64_t lo[3] = {0, 0, 0}, hi[3] = {0, 0, 0};
  for (std::size_t i = 0; i < count; ++i) {
    std::int64_t c[3];
    cell_of({coords_.data() + i * dim_, dim_}, c);
    for (std::size_t d = 0; d < dim_; ++d) {
      lo[d] = i == 0 ? c[d] : std::min(lo[d], c[d]);
      hi[d] = i == 0 ? c[d] : std::max(hi[d], c[d]);
    }
    keys[i] = key(c);
  }
  max_ring_ = 0;
  for (std::size_t d = 0; d < dim_; ++d) max_ring_ = std::max(max_ring_, hi[d] - lo[d] + 1);
  ids_.resize(count);
  std::iota(ids_.begin(), ids_.end(), 0u);
  std::stable_sort(ids_.begin(), ids_.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return keys[a] < keys[b]; });
  cells_.clear();
  for (std::size_t i = 0; i < count;) {
    std::size_t j = i;
    while (j < count && keys[ids_[j]] == keys[ids_[i]]) ++j;
    cells_[keys[ids_[i]]] = {static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j - i)};
    i = j;
  }
}

template <typename Visit>
void SpatialIndex::visit_ring(const std::int64_t* center, std::int64_t r, Visit&& visit) const {
  std::int64_t off[3] = {-r, -r, -r};
  for (;;) {
    std::int64_t cheb = 0;
    for (std::size_t d = 0; d < dim_; ++d) cheb = std::max(cheb, std::abs(off[d]));
    if (cheb == r) {
      std::int64_t c[3];
      for (std::size_t d = 0; d < dim_; ++d) c[d] = center[d] + off[d];
      auto it = cells_.find(key(c));
      if (it != cells_.end()) {
        const auto [start, len] = it->second;
        for (std::uint32_t i = start; i < start + len; ++i) visit(ids_[i]);
      }
    }
    std::size_t d = 0;
    while (d < dim_ && ++off[d] > r) off[d++] = -r;
    if (d == dim_) return;
  }
}

std::optional<SpatialIndex::Hit> SpatialIndex::nearest(std::span<const double> x,
                                                       double max_dist) const {
  auto hits = k_nearest(x, 1, max_dist);
  if (hits.empty()) return std::nullopt;
  return hits.front();
}

std::vector<SpatialIndex::Hit> SpatialIndex::k_nearest(std::span<const double> x, std::size_t k,
                                                       double max_dist) const {
  std::vector<Hit> best;
  if (size() == 0 || k == 0) return best;
  std::int64_t center[3];
  cell_of(x, center);
  const double ring_limit = std::isfinite(max_dist) ? std::ceil(max_dist / cell_) + 1.0
                                                    : std::numeric_limits<double>::infinity();
  // points outside the occupied bounding box need extra rings to reach it
  const std::int64_t far = max_ring_ + 2 + [&] {
    std::int64_t extra = 0;
    for (std::size_t d = 0; d < dim_; ++d) extra = std::max(extra, std::abs(center[d]));
    return extra;
  }();
  for (std::int64_t r = 0; r <= far && double(r) <= ring_limit; ++r) {
    visit_ring(center, r, [&](std::uint32_t id) {
      const double d = dist(x, coords_.data() + id * dim_);
      if (d > max_dist) return;
      Hit h{id, d};
      if (best.size() < k) {
        best.insert(std::upper_bound(best.begin(), best.end(), h, hit_less), h);
      } else if (hit_less(h, best.back())) {
        best.pop_back();
        best.insert(std::upper_bound(best.begin(), best.end(), h, hit_less), h);
      }
    });
    // any point in ring r+1 or beyond is at least r * cell away
    if (best.size() == k && best.back().second <= double(r) * cell_) break;
  }
  return best;
}

std::vector<SpatialIndex::Hit> SpatialIndex::within(std::span<const double> x,
                                                    double radius) const {
  std::vector<Hit> out;
  if (size() == 0) return out;
  std::int64_t center[3];
  cell_of(x, center);
  const auto rings = static_cast<std::int64_t>(std::ceil(radius / cell_)) + 1;
  for (std::int64_t r = 0; r <= rings; ++r)
    visit_ring(center, r, [&](std::uint32_t id) {
      const double d = dist(x, coords_.data() + id * dim_);
      if (d <= radius) out.emplace_back(id, d);
    });
  std::sort(out.begin(), out.end(), hit_less);
  return out;
}

}  // namespace pmpstab
