#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

namespace pmpstab {

/// Uniform-grid bucket index over points in R^n (n <= 3), hashed by cell.
class SpatialIndex {
 public:
  using Hit = std::pair<std::uint32_t, double>;  // point id, distance

  SpatialIndex() = default;

  /// `coords` holds dim * count values, point i at [i*dim, (i+1)*dim).
  void build(std::size_t dim, std::vector<double> coords, double cell_size);

  std::size_t size() const { return dim_ == 0 ? 0 : coords_.size() / dim_; }
  std::size_t dim() const { return dim_; }
  double cell_size() const { return cell_; }
  std::span<const double> point(std::uint32_t id) const { return {coords_.data() + id * dim_, dim_}; }

  /// Nearest point within max_dist, if any.
  std::optional<Hit> nearest(std::span<const double> x, double max_dist) const;

  /// Up to k nearest points within max_dist, sorted by distance (ties by id).
  std::vector<Hit> k_nearest(std::span<const double> x, std::size_t k, double max_dist) const;

  /// All points within radius, sorted by distance (ties by id).
  std::vector<Hit> within(std::span<const double> x, double radius) const;

 private:
  std::int64_t key(const std::int64_t* c) const;
  void cell_of(std::span<const double> x, std::int64_t* c) const;
  template <typename Visit>
  void visit_ring(const std::int64_t* center, std::int64_t r, Visit&& visit) const;

  std::size_t dim_ = 0;
  double cell_ = 1.0;
  std::vector<double> coords_;
  std::vector<std::uint32_t> ids_;  // sorted by cell
  std::unordered_map<std::int64_t, std::pair<std::uint32_t, std::uint32_t>> cells_;
  std::int64_t max_ring_ = 0;
};

}  // namespace pmpstab
