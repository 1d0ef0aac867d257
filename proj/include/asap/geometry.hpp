#pragma once

// Deterministic point-cloud kernels. Ties always resolve to the lowest index.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

namespace asap::geometry {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  friend bool operator==(const Vec3&, const Vec3&) = default;
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
};

inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

/// One time step of a sequence: N points, N x C features (row-major), optional labels.
struct PointFrame {
  std::vector<Vec3> coords;
  std::vector<double> features;
  std::size_t feature_width = 0;
  std::vector<int> labels;  // empty when unlabeled
  std::size_t frame_index = 0;

  std::size_t size() const { return coords.size(); }
  bool has_labels() const { return !labels.empty(); }
  /// Throws std::invalid_argument if sizes disagree, coords are non-finite or
  /// a label falls outside [0, num_classes).
  void validate(std::size_t num_classes) const;
};

/// Index of the lexicographically smallest (x, y, z) point. Independent of
/// storage order, which makes it a permutation-invariant FPS seed.
std::size_t canonical_seed(std::span<const Vec3> coords);

/// Greedy farthest point sampling starting at `seed_index`.
std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> coords, std::size_t m,
                                               std::size_t seed_index = 0);

using CellKey = std::array<std::int64_t, 3>;

struct CellKeyHash {
  std::size_t operator()(const CellKey& k) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(k[0]) * 73856093ULL;
    h ^= static_cast<std::uint64_t>(k[1]) * 19349663ULL;
    h ^= static_cast<std::uint64_t>(k[2]) * 83492791ULL;
    return static_cast<std::size_t>(h);
  }
};

/// Uniform hash grid with cell edge == query radius.
class GridIndex {
 public:
  GridIndex(std::span<const Vec3> coords, double radius);

  double cell_size() const { return cell_size_; }
  std::size_t num_points() const { return num_points_; }
  CellKey cell_of(const Vec3& p) const;
  const std::vector<std::size_t>* cell(const CellKey& key) const;
  const std::unordered_map<CellKey, std::vector<std::size_t>, CellKeyHash>& cells() const {
    return cells_;
  }

 private:
  double cell_size_;
  std::size_t num_points_;
  std::unordered_map<CellKey, std::vector<std::size_t>, CellKeyHash> cells_;
};

inline GridIndex build_grid_index(std::span<const Vec3> coords, double radius) {
  return GridIndex(coords, radius);
}

struct NeighborEntry {
  std::vector<std::size_t> indices;  // ascending, at most k_cap
  std::size_t count = 0;             // min(matches, k_cap)
};

/// Points within `radius` of `query` (squared-distance test), ascending by
/// index and truncated to the first `k_cap`.
NeighborEntry radius_neighbors(const GridIndex& index, std::span<const Vec3> coords,
                               const Vec3& query, double radius, std::size_t k_cap);

/// Neighborhoods for many queries in CSR form: query q owns
/// indices[offsets[q] .. offsets[q+1]).
struct NeighborList {
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> indices;

  std::size_t num_queries() const { return offsets.size() - 1; }
  std::size_t count(std::size_t q) const { return offsets[q + 1] - offsets[q]; }
  std::span<const std::size_t> neighbors(std::size_t q) const {
    return {indices.data() + offsets[q], count(q)};
  }
};

NeighborList radius_neighbors_batch(const GridIndex& index, std::span<const Vec3> coords,
                                    std::span<const Vec3> queries, double radius,
                                    std::size_t k_cap);

struct Neighbor {
  std::size_t index;
  double distance;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// The k nearest points to `query`, ascending by distance then index.
std::vector<Neighbor> knn(std::span<const Vec3> coords, const Vec3& query, std::size_t k);

/// For each current center, the index of the nearest previous center.
std::vector<std::size_t> nearest_center_match(std::span<const Vec3> prev_centers,
                                              std::span<const Vec3> cur_centers);

}  // namespace asap::geometry
