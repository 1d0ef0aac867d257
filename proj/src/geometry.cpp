#include "asap/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <tuple>

namespace asap::geometry {

void PointFrame::validate(std::size_t num_classes) const {
  if (coords.empty()) throw std::invalid_argument("frame has no points");
  if (features.size() != coords.size() * feature_width) {
    throw std::invalid_argument("frame feature block does not match N x C");
  }
  for (const Vec3& p : coords) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) {
      throw std::invalid_argument("frame has non-finite coordinates");
    }
  }
  if (has_labels()) {
    if (labels.size() != coords.size()) throw std::invalid_argument("frame label count != N");
    for (int y : labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
        throw std::invalid_argument("label " + std::to_string(y) + " outside class vocabulary");
      }
    }
  }
}

std::size_t canonical_seed(std::span<const Vec3> coords) {
  if (coords.empty()) throw std::invalid_argument("canonical_seed: empty point set");
  std::size_t best = 0;
  for (std::size_t i = 1; i < coords.size(); ++i) {
    const Vec3& a = coords[i];
    const Vec3& b = coords[best];
    if (std::tie(a.x, a.y, a.z) < std::tie(b.x, b.y, b.z)) best = i;
  }
  return best;
}

std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> coords, std::size_t m,
                                               std::size_t seed_index) {
  const std::size_t n = coords.size();
  if (m == 0 || m > n) {
    throw std::invalid_argument("farthest_point_sample: need 1 <= m <= N, got m=" +
                                std::to_string(m) + " N=" + std::to_string(n));
  }
  if (seed_index >= n) throw std::out_of_range("farthest_point_sample: seed index out of range");

  std::vector<std::size_t> picked;
  picked.reserve(m);
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  std::vector<char> taken(n, 0);
  std::size_t last = seed_index;
  picked.push_back(last);
  taken[last] = 1;
  while (picked.size() < m) {
    std::size_t best = n;
    double best_d2 = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      const double d2 = squared_distance(coords[i], coords[last]);
      if (d2 < min_d2[i]) min_d2[i] = d2;
      if (min_d2[i] > best_d2) {
        best_d2 = min_d2[i];
        best = i;
      }
    }
    last = best;
    taken[last] = 1;
    picked.push_back(last);
  }
  return picked;
}

GridIndex::GridIndex(std::span<const Vec3> coords, double radius)
    : cell_size_(radius), num_points_(coords.size()) {
  if (!(radius > 0.0) || !std::isfinite(radius)) {
    throw std::invalid_argument("build_grid_index: radius must be positive, got " +
                                std::to_string(radius));
  }
  for (std::size_t i = 0; i < coords.size(); ++i) cells_[cell_of(coords[i])].push_back(i);
}

CellKey GridIndex::cell_of(const Vec3& p) const {
  return {static_cast<std::int64_t>(std::floor(p.x / cell_size_)),
          static_cast<std::int64_t>(std::floor(p.y / cell_size_)),
          static_cast<std::int64_t>(std::floor(p.z / cell_size_))};
}

const std::vector<std::size_t>* GridIndex::cell(const CellKey& key) const {
  auto it = cells_.find(key);
  return it == cells_.end() ? nullptr : &it->second;
}

namespace {

void collect_neighbors(const GridIndex& index, std::span<const Vec3> coords, const Vec3& query,
                       double radius, std::size_t k_cap, std::vector<std::size_t>& out) {
  if (radius != index.cell_size()) {
    throw std::invalid_argument("radius_neighbors: radius " + std::to_string(radius) +
                                " differs from grid cell size " +
                                std::to_string(index.cell_size()));
  }
  if (k_cap == 0) throw std::invalid_argument("radius_neighbors: k_cap must be >= 1");
  const double r2 = radius * radius;
  const CellKey c = index.cell_of(query);
  const std::size_t start = out.size();
  for (std::int64_t dx = -1; dx <= 1; ++dx)
    for (std::int64_t dy = -1; dy <= 1; ++dy)
      for (std::int64_t dz = -1; dz <= 1; ++dz) {
        const auto* bucket = index.cell({c[0] + dx, c[1] + dy, c[2] + dz});
        if (bucket == nullptr) continue;
        for (std::size_t i : *bucket) {
          if (squared_distance(coords[i], query) <= r2) out.push_back(i);
        }
      }
  std::sort(out.begin() + static_cast<std::ptrdiff_t>(start), out.end());
  if (out.size() - start > k_cap) out.resize(start + k_cap);
}

}  // namespace

NeighborEntry radius_neighbors(const GridIndex& index, std::span<const Vec3> coords,
                               const Vec3& query, double radius, std::size_t k_cap) {
  NeighborEntry e;
  collect_neighbors(index, coords, query, radius, k_cap, e.indices);
  e.count = e.indices.size();
  return e;
}

NeighborList radius_neighbors_batch(const GridIndex& index, std::span<const Vec3> coords,
                                    std::span<const Vec3> queries, double radius,
                                    std::size_t k_cap) {
  NeighborList list;
  list.offsets.reserve(queries.size() + 1);
  list.offsets.push_back(0);
  for (const Vec3& q : queries) {
    collect_neighbors(index, coords, q, radius, k_cap, list.indices);
    list.offsets.push_back(list.indices.size());
  }
  return list;
}

std::vector<Neighbor> knn(std::span<const Vec3> coords, const Vec3& query, std::size_t k) {
  if (k == 0 || k > coords.size()) {
    throw std::invalid_argument("knn: need 1 <= k <= N, got k=" + std::to_string(k) +
                                " N=" + std::to_string(coords.size()));
  }
  std::vector<std::pair<double, std::size_t>> d(coords.size());
  for (std::size_t i = 0; i < coords.size(); ++i) d[i] = {squared_distance(coords[i], query), i};
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
  std::vector<Neighbor> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = {d[i].second, std::sqrt(d[i].first)};
  return out;
}

std::vector<std::size_t> nearest_center_match(std::span<const Vec3> prev_centers,
                                              std::span<const Vec3> cur_centers) {
  if (prev_centers.empty() || cur_centers.empty()) {
    throw std::invalid_argument("nearest_center_match: empty center set");
  }
  std::vector<std::size_t> match(cur_centers.size());
  for (std::size_t j = 0; j < cur_centers.size(); ++j) {
    std::size_t best = 0;
    double best_d2 = squared_distance(cur_centers[j], prev_centers[0]);
    for (std::size_t i = 1; i < prev_centers.size(); ++i) {
      const double d2 = squared_distance(cur_centers[j], prev_centers[i]);
      if (d2 < best_d2) {
        best_d2 = d2;
        best = i;
      }
    }
    match[j] = best;
  }
  return match;
}

}  // namespace asap::geometry
