#pragma once

// Point-cloud processing: centroid, statistical outlier removal, DBSCAN,
// largest-cluster extraction and axis-aligned box estimation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "vg/cloud.hpp"
#include "vg/error.hpp"
#include "vg/kdtree.hpp"

namespace vg {

struct SorConfig {
  int k = 20;
  double std_ratio = 2.0;
};

struct DbscanConfig {
  double eps = 0.10;
  int min_pts = 10;
  // Voxel-grid downsampling before clustering; 0 disables.
  double voxel = 0.0;
  std::size_t voxel_above = 200000;
};

// Parallel to the cloud's points; -1 is noise, clusters are numbered from 0.
using ClusterLabels = std::vector<int>;

inline Point3 centroid(const PointCloud& pcd) {
  if (pcd.empty()) throw Error(Errc::EmptyCloud, "centroid of an empty cloud");
  Point3 sum = Point3::Zero();
  for (const auto& p : pcd.points) sum += p;
  return sum / static_cast<double>(pcd.size());
}

// Per-point mean distance to its k nearest neighbours, the point itself
// counted as its own nearest neighbour at distance 0.
inline std::vector<double> mean_knn_distances(const PointCloud& pcd, int k) {
  KdTree tree(pcd.points);
  std::vector<double> out(pcd.size());
  for (std::size_t i = 0; i < pcd.size(); ++i) {
    const auto d2 = tree.knn_sq_dists(pcd.points[i], static_cast<std::size_t>(k));
    double s = 0;
    for (double d : d2) s += std::sqrt(d);
    out[i] = s / k;
  }
  return out;
}

// Keeps point i iff its mean kNN distance is <= mu + std_ratio * sigma, with
// mu and sigma (sample deviation) taken over all points. Order is preserved.
inline PointCloud statistical_outlier_removal(const PointCloud& pcd, int k, double std_ratio) {
  if (k < 1 || !(std_ratio > 0))
    throw Error(Errc::InvalidConfig, "SOR needs k >= 1 and std_ratio > 0");
  if (pcd.size() <= static_cast<std::size_t>(k))
    throw Error(Errc::TooFewPoints, std::to_string(pcd.size()) + " points for k=" +
                                        std::to_string(k));
  const auto md = mean_knn_distances(pcd, k);
  const double n = static_cast<double>(md.size());
  double mu = 0;
  for (double d : md) mu += d;
  mu /= n;
  double var = 0;
  for (double d : md) var += (d - mu) * (d - mu);
  const double sigma = std::sqrt(var / (n - 1));
  const double limit = mu + std_ratio * sigma;
  std::vector<std::size_t> keep;
  keep.reserve(md.size());
  for (std::size_t i = 0; i < md.size(); ++i)
    if (md[i] <= limit) keep.push_back(i);
  return pcd.select(keep);
}

inline PointCloud statistical_outlier_removal(const PointCloud& pcd, const SorConfig& cfg) {
  return statistical_outlier_removal(pcd, cfg.k, cfg.std_ratio);
}

// Density-based clustering. A core point has at least min_pts points (itself
// included) within eps. Clusters are numbered by their lowest-index core
// point; a border point reachable from several clusters joins the one with
// the smallest label, which is what index-order sequential DBSCAN produces.
inline ClusterLabels dbscan(const PointCloud& pcd, double eps, int min_pts) {
  if (!(eps > 0) || min_pts < 1) throw Error(Errc::InvalidConfig, "dbscan needs eps > 0, min_pts >= 1");
  const std::size_t n = pcd.size();
  ClusterLabels labels(n, -1);
  if (n == 0) return labels;
  const auto& pts = pcd.points;
  const double r2 = eps * eps;
  auto within = [&](std::uint32_t a, std::uint32_t b) { return (pts[a] - pts[b]).squaredNorm() <= r2; };

  // Grid of side just over eps/2: points sharing a cell are always within
  // eps of each other, and eps-neighbours are at most two cells apart.
  using Key = std::array<long, 3>;
  struct KeyHash {
    std::size_t operator()(const Key& k) const noexcept {
      return static_cast<std::size_t>(k[0] * 73856093L ^ k[1] * 19349663L ^ k[2] * 83492791L);
    }
  };
  const double side = eps * 0.5 * (1.0 + 1e-9);
  auto key_of = [&](const Point3& p) {
    return Key{static_cast<long>(std::floor(p.x() / side)), static_cast<long>(std::floor(p.y() / side)),
               static_cast<long>(std::floor(p.z() / side))};
  };
  std::unordered_map<Key, std::uint32_t, KeyHash> cell_index;
  std::vector<Key> keys;
  std::vector<std::vector<std::uint32_t>> members;
  std::vector<std::uint32_t> cell_of(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Key k = key_of(pts[i]);
    auto [it, inserted] = cell_index.try_emplace(k, static_cast<std::uint32_t>(keys.size()));
    if (inserted) {
      keys.push_back(k);
      members.emplace_back();
    }
    members[it->second].push_back(static_cast<std::uint32_t>(i));
    cell_of[i] = it->second;
  }
  const std::size_t cells = keys.size();
  std::vector<std::vector<std::uint32_t>> near(cells);  // excludes the cell itself
  for (std::size_t c = 0; c < cells; ++c)
    for (long dx = -2; dx <= 2; ++dx)
      for (long dy = -2; dy <= 2; ++dy)
        for (long dz = -2; dz <= 2; ++dz) {
          if (!dx && !dy && !dz) continue;
          auto it = cell_index.find({keys[c][0] + dx, keys[c][1] + dy, keys[c][2] + dz});
          if (it != cell_index.end()) near[c].push_back(it->second);
        }

  const auto need = static_cast<std::size_t>(min_pts);
  std::vector<char> core(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = cell_of[i];
    std::size_t count = members[c].size();
    for (auto it = near[c].begin(); it != near[c].end() && count < need; ++it)
      for (auto j : members[*it])
        if (within(static_cast<std::uint32_t>(i), j) && ++count >= need) break;
    core[i] = count >= need;
  }

  std::vector<std::vector<std::uint32_t>> core_members(cells);
  for (std::size_t i = 0; i < n; ++i)
    if (core[i]) core_members[cell_of[i]].push_back(static_cast<std::uint32_t>(i));

  std::vector<std::uint32_t> parent(cells);
  for (std::size_t c = 0; c < cells; ++c) parent[c] = static_cast<std::uint32_t>(c);
  auto find = [&](std::uint32_t c) {
    while (parent[c] != c) c = parent[c] = parent[parent[c]];
    return c;
  };
  for (std::uint32_t a = 0; a < cells; ++a) {
    if (core_members[a].empty()) continue;
    for (auto b : near[a]) {
      if (b < a || core_members[b].empty() || find(a) == find(b)) continue;
      bool linked = false;
      for (auto i : core_members[a]) {
        for (auto j : core_members[b])
          if ((linked = within(i, j))) break;
        if (linked) break;
      }
      if (linked) parent[find(a)] = find(b);
    }
  }

  // Number clusters by their lowest core index.
  std::vector<std::int64_t> first_core(cells, -1);
  for (std::size_t i = 0; i < n; ++i)
    if (core[i]) {
      auto& f = first_core[find(cell_of[i])];
      if (f < 0) f = static_cast<std::int64_t>(i);
    }
  std::vector<std::pair<std::int64_t, std::uint32_t>> roots;
  for (std::uint32_t c = 0; c < cells; ++c)
    if (first_core[c] >= 0) roots.push_back({first_core[c], c});
  std::sort(roots.begin(), roots.end());
  std::vector<int> cluster_of_root(cells, -1);
  for (std::size_t r = 0; r < roots.size(); ++r) cluster_of_root[roots[r].second] = static_cast<int>(r);
  std::vector<int> cell_cluster(cells, -1);
  for (std::uint32_t c = 0; c < cells; ++c)
    if (!core_members[c].empty()) cell_cluster[c] = cluster_of_root[find(c)];

  for (std::size_t i = 0; i < n; ++i) {
    const auto c = cell_of[i];
    if (core[i]) {
      labels[i] = cell_cluster[c];
      continue;
    }
    int best = core_members[c].empty() ? -1 : cell_cluster[c];
    for (auto b : near[c]) {
      const int id = cell_cluster[b];
      if (id < 0 || (best >= 0 && id >= best)) continue;
      for (auto j : core_members[b])
        if (within(static_cast<std::uint32_t>(i), j)) {
          best = id;
          break;
        }
    }
    labels[i] = best;
  }
  return labels;
}

inline ClusterLabels dbscan(const PointCloud& pcd, const DbscanConfig& cfg) {
  return dbscan(pcd, cfg.eps, cfg.min_pts);
}

// Most populous non-noise cluster; ties go to the smallest label.
inline PointCloud largest_cluster(const PointCloud& pcd, const ClusterLabels& labels) {
  if (labels.size() != pcd.size())
    throw Error(Errc::InvalidConfig, "labels are not parallel to the cloud");
  std::map<int, std::size_t> sizes;
  for (int l : labels)
    if (l >= 0) ++sizes[l];
  if (sizes.empty()) throw Error(Errc::NoCluster, "every point is noise");
  int best = sizes.begin()->first;
  for (const auto& [l, c] : sizes)
    if (c > sizes[best]) best = l;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == best) idx.push_back(i);
  return pcd.select(idx);
}

inline Bbox3D axis_aligned_bbox(const PointCloud& pcd) {
  if (pcd.empty()) throw Error(Errc::EmptyCloud, "bounding box of an empty cloud");
  Point3 lo = pcd.points.front(), hi = lo;
  for (const auto& p : pcd.points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return Bbox3D::from_min_max(lo, hi);
}

// Averages the points falling in each voxel; voxels are emitted in order of
// their first point.
inline PointCloud voxel_downsample(const PointCloud& pcd, double voxel) {
  if (!(voxel > 0)) return pcd;
  struct Acc {
    Point3 sum = Point3::Zero();
    Eigen::Vector3d rgb = Eigen::Vector3d::Zero();
    std::size_t n = 0;
    std::size_t first = 0;
  };
  std::map<std::tuple<long, long, long>, Acc> cells;
  for (std::size_t i = 0; i < pcd.size(); ++i) {
    const auto& p = pcd.points[i];
    const std::tuple<long, long, long> key{static_cast<long>(std::floor(p.x() / voxel)),
                                           static_cast<long>(std::floor(p.y() / voxel)),
                                           static_cast<long>(std::floor(p.z() / voxel))};
    auto [it, inserted] = cells.try_emplace(key);
    if (inserted) it->second.first = i;
    it->second.sum += p;
    if (pcd.has_colors())
      it->second.rgb += Eigen::Vector3d(pcd.colors[i][0], pcd.colors[i][1], pcd.colors[i][2]);
    ++it->second.n;
  }
  std::vector<const Acc*> ordered;
  ordered.reserve(cells.size());
  for (const auto& [key, acc] : cells) ordered.push_back(&acc);
  std::sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->first < b->first; });
  PointCloud out;
  for (const Acc* a : ordered) {
    out.points.push_back(a->sum / static_cast<double>(a->n));
    if (pcd.has_colors()) {
      const Eigen::Vector3d c = a->rgb / static_cast<double>(a->n);
      out.colors.push_back({static_cast<std::uint8_t>(std::lround(c[0])),
                            static_cast<std::uint8_t>(std::lround(c[1])),
                            static_cast<std::uint8_t>(std::lround(c[2]))});
    }
  }
  return out;
}

// SOR -> (optional voxel grid) -> DBSCAN -> largest cluster.
inline PointCloud clean_cloud(const PointCloud& raw, const SorConfig& sor, const DbscanConfig& db) {
  PointCloud filtered = raw.size() > static_cast<std::size_t>(sor.k)
                            ? statistical_outlier_removal(raw, sor)
                            : raw;
  if (db.voxel > 0 && filtered.size() > db.voxel_above)
    filtered = voxel_downsample(filtered, db.voxel);
  return largest_cluster(filtered, dbscan(filtered, db));
}

}  // namespace vg
