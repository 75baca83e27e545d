#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

namespace vg {

using Point3 = Eigen::Vector3d;
using Color = std::array<std::uint8_t, 3>;

struct PointCloud {
  std::vector<Point3> points;
  std::vector<Color> colors;  // empty, or parallel to points

  std::size_t size() const noexcept { return points.size(); }
  bool empty() const noexcept { return points.empty(); }
  bool has_colors() const noexcept { return !colors.empty(); }

  void append(const PointCloud& other) {
    const bool keep_colors = (empty() || has_colors()) && other.has_colors();
    if (!keep_colors) colors.clear();
    points.insert(points.end(), other.points.begin(), other.points.end());
    if (keep_colors) colors.insert(colors.end(), other.colors.begin(), other.colors.end());
  }

  // Keeps the points at the given (ascending) indices.
  PointCloud select(const std::vector<std::size_t>& idx) const {
    PointCloud out;
    out.points.reserve(idx.size());
    for (auto i : idx) out.points.push_back(points[i]);
    if (has_colors()) {
      out.colors.reserve(idx.size());
      for (auto i : idx) out.colors.push_back(colors[i]);
    }
    return out;
  }
};

// Axis-aligned box, serialized as [cx, cy, cz, dx, dy, dz].
struct Bbox3D {
  Point3 center = Point3::Zero();
  Eigen::Vector3d extent = Eigen::Vector3d::Zero();

  Point3 min() const { return center - extent / 2.0; }
  Point3 max() const { return center + extent / 2.0; }
  double volume() const { return extent.x() * extent.y() * extent.z(); }

  static Bbox3D from_min_max(const Point3& lo, const Point3& hi) {
    return {(lo + hi) / 2.0, hi - lo};
  }
  static Bbox3D from_array(const std::array<double, 6>& a) {
    return {{a[0], a[1], a[2]}, {a[3], a[4], a[5]}};
  }
  std::array<double, 6> to_array() const {
    return {center.x(), center.y(), center.z(), extent.x(), extent.y(), extent.z()};
  }

  bool contains(const Point3& p, double tol = 0.0) const {
    return ((p - min()).array() >= -tol).all() && ((max() - p).array() >= -tol).all();
  }

  friend bool operator==(const Bbox3D& a, const Bbox3D& b) {
    return a.center == b.center && a.extent == b.extent;
  }
};

// "[1.6515, 1.1065, 0.7770, 0.4687, 0.6466, 0.2580]"
inline std::string format_bbox(const Bbox3D& b, int precision = 4) {
  std::string out = "[";
  const auto a = b.to_array();
  char buf[64];
  for (std::size_t i = 0; i < a.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.*f", precision, a[i]);
    if (i) out += ", ";
    out += buf;
  }
  return out + "]";
}

}  // namespace vg
