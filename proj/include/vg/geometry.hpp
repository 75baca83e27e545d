#pragma once

// Pinhole camera math: unprojection, rigid frame transforms, reprojection
// and the depth-buffer visibility predicate used by multi-view expansion.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <string>
#include <string_view>

#include "vg/cloud.hpp"
#include "vg/error.hpp"
#include "vg/grid.hpp"

namespace vg {

using Point3 = Eigen::Vector3d;

struct Intrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  bool valid() const noexcept {
    return fx > 0 && fy > 0 && width > 0 && height > 0 && cx >= 0 && cx < width && cy >= 0 &&
           cy < height;
  }

  Eigen::Matrix3d matrix() const {
    Eigen::Matrix3d k;
    k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
    return k;
  }

  friend bool operator==(const Intrinsics&, const Intrinsics&) = default;
};

// Rigid camera-to-world transform.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static Pose identity() { return {}; }

  static Pose from_matrix(const Eigen::Matrix4d& m) {
    Pose p;
    p.rotation = m.topLeftCorner<3, 3>();
    p.translation = m.topRightCorner<3, 1>();
    return p;
  }

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }

  Pose inverse() const {
    Pose p;
    p.rotation = rotation.transpose();
    p.translation = -(p.rotation * translation);
    return p;
  }

  bool finite() const { return rotation.allFinite() && translation.allFinite(); }

  bool is_rigid(double tol = 1e-6) const {
    if (!finite()) return false;
    const Eigen::Matrix3d g = rotation.transpose() * rotation - Eigen::Matrix3d::Identity();
    return g.cwiseAbs().maxCoeff() <= tol && std::abs(rotation.determinant() - 1.0) <= tol;
  }
};

struct PixelDepth {
  double u = 0, v = 0, z = 0;
};

enum class Visibility { Visible, OutOfFov, InvalidDepth, Occluded, BehindCamera };

constexpr std::string_view to_string(Visibility v) {
  switch (v) {
    case Visibility::Visible: return "Visible";
    case Visibility::OutOfFov: return "OutOfFov";
    case Visibility::InvalidDepth: return "InvalidDepth";
    case Visibility::Occluded: return "Occluded";
    case Visibility::BehindCamera: return "BehindCamera";
  }
  return "?";
}

struct VisibilityResult {
  Visibility status = Visibility::OutOfFov;
  PixelDepth pixel;
  double z_actual = 0;  // sampled depth, 0 when not sampled
};

inline Point3 unproject_pixel(double u, double v, double depth, const Intrinsics& k) {
  if (!(depth > 0)) throw Error(Errc::NonPositiveDepth, "depth " + std::to_string(depth));
  if (!(u >= 0 && v >= 0 && u < k.width && v < k.height))
    throw Error(Errc::PixelOutOfBounds,
                "(" + std::to_string(u) + ", " + std::to_string(v) + ") outside image");
  return {(u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, depth};
}

inline Point3 camera_to_world(const Point3& p_c, const Pose& pose) {
  return pose.rotation * p_c + pose.translation;
}

inline Point3 world_to_camera(const Point3& p_w, const Pose& pose) {
  return pose.rotation.transpose() * (p_w - pose.translation);
}

// No clamping to the image domain; visibility_check does the bounds test.
inline PixelDepth world_to_pixel(const Point3& p_w, const Pose& pose, const Intrinsics& k) {
  const Point3 p_c = world_to_camera(p_w, pose);
  if (std::abs(p_c.z()) <= 1e-9)
    throw Error(Errc::DegenerateProjection, "point lies on the camera plane");
  return {k.fx * p_c.x() / p_c.z() + k.cx, k.fy * p_c.y() / p_c.z() + k.cy, p_c.z()};
}

// Depth is sampled at the nearest integer pixel; the image-domain test is
// evaluated on that rounded pixel.
inline VisibilityResult visibility_check(const Point3& p_w, const DepthMap& depth,
                                         const Pose& pose, const Intrinsics& k, double eps) {
  VisibilityResult r;
  const Point3 p_c = world_to_camera(p_w, pose);
  if (!(p_c.z() > 0)) {
    r.status = Visibility::BehindCamera;
    r.pixel = {std::nan(""), std::nan(""), p_c.z()};
    if (std::abs(p_c.z()) > 1e-9)
      r.pixel = {k.fx * p_c.x() / p_c.z() + k.cx, k.fy * p_c.y() / p_c.z() + k.cy, p_c.z()};
    return r;
  }
  r.pixel = {k.fx * p_c.x() / p_c.z() + k.cx, k.fy * p_c.y() / p_c.z() + k.cy, p_c.z()};
  const double ur = std::round(r.pixel.u), vr = std::round(r.pixel.v);
  const int w = depth.width(), h = depth.height();
  if (!(ur >= 0 && vr >= 0 && ur < w && vr < h)) {
    r.status = Visibility::OutOfFov;
    return r;
  }
  r.z_actual = depth.at(static_cast<int>(ur), static_cast<int>(vr));
  if (!(r.z_actual > 0)) {
    r.status = Visibility::InvalidDepth;
    return r;
  }
  r.status = r.pixel.z > r.z_actual + eps ? Visibility::Occluded : Visibility::Visible;
  return r;
}

// Lifts masked pixels with valid depth into world space. With stride s, every
// s*s-th masked pixel in raster order is taken, so the point count never
// exceeds ceil(masked / s^2).
inline PointCloud lift_mask(const DepthMap& depth, const Bitmap& mask, const Intrinsics& k,
                            const Pose& pose, int stride = 1,
                            const RgbImage* color = nullptr) {
  if (!mask.same_shape(depth))
    throw Error(Errc::MaskShapeMismatch, "mask " + std::to_string(mask.width()) + "x" +
                                             std::to_string(mask.height()) + " vs depth " +
                                             std::to_string(depth.width()) + "x" +
                                             std::to_string(depth.height()));
  if (stride < 1) throw Error(Errc::InvalidConfig, "stride must be >= 1");
  const bool with_color = color && color->same_shape(depth);
  const std::size_t step = static_cast<std::size_t>(stride) * static_cast<std::size_t>(stride);
  PointCloud out;
  std::size_t rank = 0;
  for (int v = 0; v < mask.height(); ++v)
    for (int u = 0; u < mask.width(); ++u) {
      if (!mask.at(u, v)) continue;
      if (rank++ % step != 0) continue;
      const double d = depth.at(u, v);
      if (!(d > 0) || !std::isfinite(d)) continue;
      out.points.push_back(camera_to_world(unproject_pixel(u, v, d, k), pose));
      if (with_color) out.colors.push_back(color->at(u, v));
    }
  return out;
}

}  // namespace vg
