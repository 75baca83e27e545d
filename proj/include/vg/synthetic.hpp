#pragma once

// Desk-scale synthetic RGB-D scenes: axis-aligned boxes inside a box-shaped
// room, ray-cast from cameras on a circular orbit. Produces depth quantized
// to millimetres, flat-shaded color, and occlusion-aware per-box masks.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vg/cloud.hpp"
#include "vg/error.hpp"
#include "vg/geometry.hpp"
#include "vg/grid.hpp"
#include "vg/scene.hpp"

namespace vg {

struct SyntheticBox {
  int id = 0;
  std::string label;
  Bbox3D box;
  Color color{200, 200, 200};
};

struct SyntheticQuery {
  std::string text;
  int target_id = 0;
};

struct OrbitPath {
  double radius = 2.5;
  double height = 1.5;
  int frames = 60;
  Point3 look_at = Point3::Zero();
  std::optional<std::array<double, 2>> center;  // orbit centre (x, y); defaults to look_at
  double start_deg = 0.0;
  double arc_deg = 360.0;
};

struct SyntheticSpec {
  std::string scene_id = "synthetic";
  Point3 room_min{-3, -3, 0};
  Point3 room_max{3, 3, 3};
  Intrinsics camera{277.0, 277.0, 159.5, 119.5, 320, 240};
  OrbitPath path;
  std::vector<SyntheticBox> boxes;
  std::vector<SyntheticQuery> queries;
};

// Per-frame label image: index into GroundTruth::boxes, or -1 for the room.
using LabelImage = Grid<std::int16_t>;

struct GroundTruth {
  std::vector<SyntheticBox> boxes;
  std::vector<int> frame_indices;  // parallel to labels
  std::vector<LabelImage> labels;
  std::vector<SyntheticQuery> queries;

  int box_slot(int box_id) const {
    for (std::size_t i = 0; i < boxes.size(); ++i)
      if (boxes[i].id == box_id) return static_cast<int>(i);
    return -1;
  }

  const LabelImage* labels_for(int frame_index) const {
    for (std::size_t i = 0; i < frame_indices.size(); ++i)
      if (frame_indices[i] == frame_index) return &labels[i];
    return nullptr;
  }

  Bitmap mask(int frame_index, int box_id) const {
    const auto* lab = labels_for(frame_index);
    const int slot = box_slot(box_id);
    if (!lab) return {};
    Bitmap m(lab->width(), lab->height());
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = lab->data()[i] == slot && slot >= 0;
    return m;
  }

  std::size_t visible_pixels(int frame_index, int box_id) const {
    const auto* lab = labels_for(frame_index);
    const int slot = box_slot(box_id);
    if (!lab || slot < 0) return 0;
    std::size_t n = 0;
    for (auto l : lab->data()) n += l == slot;
    return n;
  }

  const SyntheticBox* box(int box_id) const {
    const int s = box_slot(box_id);
    return s < 0 ? nullptr : &boxes[s];
  }

  std::optional<int> target_for(const std::string& query) const {
    for (const auto& q : queries)
      if (q.text == query) return q.target_id;
    return std::nullopt;
  }
};

// ---- JSON ------------------------------------------------------------------

namespace detail {

inline Point3 vec3(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw Error(Errc::InvalidSpec, std::string(what) + " must be [x, y, z]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline nlohmann::json to_json(const Point3& p) { return {p.x(), p.y(), p.z()}; }

}  // namespace detail

inline SyntheticSpec spec_from_json(const nlohmann::json& j) {
  try {
    SyntheticSpec s;
    s.scene_id = j.value("scene_id", s.scene_id);
    if (j.contains("room")) {
      s.room_min = detail::vec3(j["room"].at("min"), "room.min");
      s.room_max = detail::vec3(j["room"].at("max"), "room.max");
    }
    if (j.contains("camera")) {
      const auto& c = j["camera"];
      s.camera.width = c.value("width", s.camera.width);
      s.camera.height = c.value("height", s.camera.height);
      s.camera.fx = c.value("fx", s.camera.fx);
      s.camera.fy = c.value("fy", s.camera.fx);
      s.camera.cx = c.value("cx", (s.camera.width - 1) / 2.0);
      s.camera.cy = c.value("cy", (s.camera.height - 1) / 2.0);
    }
    if (j.contains("path")) {
      const auto& p = j["path"];
      s.path.radius = p.value("radius", s.path.radius);
      s.path.height = p.value("height", s.path.height);
      s.path.frames = p.value("frames", s.path.frames);
      if (p.contains("look_at")) s.path.look_at = detail::vec3(p["look_at"], "path.look_at");
      if (p.contains("center")) s.path.center = {p["center"].at(0).get<double>(), p["center"].at(1).get<double>()};
      s.path.start_deg = p.value("start_deg", s.path.start_deg);
      s.path.arc_deg = p.value("arc_deg", s.path.arc_deg);
    }
    for (const auto& b : j.value("boxes", nlohmann::json::array())) {
      SyntheticBox box;
      box.id = b.at("id").get<int>();
      box.label = b.at("label").get<std::string>();
      box.box.center = detail::vec3(b.at("center"), "box.center");
      box.box.extent = detail::vec3(b.at("extent"), "box.extent");
      if (b.contains("color"))
        box.color = {b["color"].at(0).get<std::uint8_t>(), b["color"].at(1).get<std::uint8_t>(),
                     b["color"].at(2).get<std::uint8_t>()};
      s.boxes.push_back(std::move(box));
    }
    for (const auto& q : j.value("queries", nlohmann::json::array()))
      s.queries.push_back({q.at("text").get<std::string>(), q.at("target_id").get<int>()});
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidSpec, e.what());
  }
}

inline nlohmann::json spec_to_json(const SyntheticSpec& s) {
  nlohmann::json j;
  j["scene_id"] = s.scene_id;
  j["room"] = {{"min", detail::to_json(s.room_min)}, {"max", detail::to_json(s.room_max)}};
  j["camera"] = {{"width", s.camera.width}, {"height", s.camera.height}, {"fx", s.camera.fx},
                 {"fy", s.camera.fy},       {"cx", s.camera.cx},         {"cy", s.camera.cy}};
  j["path"] = {{"radius", s.path.radius},      {"height", s.path.height},
               {"frames", s.path.frames},      {"look_at", detail::to_json(s.path.look_at)},
               {"start_deg", s.path.start_deg}, {"arc_deg", s.path.arc_deg}};
  if (s.path.center) j["path"]["center"] = {(*s.path.center)[0], (*s.path.center)[1]};
  j["boxes"] = nlohmann::json::array();
  for (const auto& b : s.boxes)
    j["boxes"].push_back({{"id", b.id},
                          {"label", b.label},
                          {"center", detail::to_json(b.box.center)},
                          {"extent", detail::to_json(b.box.extent)},
                          {"color", {b.color[0], b.color[1], b.color[2]}}});
  j["queries"] = nlohmann::json::array();
  for (const auto& q : s.queries) j["queries"].push_back({{"text", q.text}, {"target_id", q.target_id}});
  return j;
}

inline void validate(const SyntheticSpec& s) {
  if (s.boxes.empty()) throw Error(Errc::EmptySpec, "spec has no boxes");
  if (s.path.frames < 1) throw Error(Errc::InvalidSpec, "frame count must be >= 1");
  if (!s.camera.valid()) throw Error(Errc::InvalidSpec, "invalid camera intrinsics");
  if (!((s.room_max - s.room_min).array() > 0).all()) throw Error(Errc::InvalidSpec, "room has no volume");
  std::vector<int> ids;
  for (const auto& b : s.boxes) {
    if ((b.box.extent.array() <= 0).any())
      throw Error(Errc::InvalidSpec, "box " + std::to_string(b.id) + " has non-positive extent");
    if (((b.box.min() - s.room_min).array() < 0).any() || ((s.room_max - b.box.max()).array() < 0).any())
      throw Error(Errc::InvalidSpec, "box " + std::to_string(b.id) + " leaves the room");
    if (std::find(ids.begin(), ids.end(), b.id) != ids.end())
      throw Error(Errc::InvalidSpec, "duplicate box id " + std::to_string(b.id));
    ids.push_back(b.id);
  }
}

// ---- Rendering -------------------------------------------------------------

// Camera-to-world pose at `eye` looking at `target`, OpenCV axes
// (x right, y down, z forward) and world z up.
inline Pose look_at_pose(const Point3& eye, const Point3& target) {
  const Eigen::Vector3d f = (target - eye).normalized();
  Eigen::Vector3d up(0, 0, 1);
  if (std::abs(f.dot(up)) > 1.0 - 1e-9) up = Eigen::Vector3d(0, 1, 0);
  const Eigen::Vector3d right = f.cross(up).normalized();
  const Eigen::Vector3d down = f.cross(right);
  Pose p;
  p.rotation.col(0) = right;
  p.rotation.col(1) = down;
  p.rotation.col(2) = f;
  p.translation = eye;
  return p;
}

inline std::vector<Pose> orbit_poses(const OrbitPath& path) {
  std::vector<Pose> out;
  const double cx = path.center ? (*path.center)[0] : path.look_at.x();
  const double cy = path.center ? (*path.center)[1] : path.look_at.y();
  const bool closed = std::abs(path.arc_deg - 360.0) < 1e-9;
  const int n = path.frames;
  for (int i = 0; i < n; ++i) {
    const double frac = closed ? static_cast<double>(i) / n
                               : (n > 1 ? static_cast<double>(i) / (n - 1) : 0.0);
    const double a = (path.start_deg + frac * path.arc_deg) * std::numbers::pi / 180.0;
    const Point3 eye(cx + path.radius * std::cos(a), cy + path.radius * std::sin(a), path.height);
    out.push_back(look_at_pose(eye, path.look_at));
  }
  return out;
}

namespace detail {

struct SlabHit {
  double t_near, t_far;
  int near_axis;
};

// Ray/box slab test; nullopt on a miss.
inline std::optional<SlabHit> slab(const Point3& o, const Eigen::Vector3d& d, const Point3& lo,
                                   const Point3& hi) {
  double tn = -std::numeric_limits<double>::infinity();
  double tf = std::numeric_limits<double>::infinity();
  int axis = 0;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-15) {
      if (o[a] < lo[a] || o[a] > hi[a]) return std::nullopt;
      continue;
    }
    double t1 = (lo[a] - o[a]) / d[a], t2 = (hi[a] - o[a]) / d[a];
    if (t1 > t2) std::swap(t1, t2);
    if (t1 > tn) {
      tn = t1;
      axis = a;
    }
    tf = std::min(tf, t2);
  }
  if (tn > tf) return std::nullopt;
  return SlabHit{tn, tf, axis};
}

inline Color shade(const Color& c, int axis) {
  static constexpr double kFactor[3] = {0.85, 0.7, 1.0};
  return {static_cast<std::uint8_t>(c[0] * kFactor[axis]), static_cast<std::uint8_t>(c[1] * kFactor[axis]),
          static_cast<std::uint8_t>(c[2] * kFactor[axis])};
}

}  // namespace detail

struct RenderedFrame {
  DepthMap depth;
  RgbImage color;
  LabelImage labels;
};

// Ray-casts one view. Depth is the camera-frame z of the nearest hit,
// quantized to millimetres like the on-disk format.
inline RenderedFrame render_view(const SyntheticSpec& spec, const Pose& pose) {
  const Intrinsics& k = spec.camera;
  RenderedFrame out{DepthMap(k.width, k.height), RgbImage(k.width, k.height),
                    LabelImage(k.width, k.height, -1)};
  const Point3& o = pose.translation;
  for (int v = 0; v < k.height; ++v)
    for (int u = 0; u < k.width; ++u) {
      // Unnormalized so that the ray parameter equals camera-frame depth.
      const Eigen::Vector3d d = pose.rotation * Eigen::Vector3d((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
      double best = std::numeric_limits<double>::infinity();
      int best_slot = -1, best_axis = 2;
      for (std::size_t b = 0; b < spec.boxes.size(); ++b) {
        const auto& bx = spec.boxes[b].box;
        const auto hit = detail::slab(o, d, bx.min(), bx.max());
        if (!hit || hit->t_near <= 0) continue;  // miss, behind, or camera inside
        if (hit->t_near < best) {
          best = hit->t_near;
          best_slot = static_cast<int>(b);
          best_axis = hit->near_axis;
        }
      }
      Color c;
      if (best_slot < 0) {
        const auto room = detail::slab(o, d, spec.room_min, spec.room_max);
        if (!room || room->t_far <= 0) continue;
        best = room->t_far;
        const Point3 p = o + best * d;
        int axis = 2;
        double gap = std::numeric_limits<double>::infinity();
        for (int a = 0; a < 3; ++a) {
          const double g = std::min(std::abs(p[a] - spec.room_min[a]), std::abs(p[a] - spec.room_max[a]));
          if (g < gap) {
            gap = g;
            axis = a;
          }
        }
        c = detail::shade(Color{170, 165, 160}, axis);
      } else {
        c = detail::shade(spec.boxes[best_slot].color, best_axis);
      }
      const std::uint16_t raw = depth_to_raw(best);
      out.depth.at(u, v) = depth_from_raw(raw);
      out.color.at(u, v) = c;
      out.labels.at(u, v) = static_cast<std::int16_t>(raw ? best_slot : -1);
    }
  return out;
}

inline std::pair<Scene, GroundTruth> render_synthetic(const SyntheticSpec& spec) {
  validate(spec);
  Scene scene;
  scene.scene_id = spec.scene_id;
  scene.intrinsics = spec.camera;
  GroundTruth gt;
  gt.boxes = spec.boxes;
  gt.queries = spec.queries;
  const auto poses = orbit_poses(spec.path);
  for (int i = 0; i < static_cast<int>(poses.size()); ++i) {
    auto r = render_view(spec, poses[i]);
    scene.frames.push_back(SceneFrame::in_memory(i, poses[i], std::move(r.depth), std::move(r.color)));
    gt.frame_indices.push_back(i);
    gt.labels.push_back(std::move(r.labels));
  }
  return {std::move(scene), std::move(gt)};
}

inline nlohmann::json ground_truth_json(const SyntheticSpec& spec) {
  nlohmann::json j;
  j["spec"] = spec_to_json(spec);
  j["boxes"] = nlohmann::json::array();
  for (const auto& b : spec.boxes) {
    const auto a = b.box.to_array();
    j["boxes"].push_back({{"id", b.id}, {"label", b.label}, {"box", a}});
  }
  return j;
}

// Writes the on-disk scene layout plus ground_truth.json.
inline void write_scene(const fs::path& dir, const SyntheticSpec& spec, const Scene& scene) {
  fs::create_directories(dir / "color");
  fs::create_directories(dir / "depth");
  fs::create_directories(dir / "pose");
  write_intrinsics(dir / "intrinsics.txt", scene.intrinsics);
  for (const auto& f : scene.frames) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "%06d", f.index);
    write_depth(dir / "depth" / (std::string(stem) + ".png"), f.depth());
    if (!cv::imwrite((dir / "color" / (std::string(stem) + ".png")).string(), to_mat(f.color())))
      throw Error(Errc::IoFailure, "cannot write color frame " + std::string(stem));
    write_pose(dir / "pose" / (std::string(stem) + ".txt"), f.pose);
  }
  std::ofstream os(dir / "ground_truth.json");
  os << ground_truth_json(spec).dump(2) << "\n";
  if (!os) throw Error(Errc::IoFailure, "cannot write ground_truth.json");
}

// Re-renders the label images of a scene written by write_scene, keyed by the
// frame indices actually loaded.
inline GroundTruth load_ground_truth(const fs::path& file, const Scene& scene) {
  std::ifstream is(file);
  if (!is) throw Error(Errc::MissingManifest, "missing " + file.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidSpec, e.what());
  }
  const SyntheticSpec spec = spec_from_json(j.at("spec"));
  validate(spec);
  const auto poses = orbit_poses(spec.path);
  GroundTruth gt;
  gt.boxes = spec.boxes;
  gt.queries = spec.queries;
  for (const auto& f : scene.frames) {
    if (f.index < 0 || f.index >= static_cast<int>(poses.size())) continue;
    gt.frame_indices.push_back(f.index);
    gt.labels.push_back(render_view(spec, poses[f.index]).labels);
  }
  return gt;
}

}  // namespace vg
