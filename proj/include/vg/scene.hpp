#pragma once

// RGB-D scenes: frames with camera-to-world poses, lazily decoded depth, and
// the on-disk layout
//
//   <dir>/intrinsics.txt      fx fy cx cy W H
//   <dir>/color/<id>.png|jpg
//   <dir>/depth/<id>.png      16-bit millimetres
//   <dir>/pose/<id>.txt       4x4 row-major camera-to-world

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vg/error.hpp"
#include "vg/geometry.hpp"
#include "vg/grid.hpp"

namespace vg {

namespace fs = std::filesystem;

inline constexpr double kDepthScale = 1000.0;

inline float depth_from_raw(std::uint16_t raw) {
  return static_cast<float>(raw / kDepthScale);
}

inline std::uint16_t depth_to_raw(double meters) {
  if (!(meters > 0) || !std::isfinite(meters)) return 0;
  return static_cast<std::uint16_t>(std::min(65535.0, std::round(meters * kDepthScale)));
}

inline DepthMap read_depth(const fs::path& path) {
  const cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw Error(Errc::IoFailure, "cannot decode " + path.string());
  if (m.type() != CV_16UC1)
    throw Error(Errc::UnsupportedDepthFormat,
                path.string() + " is not a 16-bit single-channel image");
  DepthMap d(m.cols, m.rows);
  for (int v = 0; v < m.rows; ++v) {
    const auto* row = m.ptr<std::uint16_t>(v);
    for (int u = 0; u < m.cols; ++u) d.at(u, v) = depth_from_raw(row[u]);
  }
  return d;
}

inline void write_depth(const fs::path& path, const DepthMap& depth) {
  cv::Mat m(depth.height(), depth.width(), CV_16UC1);
  for (int v = 0; v < depth.height(); ++v) {
    auto* row = m.ptr<std::uint16_t>(v);
    for (int u = 0; u < depth.width(); ++u) row[u] = depth_to_raw(depth.at(u, v));
  }
  if (!cv::imwrite(path.string(), m)) throw Error(Errc::IoFailure, "cannot write " + path.string());
}

inline cv::Mat to_mat(const RgbImage& img) {
  cv::Mat m(img.height(), img.width(), CV_8UC3);
  for (int v = 0; v < img.height(); ++v) {
    auto* row = m.ptr<cv::Vec3b>(v);
    for (int u = 0; u < img.width(); ++u) {
      const auto& c = img.at(u, v);
      row[u] = cv::Vec3b(c[2], c[1], c[0]);
    }
  }
  return m;
}

inline RgbImage from_mat(const cv::Mat& bgr) {
  RgbImage img(bgr.cols, bgr.rows);
  for (int v = 0; v < bgr.rows; ++v) {
    const auto* row = bgr.ptr<cv::Vec3b>(v);
    for (int u = 0; u < bgr.cols; ++u) img.at(u, v) = {row[u][2], row[u][1], row[u][0]};
  }
  return img;
}

inline std::string encode_png(const cv::Mat& m) {
  std::vector<uchar> buf;
  if (!cv::imencode(".png", m, buf)) throw Error(Errc::IoFailure, "PNG encoding failed");
  return {buf.begin(), buf.end()};
}

inline Pose read_pose(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(Errc::MissingManifest, "cannot open pose " + path.string());
  Eigen::Matrix4d m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) {
      std::string tok;
      if (!(is >> tok)) throw Error(Errc::MissingManifest, "short pose file " + path.string());
      // strtod accepts "inf"/"-inf"/"nan" which some capture tools emit.
      m(r, c) = std::strtod(tok.c_str(), nullptr);
    }
  return Pose::from_matrix(m);
}

inline void write_pose(const fs::path& path, const Pose& pose) {
  std::ofstream os(path);
  if (!os) throw Error(Errc::IoFailure, "cannot write " + path.string());
  const Eigen::Matrix4d m = pose.matrix();
  char buf[64];
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", m(r, c));
      os << (c ? " " : "") << buf;
    }
    os << "\n";
  }
}

inline Intrinsics read_intrinsics(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(Errc::MissingManifest, "missing " + path.string());
  Intrinsics k;
  if (!(is >> k.fx >> k.fy >> k.cx >> k.cy >> k.width >> k.height))
    throw Error(Errc::MissingManifest, "intrinsics.txt needs 'fx fy cx cy W H'");
  if (!k.valid()) throw Error(Errc::MissingManifest, "invalid intrinsics in " + path.string());
  return k;
}

inline void write_intrinsics(const fs::path& path, const Intrinsics& k) {
  std::ofstream os(path);
  char buf[160];
  std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %.17g %d %d\n", k.fx, k.fy, k.cx, k.cy,
                k.width, k.height);
  os << buf;
  if (!os) throw Error(Errc::IoFailure, "cannot write " + path.string());
}

namespace detail {

// Depth decoded on first access; safe for concurrent readers.
class DepthSource {
 public:
  explicit DepthSource(fs::path path) : path_(std::move(path)) {}
  explicit DepthSource(DepthMap d) : depth_(std::move(d)) {}

  const DepthMap& get() const {
    std::call_once(once_, [this] {
      if (!depth_) depth_ = read_depth(path_);
    });
    return *depth_;
  }

  const fs::path& path() const noexcept { return path_; }

 private:
  fs::path path_;
  mutable std::once_flag once_;
  mutable std::optional<DepthMap> depth_;
};

}  // namespace detail

struct SceneFrame {
  int index = 0;
  fs::path rgb_path;
  Pose pose;
  bool valid = true;
  std::shared_ptr<const detail::DepthSource> depth_source;
  std::shared_ptr<const RgbImage> color_image;  // in-memory frames only

  const DepthMap& depth() const {
    if (!depth_source) throw Error(Errc::IoFailure, "frame " + std::to_string(index) + " has no depth");
    return depth_source->get();
  }

  RgbImage color() const {
    if (color_image) return *color_image;
    const cv::Mat m = cv::imread(rgb_path.string(), cv::IMREAD_COLOR);
    if (m.empty()) throw Error(Errc::IoFailure, "cannot decode " + rgb_path.string());
    return from_mat(m);
  }

  // Encoded image bytes as they would be sent to a remote model.
  std::string image_bytes() const {
    if (!color_image && !rgb_path.empty()) {
      std::ifstream is(rgb_path, std::ios::binary);
      if (is) return {std::istreambuf_iterator<char>(is), {}};
    }
    return encode_png(to_mat(color()));
  }

  std::string image_name() const {
    if (!rgb_path.empty()) return rgb_path.filename().string();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06d.png", index);
    return buf;
  }

  static SceneFrame in_memory(int index, Pose pose, DepthMap depth, RgbImage color = {}) {
    SceneFrame f;
    f.index = index;
    f.valid = pose.finite();
    f.pose = std::move(pose);
    f.depth_source = std::make_shared<detail::DepthSource>(std::move(depth));
    if (!color.empty()) f.color_image = std::make_shared<const RgbImage>(std::move(color));
    return f;
  }
};

struct Scene {
  std::string scene_id;
  std::vector<SceneFrame> frames;  // ascending index
  Intrinsics intrinsics;
  int skipped_invalid = 0;

  const SceneFrame* find(int index) const {
    auto it = std::lower_bound(frames.begin(), frames.end(), index,
                               [](const SceneFrame& f, int i) { return f.index < i; });
    return it != frames.end() && it->index == index ? &*it : nullptr;
  }

  const SceneFrame& at(int index) const {
    if (const auto* f = find(index)) return *f;
    throw Error(Errc::InvalidConfig, "scene has no frame " + std::to_string(index));
  }

  std::vector<int> indices() const {
    std::vector<int> out;
    out.reserve(frames.size());
    for (const auto& f : frames) out.push_back(f.index);
    return out;
  }

  // Position of the frame with this index in `frames`, or -1.
  int position(int index) const {
    const auto* f = find(index);
    return f ? static_cast<int>(f - frames.data()) : -1;
  }
};

// Evenly spaced selection of at most max_count of n positions.
inline std::vector<std::size_t> uniform_sample(std::size_t n, std::size_t max_count) {
  std::vector<std::size_t> out;
  if (n <= max_count || max_count == 0) {
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = i;
    return out;
  }
  out.reserve(max_count);
  for (std::size_t i = 0; i < max_count; ++i) out.push_back(i * n / max_count);
  return out;
}

inline Scene load_scene(const fs::path& dir, std::size_t max_frames = 300) {
  if (!fs::is_directory(dir)) throw Error(Errc::MissingManifest, dir.string() + " is not a directory");
  for (const char* sub : {"color", "depth", "pose"})
    if (!fs::is_directory(dir / sub))
      throw Error(Errc::MissingManifest, "missing " + (dir / sub).string());
  Scene scene;
  scene.scene_id = fs::absolute(dir).lexically_normal().filename().string();
  if (scene.scene_id.empty()) scene.scene_id = fs::absolute(dir).parent_path().filename().string();
  scene.intrinsics = read_intrinsics(dir / "intrinsics.txt");

  std::map<int, std::string> stems;
  for (const auto& e : fs::directory_iterator(dir / "pose")) {
    if (e.path().extension() != ".txt") continue;
    const auto stem = e.path().stem().string();
    char* end = nullptr;
    const long id = std::strtol(stem.c_str(), &end, 10);
    if (end == stem.c_str() || *end != '\0') continue;
    stems[static_cast<int>(id)] = stem;
  }
  if (stems.empty()) throw Error(Errc::NoValidFrames, "no pose files in " + dir.string());

  std::vector<std::pair<int, std::string>> all(stems.begin(), stems.end());
  for (auto pos : uniform_sample(all.size(), max_frames)) {
    const auto& [id, stem] = all[pos];
    SceneFrame f;
    f.index = id;
    f.pose = read_pose(dir / "pose" / (stem + ".txt"));
    f.valid = f.pose.finite();
    const fs::path depth = dir / "depth" / (stem + ".png");
    if (!fs::exists(depth)) throw Error(Errc::MissingManifest, "missing " + depth.string());
    for (const char* ext : {".png", ".jpg", ".jpeg"})
      if (fs::exists(dir / "color" / (stem + ext))) {
        f.rgb_path = dir / "color" / (stem + ext);
        break;
      }
    if (f.rgb_path.empty()) throw Error(Errc::MissingManifest, "missing color image for frame " + stem);
    if (!f.valid) {
      ++scene.skipped_invalid;
      continue;
    }
    f.depth_source = std::make_shared<detail::DepthSource>(depth);
    scene.frames.push_back(std::move(f));
  }
  if (scene.frames.empty()) throw Error(Errc::NoValidFrames, "every frame has a non-finite pose");
  return scene;
}

inline VisibilityResult visibility_check(const Point3& p_w, const SceneFrame& frame,
                                         const Intrinsics& k, double eps) {
  return visibility_check(p_w, frame.depth(), frame.pose, k, eps);
}

inline PointCloud lift_mask(const SceneFrame& frame, const Bitmap& mask, const Intrinsics& k,
                            int stride = 1) {
  return lift_mask(frame.depth(), mask, k, frame.pose, stride);
}

}  // namespace vg
