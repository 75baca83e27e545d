#pragma once

// Build machinery: verifier-gated temporal tracking from a reference frame,
// the initial build and its centroid, centroid-anchored multi-view expansion,
// and the filtered final reconstruction.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "vg/parallel.hpp"
#include "vg/pointcloud.hpp"
#include "vg/scene.hpp"
#include "vg/semantic.hpp"

namespace vg {

struct TrackedClip {
  std::vector<SegmentMask> entries;  // ascending frame index, one per frame
  int ref_index = 0;

  std::vector<int> frames() const {
    std::vector<int> out;
    for (const auto& e : entries) out.push_back(e.frame_index);
    return out;
  }
};

enum class PoolSource { Semantic, Geometric };

inline const char* to_string(PoolSource s) { return s == PoolSource::Semantic ? "semantic" : "geometric"; }

struct PoolEntry {
  SegmentMask mask;
  PoolSource source = PoolSource::Semantic;
};

struct ExpansionPool {
  std::vector<PoolEntry> entries;  // ascending frame index, no duplicates

  std::vector<int> frames() const {
    std::vector<int> out;
    for (const auto& e : entries) out.push_back(e.mask.frame_index);
    return out;
  }
  std::vector<SegmentMask> masks() const {
    std::vector<SegmentMask> out;
    for (const auto& e : entries) out.push_back(e.mask);
    return out;
  }
};

struct SteConfig {
  int cap = 32;
  int context_frames = 4;
  double threshold = 0.5;
};

// Why tracking stopped in one direction.
struct SteDirectionLog {
  int step = 0;
  int accepted = 0;
  std::string stop;  // "verifier", "empty_mask", "boundary", "cap"
};

struct SteLog {
  SteDirectionLog forward{+1, 0, ""}, backward{-1, 0, ""};
};

namespace detail {

// The candidate mask that overlaps the previous accepted mask most; ties go
// to the lower instance id. Empty when nothing overlaps.
inline std::optional<SegmentMask> associate(const std::vector<SegmentMask>& candidates, const Bitmap& previous) {
  std::optional<SegmentMask> best;
  double best_iou = 0.0;
  for (const auto& c : candidates) {
    const double iou = mask_iou(c.bitmap, previous);
    if (iou > best_iou) {
      best_iou = iou;
      best = c;
    }
  }
  return best;
}

}  // namespace detail

// Bidirectional tracking from the reference frame over scene positions. The
// reference counts toward the cap; the remaining budget is split as evenly as
// each direction allows, and a direction that stops early hands its unused
// budget to the other.
inline TrackedClip semantic_temporal_expansion(const Scene& scene, const SegmentMask& ref, const std::string& query,
                                               const ParsedQuery& parsed, const Toolkit& tk, const SteConfig& cfg,
                                               SteLog* log = nullptr) {
  if (count_set(ref.bitmap) == 0) throw Error(Errc::ArgumentValidation, "reference mask is empty");
  if (cfg.cap < 1) throw Error(Errc::InvalidConfig, "STE cap must be >= 1");
  const int ref_pos = scene.position(ref.frame_index);
  if (ref_pos < 0) throw Error(Errc::ArgumentValidation, "reference frame is not in the scene");

  SteLog local;
  SteLog& lg = log ? *log : local;
  std::vector<SegmentMask> fwd, bwd;  // in tracking order

  // Tracks up to `budget` more frames in direction `dir`; returns false once
  // the direction has stopped for a reason other than budget.
  auto run = [&](int dir, int budget, std::vector<SegmentMask>& out, SteDirectionLog& dl) {
    while (budget > 0) {
      const int pos = ref_pos + dir * (static_cast<int>(out.size()) + 1);
      if (pos < 0 || pos >= static_cast<int>(scene.frames.size())) {
        dl.stop = "boundary";
        return false;
      }
      const auto& cand = scene.frames[static_cast<std::size_t>(pos)];
      // The verifier sees the most recent frames accepted in this direction,
      // starting from the reference, oldest first.
      std::vector<const SegmentMask*> chain{&ref};
      for (const auto& m : out) chain.push_back(&m);
      const std::size_t take = std::min(chain.size(), static_cast<std::size_t>(std::max(cfg.context_frames, 1)));
      std::vector<TrackContext> ctx;
      for (std::size_t i = chain.size() - take; i < chain.size(); ++i)
        ctx.push_back({&scene.at(chain[i]->frame_index), &chain[i]->bitmap});
      if (!verify_tracking(ctx, cand, query, parsed, *tk.chat)) {
        dl.stop = "verifier";
        return false;
      }
      const Bitmap& prev = out.empty() ? ref.bitmap : out.back().bitmap;
      auto m = detail::associate(tk.segmenter->segment(cand, SegmentPrompt::by_phrase(parsed.target_class), cfg.threshold), prev);
      if (!m) {
        dl.stop = "empty_mask";
        return false;
      }
      m->frame_index = cand.index;
      m->instance_id = 0;
      out.push_back(std::move(*m));
      ++dl.accepted;
      --budget;
    }
    dl.stop = "cap";
    return true;
  };

  const int extra = cfg.cap - 1;
  const int fwd_budget = (extra + 1) / 2;
  const bool fwd_open = run(+1, fwd_budget, fwd, lg.forward);
  const int used_fwd = static_cast<int>(fwd.size());
  const bool bwd_open = run(-1, extra - used_fwd, bwd, lg.backward);
  if (fwd_open && !bwd_open) {
    const int left = extra - static_cast<int>(fwd.size()) - static_cast<int>(bwd.size());
    if (left > 0) run(+1, left, fwd, lg.forward);
  }

  TrackedClip clip;
  clip.ref_index = ref.frame_index;
  for (auto it = bwd.rbegin(); it != bwd.rend(); ++it) clip.entries.push_back(*it);
  SegmentMask r = ref;
  r.instance_id = 0;
  clip.entries.push_back(std::move(r));
  for (auto& m : fwd) clip.entries.push_back(m);
  return clip;
}

// Concatenated lift of every mask.
inline PointCloud lift_masks(const Scene& scene, const std::vector<SegmentMask>& masks, int stride = 1) {
  PointCloud out;
  for (const auto& m : masks) {
    const auto& f = scene.at(m.frame_index);
    out.append(lift_mask(f.depth(), m.bitmap, scene.intrinsics, f.pose, stride));
  }
  return out;
}

struct InitialBuild {
  PointCloud cloud;
  Point3 centroid;
};

inline InitialBuild initial_build(const Scene& scene, const TrackedClip& clip, int stride = 1) {
  if (clip.entries.empty()) throw Error(Errc::ArgumentValidation, "clip is empty");
  InitialBuild b;
  b.cloud = lift_masks(scene, clip.entries, stride);
  if (b.cloud.empty()) throw Error(Errc::EmptyCloud, "every masked pixel in the clip has invalid depth");
  b.centroid = centroid(b.cloud);
  return b;
}

struct MgeConfig {
  double eps = 0.4;
  int cap = 32;
  double threshold = 0.5;
  int jobs = 1;
};

struct MgeCandidate {
  int frame_index = 0;
  Visibility status = Visibility::OutOfFov;
  double u = 0, v = 0;
};

struct MgeLog {
  std::vector<MgeCandidate> checked;  // every frame outside the clip
  std::vector<int> selected;          // visible frames chosen for prompting
  std::vector<int> skipped_empty;     // selected frames whose point prompt gave no mask
};

inline ExpansionPool geometric_expansion(const Scene& scene, const Point3& c, const TrackedClip& clip,
                                         const Toolkit& tk, const MgeConfig& cfg, MgeLog* log = nullptr) {
  if (!c.allFinite()) throw Error(Errc::NonFiniteCentroid, "centroid is not finite");
  if (!(cfg.eps > 0)) throw Error(Errc::InvalidConfig, "eps must be positive");
  MgeLog local;
  MgeLog& lg = log ? *log : local;

  ExpansionPool pool;
  for (const auto& m : clip.entries) pool.entries.push_back({m, PoolSource::Semantic});

  std::vector<const SceneFrame*> others;
  for (const auto& f : scene.frames)
    if (f.valid && !std::any_of(clip.entries.begin(), clip.entries.end(),
                                [&](const SegmentMask& m) { return m.frame_index == f.index; }))
      others.push_back(&f);

  lg.checked.assign(others.size(), {});
  parallel_for(others.size(), cfg.jobs, [&](std::size_t i) {
    const auto r = visibility_check(c, *others[i], scene.intrinsics, cfg.eps);
    lg.checked[i] = {others[i]->index, r.status, r.pixel.u, r.pixel.v};
  });
  std::vector<const MgeCandidate*> visible;
  for (const auto& cand : lg.checked)
    if (cand.status == Visibility::Visible) visible.push_back(&cand);

  const auto pick = cfg.cap > 0 ? uniform_sample(visible.size(), static_cast<std::size_t>(cfg.cap))
                                : std::vector<std::size_t>{};
  std::vector<std::optional<SegmentMask>> got(pick.size());
  for (auto p : pick) lg.selected.push_back(visible[p]->frame_index);
  parallel_for(pick.size(), cfg.jobs, [&](std::size_t i) {
    const auto* cand = visible[pick[i]];
    auto masks = tk.segmenter->segment(scene.at(cand->frame_index), SegmentPrompt::by_point(cand->u, cand->v),
                                       cfg.threshold);
    for (auto& m : masks)
      if (count_set(m.bitmap) > 0) {
        m.frame_index = cand->frame_index;
        m.instance_id = 0;
        got[i] = std::move(m);
        break;
      }
  });
  for (std::size_t i = 0; i < pick.size(); ++i) {
    if (got[i])
      pool.entries.push_back({std::move(*got[i]), PoolSource::Geometric});
    else
      lg.skipped_empty.push_back(visible[pick[i]]->frame_index);
  }
  std::sort(pool.entries.begin(), pool.entries.end(),
            [](const PoolEntry& a, const PoolEntry& b) { return a.mask.frame_index < b.mask.frame_index; });
  return pool;
}

struct Reconstruction {
  PointCloud cloud;  // filtered, as exported
  Bbox3D bbox;
  std::size_t raw_points = 0;
};

inline Reconstruction final_reconstruction(const Scene& scene, const std::vector<SegmentMask>& masks,
                                           const SorConfig& sor, const DbscanConfig& db, int stride = 1) {
  if (masks.empty()) throw Error(Errc::ArgumentValidation, "nothing to reconstruct");
  const PointCloud raw = lift_masks(scene, masks, stride);
  if (raw.empty()) throw Error(Errc::EmptyCloud, "every masked pixel has invalid depth");
  Reconstruction r;
  r.raw_points = raw.size();
  r.cloud = clean_cloud(raw, sor, db);
  r.bbox = axis_aligned_bbox(r.cloud);
  return r;
}

}  // namespace vg
