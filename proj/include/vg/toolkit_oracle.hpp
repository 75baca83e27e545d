#pragma once

// Ground-truth-backed detector, segmenter and chat model for synthetic
// scenes. Every answer follows a fixed rule (see README "Oracle toolkit"),
// so runs are deterministic and independent of thread count.

#include <map>
#include <memory>
#include <mutex>
#include <sstream>

#include "vg/semantic.hpp"
#include "vg/synthetic.hpp"

namespace vg {

// Pixel count at which the oracle treats an object as clearly visible.
inline constexpr std::size_t kOracleVisiblePixels = 50;

namespace detail {

inline bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

// Position of `label` (or its plural) as a whole word in `text`, case-insensitive.
inline std::optional<std::size_t> find_word(const std::string& text, const std::string& label) {
  const std::string t = lower(text), l = lower(label);
  if (l.empty()) return std::nullopt;
  for (std::size_t pos = t.find(l); pos != std::string::npos; pos = t.find(l, pos + 1)) {
    const bool left = pos == 0 || !is_word_char(t[pos - 1]);
    std::size_t end = pos + l.size();
    if (end < t.size() && t[end] == 's') {
      if (end + 1 >= t.size() || !is_word_char(t[end + 1])) return pos;
    }
    const bool right = end >= t.size() || !is_word_char(t[end]);
    if (left && right) return pos;
  }
  return std::nullopt;
}

}  // namespace detail

class OracleWorld {
 public:
  explicit OracleWorld(GroundTruth gt) : gt_(std::move(gt)) {}

  const GroundTruth& gt() const noexcept { return gt_; }

  // Distinct labels mentioned in `text`, ordered by first mention.
  std::vector<std::string> mentioned_labels(const std::string& text) const {
    std::vector<std::pair<std::size_t, std::string>> hits;
    for (const auto& b : gt_.boxes) {
      if (std::any_of(hits.begin(), hits.end(), [&](const auto& h) { return h.second == b.label; })) continue;
      if (auto pos = detail::find_word(text, b.label)) hits.emplace_back(*pos, b.label);
    }
    std::stable_sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first < b.first;
      return a.second.size() > b.second.size();
    });
    std::vector<std::string> out;
    for (auto& h : hits) out.push_back(std::move(h.second));
    return out;
  }

  // The registered target of a query, else the lowest-id box of the earliest
  // mentioned class.
  std::optional<int> target_id(const std::string& query) const {
    if (auto id = gt_.target_for(query)) return id;
    const auto labels = mentioned_labels(query);
    if (labels.empty()) return std::nullopt;
    std::optional<int> best;
    for (const auto& b : gt_.boxes)
      if (b.label == labels.front() && (!best || b.id < *best)) best = b.id;
    return best;
  }

  std::size_t label_visible_pixels(int frame, const std::string& label) const {
    std::size_t n = 0;
    for (const auto& b : gt_.boxes)
      if (b.label == label) n += gt_.visible_pixels(frame, b.id);
    return n;
  }

  std::size_t max_visible_pixels(int box_id) const {
    std::lock_guard lock(mu_);
    auto it = max_area_.find(box_id);
    if (it != max_area_.end()) return it->second;
    std::size_t best = 0;
    for (int f : gt_.frame_indices) best = std::max(best, gt_.visible_pixels(f, box_id));
    max_area_[box_id] = best;
    return best;
  }

 private:
  GroundTruth gt_;
  mutable std::mutex mu_;
  mutable std::map<int, std::size_t> max_area_;
};

class OracleDetector : public Detector {
 public:
  explicit OracleDetector(std::shared_ptr<const OracleWorld> w) : w_(std::move(w)) {}

  std::vector<Detection> detect(const SceneFrame& frame, const std::string& phrase, double threshold) override {
    std::vector<Detection> out;
    for (const auto& b : w_->gt().boxes) {
      if (!detail::find_word(phrase, b.label)) continue;
      const auto mask = w_->gt().mask(frame.index, b.id);
      const auto area = count_set(mask);
      if (area == 0) continue;
      const double score = 0.5 + 0.45 * std::min(1.0, static_cast<double>(area) / 1000.0);
      if (score < threshold) continue;
      out.push_back({frame.index, bounding_rect(mask), score, b.label});
    }
    return out;
  }
  bool wants_images() const override { return false; }

 private:
  std::shared_ptr<const OracleWorld> w_;
};

class OracleSegmenter : public Segmenter {
 public:
  explicit OracleSegmenter(std::shared_ptr<const OracleWorld> w) : w_(std::move(w)) {}

  static constexpr double kScore = 0.95;

  std::vector<SegmentMask> segment(const SceneFrame& frame, const SegmentPrompt& prompt, double threshold) override {
    std::vector<SegmentMask> out;
    if (kScore < threshold) return out;
    const auto& gt = w_->gt();
    const auto* labels = gt.labels_for(frame.index);
    if (!labels) return out;
    auto push = [&](int box_id) {
      auto m = gt.mask(frame.index, box_id);
      if (count_set(m) == 0) return;
      out.push_back({frame.index, std::move(m), static_cast<int>(out.size()), kScore});
    };
    switch (prompt.kind) {
      case SegmentPrompt::Kind::Phrase:
        for (const auto& b : gt.boxes)
          if (detail::find_word(prompt.phrase, b.label)) push(b.id);
        break;
      case SegmentPrompt::Kind::Point: {
        const int u = static_cast<int>(std::lround(prompt.point[0]));
        const int v = static_cast<int>(std::lround(prompt.point[1]));
        if (labels->contains(u, v) && labels->at(u, v) >= 0) push(gt.boxes[labels->at(u, v)].id);
        break;
      }
      case SegmentPrompt::Kind::Box: {
        std::vector<std::size_t> inside(gt.boxes.size(), 0);
        for (int v = std::max(prompt.box.y0, 0); v <= std::min(prompt.box.y1, labels->height() - 1); ++v)
          for (int u = std::max(prompt.box.x0, 0); u <= std::min(prompt.box.x1, labels->width() - 1); ++u)
            if (labels->at(u, v) >= 0) ++inside[static_cast<std::size_t>(labels->at(u, v))];
        const auto it = std::max_element(inside.begin(), inside.end());
        if (it != inside.end() && *it > 0) push(gt.boxes[static_cast<std::size_t>(it - inside.begin())].id);
        break;
      }
    }
    return out;
  }
  bool wants_images() const override { return false; }

 private:
  std::shared_ptr<const OracleWorld> w_;
};

class OracleChat : public ChatModel {
 public:
  explicit OracleChat(std::shared_ptr<const OracleWorld> w) : w_(std::move(w)) {}

  std::string complete(const ChatRequest& req) override {
    const json& h = req.hints;
    try {
      switch (req.task) {
        case ChatTask::QueryParse: return parse(h.at("query").get<std::string>());
        case ChatTask::SceneFilter: return scene_filter(h.at("frame").get<int>(), h.at("scene_feature").get<std::string>());
        case ChatTask::Score: return score(h.at("frame").get<int>(), h.at("query").get<std::string>());
        case ChatTask::Marker: return marker(h.at("frame").get<int>(), h.at("query").get<std::string>(), h.at("instances"));
        case ChatTask::FrameExpansion:
          return expansion(h.at("candidate_frame").get<int>(), h.at("query").get<std::string>());
        case ChatTask::Planner: break;
      }
    } catch (const json::exception& e) {
      throw Error(Errc::ChatUnavailable, std::string("oracle chat got incomplete hints: ") + e.what());
    }
    throw Error(Errc::ChatUnavailable, "the oracle chat model cannot act as a planner");
  }
  bool wants_images() const override { return false; }

 private:
  std::string parse(const std::string& query) const {
    const auto labels = w_->mentioned_labels(query);
    if (labels.empty()) return "I could not find any known object class in this query.";
    ParsedQuery q;
    q.target_class = labels.front();
    for (std::size_t i = 1; i < labels.size(); ++i) q.conditions.push_back("relative to the " + labels[i]);
    std::string feature = "The scene contains ";
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (i) feature += i + 1 == labels.size() ? " and " : ", ";
      feature += "a " + labels[i];
    }
    q.scene_feature = feature + ".";
    return "```json\n" + q.to_json().dump(2) + "\n```";
  }

  std::string scene_filter(int frame, const std::string& feature) const {
    const auto labels = w_->mentioned_labels(feature);
    for (const auto& l : labels)
      if (w_->label_visible_pixels(frame, l) < kOracleVisiblePixels) return "no";
    return labels.empty() ? "no" : "yes";
  }

  std::string score(int frame, const std::string& query) const {
    const auto id = w_->target_id(query);
    const std::size_t area = id ? w_->gt().visible_pixels(frame, *id) : 0;
    if (area == 0) return R"({"is_present": false, "score": 0.0})";
    const double s = std::clamp(5.0 * static_cast<double>(area) / static_cast<double>(w_->max_visible_pixels(*id)), 0.1, 5.0);
    std::ostringstream os;
    os.precision(4);
    os << std::fixed << R"({"is_present": true, "score": )" << s << "}";
    return os.str();
  }

  std::string marker(int frame, const std::string& query, const json& instances) const {
    const auto id = w_->target_id(query);
    if (!id) return "ID: -1";
    const auto gt_mask = w_->gt().mask(frame, *id);
    int best = -1;
    double best_iou = 0.0;
    for (const auto& inst : instances) {
      const double iou = mask_iou(mask_from_rle(inst.at("rle")), gt_mask);
      if (iou > best_iou) {
        best_iou = iou;
        best = inst.at("id").get<int>();
      }
    }
    return "ID: " + std::to_string(best_iou >= 0.5 ? best : -1);
  }

  std::string expansion(int frame, const std::string& query) const {
    const auto id = w_->target_id(query);
    return id && w_->gt().visible_pixels(frame, *id) >= kOracleVisiblePixels ? "YES" : "NO";
  }

  std::shared_ptr<const OracleWorld> w_;
};

inline Toolkit make_oracle_toolkit(GroundTruth gt) {
  auto w = std::make_shared<const OracleWorld>(std::move(gt));
  return {std::make_shared<OracleChat>(w), std::make_shared<OracleDetector>(w), std::make_shared<OracleSegmenter>(w)};
}

}  // namespace vg
