#pragma once

// Semantic capabilities (chat model, open-vocabulary detector, promptable
// segmenter) behind small interfaces, and the query / filter / score / mark
// operations built on them.

#include <nlohmann/json.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <memory>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "vg/assets.hpp"
#include "vg/codec.hpp"
#include "vg/error.hpp"
#include "vg/grid.hpp"
#include "vg/parallel.hpp"
#include "vg/scene.hpp"

namespace vg {

using nlohmann::json;

// ---- Domain types ----------------------------------------------------------

struct ParsedQuery {
  std::string target_class;
  std::vector<std::string> attributes;
  std::vector<std::string> conditions;
  std::string scene_feature;

  json to_json() const {
    return {{"target_class", target_class},
            {"attributes", attributes},
            {"conditions", conditions},
            {"scene_feature", scene_feature}};
  }

  static ParsedQuery from_json(const json& j) {
    auto fail = [](const std::string& why) { return Error(Errc::MalformedToolOutput, "parsed query " + why); };
    if (!j.is_object()) throw fail("is not a JSON object");
    for (const char* key : {"target_class", "attributes", "conditions", "scene_feature"})
      if (!j.contains(key)) throw fail(std::string("lacks key '") + key + "'");
    ParsedQuery q;
    if (!j["target_class"].is_string() || j["target_class"].get<std::string>().empty())
      throw fail("needs a non-empty target_class string");
    q.target_class = j["target_class"].get<std::string>();
    for (const char* key : {"attributes", "conditions"}) {
      if (!j[key].is_array()) throw fail(std::string(key) + " must be a list");
      auto& dst = std::string(key) == "attributes" ? q.attributes : q.conditions;
      for (const auto& s : j[key]) {
        if (!s.is_string()) throw fail(std::string(key) + " must hold strings");
        dst.push_back(s.get<std::string>());
      }
    }
    if (!j["scene_feature"].is_string()) throw fail("scene_feature must be a string");
    q.scene_feature = j["scene_feature"].get<std::string>();
    return q;
  }
};

struct Detection {
  int frame_index = 0;
  PixelRect box;
  double score = 0.0;
  std::string phrase;
};

struct SegmentMask {
  int frame_index = 0;
  Bitmap bitmap;
  int instance_id = 0;
  double score = 0.0;
};

enum class Role { System, User, Assistant };

inline const char* to_string(Role r) {
  switch (r) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "user";
}

struct ChatPart {
  bool is_image = false;
  std::string data;  // text, or encoded image bytes

  static ChatPart text(std::string s) { return {false, std::move(s)}; }
  static ChatPart image(std::string bytes) { return {true, std::move(bytes)}; }
};

struct ChatTurn {
  Role role = Role::User;
  std::vector<ChatPart> parts;
};

enum class ChatTask { QueryParse, SceneFilter, Score, Marker, FrameExpansion, Planner };

inline const char* to_string(ChatTask t) {
  switch (t) {
    case ChatTask::QueryParse: return "query_parse";
    case ChatTask::SceneFilter: return "scene_filter";
    case ChatTask::Score: return "vlm_score";
    case ChatTask::Marker: return "segmentation_marker";
    case ChatTask::FrameExpansion: return "frame_expansion";
    case ChatTask::Planner: return "planner";
  }
  return "unknown";
}

// `hints` carries the structured facts behind the prompt (frame index,
// query, candidate masks). Remote models ignore it; the oracle answers from
// it and replay logs key on it.
struct ChatRequest {
  ChatTask task = ChatTask::Planner;
  std::vector<ChatTurn> turns;
  json hints = json::object();
};

struct SegmentPrompt {
  enum class Kind { Phrase, Point, Box } kind = Kind::Phrase;
  std::string phrase;
  std::array<double, 2> point{0, 0};
  PixelRect box;

  static SegmentPrompt by_phrase(std::string p) {
    SegmentPrompt s;
    s.phrase = std::move(p);
    return s;
  }
  static SegmentPrompt by_point(double u, double v) {
    SegmentPrompt s;
    s.kind = Kind::Point;
    s.point = {u, v};
    return s;
  }
  static SegmentPrompt by_box(PixelRect r) {
    SegmentPrompt s;
    s.kind = Kind::Box;
    s.box = r;
    return s;
  }

  json to_json() const {
    switch (kind) {
      case Kind::Phrase: return {{"phrase", phrase}};
      case Kind::Point: return {{"point", {point[0], point[1]}}};
      case Kind::Box: return {{"box", {box.x0, box.y0, box.x1, box.y1}}};
    }
    return json::object();
  }
};

// ---- Capability interfaces -------------------------------------------------
// Implementations must be safe to call from several threads at once.

class ChatModel {
 public:
  virtual ~ChatModel() = default;
  virtual std::string complete(const ChatRequest& req) = 0;
  // Models that never look at pixels let callers skip image encoding.
  virtual bool wants_images() const { return true; }
};

class Detector {
 public:
  virtual ~Detector() = default;
  virtual std::vector<Detection> detect(const SceneFrame& frame, const std::string& phrase,
                                        double threshold) = 0;
  virtual bool wants_images() const { return true; }
};

class Segmenter {
 public:
  virtual ~Segmenter() = default;
  virtual std::vector<SegmentMask> segment(const SceneFrame& frame, const SegmentPrompt& prompt,
                                           double threshold) = 0;
  virtual bool wants_images() const { return true; }
};

struct Toolkit {
  std::shared_ptr<ChatModel> chat;
  std::shared_ptr<Detector> detector;
  std::shared_ptr<Segmenter> segmenter;

  void check() const {
    if (!chat || !detector || !segmenter)
      throw Error(Errc::InvalidConfig, "toolkit needs a chat model, a detector and a segmenter");
  }
};

// Canonical request descriptors; replay logs are keyed by their digest.
inline json describe(const ChatRequest& r) {
  return {{"kind", "chat"}, {"task", to_string(r.task)}, {"hints", r.hints}};
}
inline json describe_detect(int frame, const std::string& phrase, double threshold) {
  return {{"kind", "detect"}, {"frame", frame}, {"phrase", phrase}, {"threshold", threshold}};
}
inline json describe_segment(int frame, const SegmentPrompt& p, double threshold) {
  return {{"kind", "segment"}, {"frame", frame}, {"prompt", p.to_json()}, {"threshold", threshold}};
}
inline std::string request_digest(const json& descriptor) { return hex64(fnv1a64(descriptor.dump())); }

// ---- Wire shapes shared by the remote protocol and replay logs -------------

inline json detections_to_json(const std::vector<Detection>& ds) {
  json arr = json::array();
  for (const auto& d : ds) arr.push_back({{"box", {d.box.x0, d.box.y0, d.box.x1, d.box.y1}}, {"score", d.score}});
  return {{"detections", arr}};
}

inline std::vector<Detection> detections_from_json(const json& j, int frame, const std::string& phrase,
                                                   int width, int height) {
  std::vector<Detection> out;
  try {
    for (const auto& d : j.at("detections")) {
      Detection det;
      det.frame_index = frame;
      det.phrase = d.value("phrase", phrase);
      det.score = d.at("score").get<double>();
      if (!(det.score >= 0.0 && det.score <= 1.0)) throw Error(Errc::ProtocolError, "detection score outside [0, 1]");
      const auto& b = d.at("box");
      auto clamp = [](double x, int hi) { return std::clamp(static_cast<int>(std::lround(x)), 0, hi - 1); };
      det.box = {clamp(b.at(0).get<double>(), width), clamp(b.at(1).get<double>(), height),
                 clamp(b.at(2).get<double>(), width), clamp(b.at(3).get<double>(), height)};
      out.push_back(std::move(det));
    }
  } catch (const json::exception& e) {
    throw Error(Errc::ProtocolError, std::string("bad detector reply: ") + e.what());
  }
  return out;
}

inline json masks_to_json(const std::vector<SegmentMask>& ms) {
  json arr = json::array();
  for (const auto& m : ms) arr.push_back({{"rle", mask_to_rle(m.bitmap)}, {"score", m.score}});
  return {{"masks", arr}};
}

inline std::vector<SegmentMask> masks_from_json(const json& j, int frame, int width, int height) {
  std::vector<SegmentMask> out;
  try {
    int id = 0;
    for (const auto& m : j.at("masks")) {
      SegmentMask sm;
      sm.frame_index = frame;
      sm.instance_id = id++;
      sm.score = m.value("score", 1.0);
      if (m.contains("rle"))
        sm.bitmap = mask_from_rle(m["rle"]);
      else if (m.contains("bitmap"))
        sm.bitmap = mask_from_rows(m["bitmap"]);
      else
        throw Error(Errc::ProtocolError, "mask has neither rle nor bitmap");
      if (!sm.bitmap.same_shape(width, height))
        throw Error(Errc::ProtocolError, "mask size differs from the frame size");
      out.push_back(std::move(sm));
    }
  } catch (const json::exception& e) {
    throw Error(Errc::ProtocolError, std::string("bad segmenter reply: ") + e.what());
  }
  return out;
}

// ---- Text helpers ----------------------------------------------------------

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

inline std::string upper(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::toupper(c); });
  return s;
}

inline std::string join(const std::vector<std::string>& xs, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? sep : "") + xs[i];
  return out;
}

// Body of the first ``` fenced block (an info string such as "json" after
// the opening fence is dropped).
inline std::optional<std::string> first_fenced_block(const std::string& text) {
  const auto open = text.find("```");
  if (open == std::string::npos) return std::nullopt;
  auto body = open + 3;
  const auto nl = text.find('\n', body);
  const auto close = text.find("```", body);
  if (close == std::string::npos) return std::nullopt;
  if (nl != std::string::npos && nl < close) {
    const auto info = trim(std::string_view(text).substr(body, nl - body));
    if (!info.empty() && info.front() != '{') body = nl + 1;
  }
  return text.substr(body, close - body);
}

// ---- Annotation ------------------------------------------------------------

inline cv::Scalar palette(int i) {
  static const cv::Scalar kColors[] = {{0, 0, 255},   {0, 200, 0},   {255, 0, 0},  {0, 200, 255},
                                       {255, 0, 200}, {200, 200, 0}, {0, 128, 255}, {128, 0, 255}};
  return kColors[static_cast<std::size_t>(i) % std::size(kColors)];
}

// Boxes and numeric ids over the frame, as shown to the marker and verifier.
inline cv::Mat annotate(const RgbImage& image, const std::vector<SegmentMask>& masks) {
  cv::Mat m = to_mat(image);
  for (const auto& sm : masks) {
    const auto r = bounding_rect(sm.bitmap);
    if (r.empty()) continue;
    const auto c = palette(sm.instance_id);
    cv::rectangle(m, {r.x0, r.y0}, {r.x1, r.y1}, c, 2);
    const std::string label = std::to_string(sm.instance_id);
    cv::putText(m, label, {r.x0 + 2, std::max(r.y0 + 14, 14)}, cv::FONT_HERSHEY_SIMPLEX, 0.5, c, 2);
  }
  return m;
}

// ---- Operations ------------------------------------------------------------

inline ChatTurn system_turn(const std::string& asset) {
  return {Role::System, {ChatPart::text(load_asset(asset))}};
}

inline ParsedQuery parse_query(const std::string& query, ChatModel& chat) {
  if (trim(query).empty()) throw Error(Errc::ArgumentValidation, "query must not be empty");
  ChatRequest req;
  req.task = ChatTask::QueryParse;
  req.turns.push_back(system_turn("prompts/query_parse.md"));
  req.turns.push_back(
      {Role::User, {ChatPart::text(fill_template(load_asset("prompts/user/query_parse.md"), {{"query", query}}))}});
  req.hints = {{"query", query}};
  const std::string reply = chat.complete(req);
  const auto block = first_fenced_block(reply);
  if (!block) throw Error(Errc::MalformedToolOutput, "query parse reply has no fenced JSON block");
  json j;
  try {
    j = json::parse(*block);
  } catch (const json::exception& e) {
    throw Error(Errc::MalformedToolOutput, std::string("query parse block is not JSON: ") + e.what());
  }
  return ParsedQuery::from_json(j);
}

inline void check_threshold(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw Error(Errc::ArgumentValidation, "threshold must lie in [0, 1]");
}

// Frames (ascending) where the detector finds target_class at >= threshold.
inline std::vector<int> object_filter(const Scene& scene, const std::vector<int>& frames,
                                      const std::string& target_class, double threshold, Detector& detector,
                                      int jobs = 1) {
  check_threshold(threshold);
  std::vector<char> keep(frames.size(), 0);
  parallel_for(frames.size(), jobs, [&](std::size_t i) {
    const auto dets = detector.detect(scene.at(frames[i]), target_class, threshold);
    keep[i] = std::any_of(dets.begin(), dets.end(), [&](const Detection& d) { return d.score >= threshold; });
  });
  std::vector<int> out;
  for (std::size_t i = 0; i < frames.size(); ++i)
    if (keep[i]) out.push_back(frames[i]);
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<int> vlm_filter(const Scene& scene, const std::vector<int>& frames,
                                   const std::string& scene_feature, ChatModel& chat, int jobs = 1) {
  const std::string system = load_asset("prompts/scene_filter.md");
  const std::string user = fill_template(load_asset("prompts/user/scene_filter.md"), {{"scene_feature", scene_feature}});
  std::vector<char> keep(frames.size(), 0);
  parallel_for(frames.size(), jobs, [&](std::size_t i) {
    const auto& f = scene.at(frames[i]);
    ChatRequest req;
    req.task = ChatTask::SceneFilter;
    req.turns.push_back({Role::System, {ChatPart::text(system)}});
    ChatTurn turn{Role::User, {ChatPart::text(user)}};
    if (chat.wants_images()) turn.parts.push_back(ChatPart::image(f.image_bytes()));
    req.turns.push_back(std::move(turn));
    req.hints = {{"frame", f.index}, {"scene_feature", scene_feature}};
    keep[i] = lower(trim(chat.complete(req))).rfind("yes", 0) == 0;
  });
  std::vector<int> out;
  for (std::size_t i = 0; i < frames.size(); ++i)
    if (keep[i]) out.push_back(frames[i]);
  return out;
}

struct FrameScore {
  int frame_index = 0;
  bool is_present = false;
  double score = 0.0;
  std::string note;  // "", "coerced", "clamped" or "malformed: ..."

  json to_json() const {
    json j = {{"frame", frame_index}, {"is_present", is_present}, {"score", score}};
    if (!note.empty()) j["note"] = note;
    return j;
  }
};

inline FrameScore parse_score_reply(int frame, const std::string& reply) {
  FrameScore s;
  s.frame_index = frame;
  json j;
  std::string body = trim(reply);
  if (auto block = first_fenced_block(body)) body = trim(*block);
  try {
    j = json::parse(body);
  } catch (const json::exception&) {
    s.note = "malformed: not JSON";
    return s;
  }
  if (!j.is_object() || !j.contains("is_present") || !j["is_present"].is_boolean() || !j.contains("score") ||
      !j["score"].is_number()) {
    s.note = "malformed: needs boolean is_present and numeric score";
    return s;
  }
  s.is_present = j["is_present"].get<bool>();
  const double raw = j["score"].get<double>();
  if (!std::isfinite(raw)) {
    s.note = "malformed: non-finite score";
    s.is_present = false;
    return s;
  }
  s.score = std::clamp(raw, 0.0, 5.0);
  if (s.score != raw) s.note = "clamped";
  if (!s.is_present && s.score != 0.0) {
    s.score = 0.0;
    s.note = "coerced";
  }
  return s;
}

inline std::vector<FrameScore> vlm_score(const Scene& scene, const std::vector<int>& frames,
                                         const std::string& query, const ParsedQuery& parsed, ChatModel& chat,
                                         int jobs = 1) {
  const std::string system = load_asset("prompts/vlm_score.md");
  const std::string user = fill_template(load_asset("prompts/user/vlm_score.md"),
                                         {{"query", query},
                                          {"target_class", parsed.target_class},
                                          {"attributes", json(parsed.attributes).dump()},
                                          {"conditions", json(parsed.conditions).dump()}});
  std::vector<FrameScore> out(frames.size());
  parallel_for(frames.size(), jobs, [&](std::size_t i) {
    const auto& f = scene.at(frames[i]);
    ChatRequest req;
    req.task = ChatTask::Score;
    req.turns.push_back({Role::System, {ChatPart::text(system)}});
    ChatTurn turn{Role::User, {ChatPart::text(user)}};
    if (chat.wants_images()) turn.parts.push_back(ChatPart::image(f.image_bytes()));
    req.turns.push_back(std::move(turn));
    req.hints = {{"frame", f.index}, {"query", query}, {"target_class", parsed.target_class}};
    out[i] = parse_score_reply(f.index, chat.complete(req));
  });
  return out;
}

// Descending score, ties by ascending frame index.
inline std::vector<int> rank(std::vector<FrameScore> scores) {
  std::sort(scores.begin(), scores.end(), [](const FrameScore& a, const FrameScore& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.frame_index < b.frame_index;
  });
  std::vector<int> out;
  for (const auto& s : scores) out.push_back(s.frame_index);
  return out;
}

// Sorts by descending area (stable) and renumbers 0..n-1.
inline void assign_ids_by_area(std::vector<SegmentMask>& masks) {
  std::vector<std::size_t> area(masks.size());
  for (std::size_t i = 0; i < masks.size(); ++i) area[i] = count_set(masks[i].bitmap);
  std::vector<std::size_t> order(masks.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return area[a] > area[b]; });
  std::vector<SegmentMask> sorted;
  sorted.reserve(masks.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    sorted.push_back(std::move(masks[order[i]]));
    sorted.back().instance_id = static_cast<int>(i);
  }
  masks = std::move(sorted);
}

inline int parse_marker_reply(const std::string& reply) {
  static const std::regex kId(R"(ID\s*:\s*(-?\d+))", std::regex::icase);
  std::smatch m;
  if (!std::regex_search(reply, m, kId)) throw Error(Errc::MalformedToolOutput, "marker reply has no 'ID: <n>'");
  return std::stoi(m[1].str());
}

struct MarkResult {
  int instance_id = -1;
  std::vector<SegmentMask> masks;  // ids 0..n-1 by descending area
  bool chat_consulted = false;

  const SegmentMask& target() const { return masks.at(static_cast<std::size_t>(instance_id)); }
};

inline MarkResult mark_and_pick(const SceneFrame& frame, const std::string& query, const ParsedQuery& parsed,
                                Segmenter& segmenter, ChatModel& chat, double threshold) {
  MarkResult r;
  r.masks = segmenter.segment(frame, SegmentPrompt::by_phrase(parsed.target_class), threshold);
  r.masks.erase(std::remove_if(r.masks.begin(), r.masks.end(),
                               [](const SegmentMask& m) { return count_set(m.bitmap) == 0; }),
                r.masks.end());
  if (r.masks.empty())
    throw Error(Errc::NoInstances, "no '" + parsed.target_class + "' instances in frame " + std::to_string(frame.index));
  assign_ids_by_area(r.masks);
  if (r.masks.size() == 1) {
    r.instance_id = 0;
    return r;
  }
  ChatRequest req;
  req.task = ChatTask::Marker;
  req.turns.push_back(system_turn("prompts/segmentation_marker.md"));
  ChatTurn turn{Role::User,
                {ChatPart::text(fill_template(load_asset("prompts/user/segmentation_marker.md"),
                                              {{"query", query},
                                               {"target_class", parsed.target_class},
                                               {"attributes", json(parsed.attributes).dump()},
                                               {"conditions", json(parsed.conditions).dump()},
                                               {"instance_count", std::to_string(r.masks.size())}}))}};
  if (chat.wants_images()) turn.parts.push_back(ChatPart::image(encode_png(annotate(frame.color(), r.masks))));
  req.turns.push_back(std::move(turn));
  json inst = json::array();
  for (const auto& m : r.masks) inst.push_back({{"id", m.instance_id}, {"rle", mask_to_rle(m.bitmap)}});
  req.hints = {{"frame", frame.index}, {"query", query}, {"target_class", parsed.target_class}, {"instances", inst}};
  r.chat_consulted = true;
  const int id = parse_marker_reply(chat.complete(req));
  if (id == -1) throw Error(Errc::NoMatch, "marker found no matching instance in frame " + std::to_string(frame.index));
  if (id < 0 || id >= static_cast<int>(r.masks.size()))
    throw Error(Errc::MalformedToolOutput, "marker returned id " + std::to_string(id) + " outside 0.." +
                                               std::to_string(r.masks.size() - 1));
  r.instance_id = id;
  return r;
}

// One annotated context frame for the tracking verifier.
struct TrackContext {
  const SceneFrame* frame = nullptr;
  const Bitmap* mask = nullptr;
};

inline bool verify_tracking(const std::vector<TrackContext>& context, const SceneFrame& candidate,
                            const std::string& query, const ParsedQuery& parsed, ChatModel& chat) {
  if (context.empty()) throw Error(Errc::ArgumentValidation, "verifier needs at least one context frame");
  ChatRequest req;
  req.task = ChatTask::FrameExpansion;
  req.turns.push_back(system_turn("prompts/frame_expansion.md"));
  ChatTurn turn{Role::User,
                {ChatPart::text(fill_template(load_asset("prompts/user/frame_expansion.md"),
                                              {{"target_class", parsed.target_class},
                                               {"context_count", std::to_string(context.size())}}))}};
  json ctx = json::array();
  for (const auto& c : context) {
    ctx.push_back(c.frame->index);
    if (chat.wants_images()) {
      SegmentMask sm{c.frame->index, *c.mask, 0, 1.0};
      turn.parts.push_back(ChatPart::image(encode_png(annotate(c.frame->color(), {sm}))));
    }
  }
  turn.parts.push_back(ChatPart::text(load_asset("prompts/user/frame_expansion_candidate.md")));
  if (chat.wants_images()) turn.parts.push_back(ChatPart::image(candidate.image_bytes()));
  req.turns.push_back(std::move(turn));
  req.hints = {{"candidate_frame", candidate.index},
               {"context_frames", ctx},
               {"query", query},
               {"target_class", parsed.target_class}};
  return upper(trim(chat.complete(req))) == "YES";
}

}  // namespace vg
