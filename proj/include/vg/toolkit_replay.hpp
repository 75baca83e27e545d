#pragma once

// Canned-response backends. A replay log is a JSON array of entries
//
//   {"request_digest": "<16 hex>" | "*", "match": {...}, "repeat": false,
//    "response": {...}}
//
// A request is served by the first unused entry whose digest equals the
// digest of its descriptor; failing that, by the first unused "*" entry whose
// optional `match` object is a subset of the descriptor. Entries are consumed
// once unless `repeat` is true. A request nothing can serve raises
// ReplayExhausted. Responses use the remote protocol's reply shapes.

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>

#include "vg/semantic.hpp"

namespace vg {

namespace detail {

// True iff every member of `pattern` appears in `value` with an equal (or,
// for objects, recursively matching) value.
inline bool json_subset(const json& pattern, const json& value) {
  if (!pattern.is_object()) return pattern == value;
  if (!value.is_object()) return false;
  for (auto it = pattern.begin(); it != pattern.end(); ++it) {
    auto v = value.find(it.key());
    if (v == value.end() || !json_subset(it.value(), *v)) return false;
  }
  return true;
}

}  // namespace detail

class ReplayLog {
 public:
  struct Entry {
    std::string digest;
    json match;
    json response;
    bool repeat = false;
    bool used = false;
  };

  ReplayLog() = default;
  explicit ReplayLog(const json& entries) {
    if (!entries.is_array()) throw Error(Errc::InvalidConfig, "replay log must be a JSON array");
    for (const auto& e : entries) {
      try {
        entries_.push_back({e.at("request_digest").get<std::string>(), e.value("match", json::object()),
                            e.at("response"), e.value("repeat", false)});
      } catch (const json::exception& ex) {
        throw Error(Errc::InvalidConfig, std::string("bad replay entry: ") + ex.what());
      }
    }
  }

  static std::shared_ptr<ReplayLog> load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error(Errc::IoFailure, "cannot open replay log " + path.string());
    try {
      return std::make_shared<ReplayLog>(json::parse(is));
    } catch (const json::parse_error& e) {
      throw Error(Errc::InvalidConfig, "replay log " + path.string() + ": " + e.what());
    }
  }

  json take(const json& descriptor) {
    const std::string digest = request_digest(descriptor);
    std::lock_guard lock(mu_);
    for (auto& e : entries_)
      if (!e.used && e.digest == digest) return consume(e);
    for (auto& e : entries_)
      if (!e.used && e.digest == "*" && detail::json_subset(e.match, descriptor)) return consume(e);
    throw Error(Errc::ReplayExhausted, "no replay entry for " + digest + " " + descriptor.dump().substr(0, 200));
  }

  std::size_t remaining() const {
    std::lock_guard lock(mu_);
    return static_cast<std::size_t>(std::count_if(entries_.begin(), entries_.end(),
                                                  [](const Entry& e) { return !e.used && !e.repeat; }));
  }

 private:
  static json consume(Entry& e) {
    if (!e.repeat) e.used = true;
    return e.response;
  }

  mutable std::mutex mu_;
  std::vector<Entry> entries_;
};

class ReplayChat : public ChatModel {
 public:
  explicit ReplayChat(std::shared_ptr<ReplayLog> log) : log_(std::move(log)) {}
  std::string complete(const ChatRequest& req) override {
    const json r = log_->take(describe(req));
    if (!r.contains("text") || !r["text"].is_string())
      throw Error(Errc::ProtocolError, "replayed chat response lacks 'text'");
    return r["text"].get<std::string>();
  }
  bool wants_images() const override { return false; }

 private:
  std::shared_ptr<ReplayLog> log_;
};

class ReplayDetector : public Detector {
 public:
  ReplayDetector(std::shared_ptr<ReplayLog> log, Intrinsics k) : log_(std::move(log)), k_(k) {}
  std::vector<Detection> detect(const SceneFrame& frame, const std::string& phrase, double threshold) override {
    return detections_from_json(log_->take(describe_detect(frame.index, phrase, threshold)), frame.index, phrase,
                                k_.width, k_.height);
  }
  bool wants_images() const override { return false; }

 private:
  std::shared_ptr<ReplayLog> log_;
  Intrinsics k_;
};

class ReplaySegmenter : public Segmenter {
 public:
  ReplaySegmenter(std::shared_ptr<ReplayLog> log, Intrinsics k) : log_(std::move(log)), k_(k) {}
  std::vector<SegmentMask> segment(const SceneFrame& frame, const SegmentPrompt& prompt, double threshold) override {
    return masks_from_json(log_->take(describe_segment(frame.index, prompt, threshold)), frame.index, k_.width,
                           k_.height);
  }
  bool wants_images() const override { return false; }

 private:
  std::shared_ptr<ReplayLog> log_;
  Intrinsics k_;
};

inline Toolkit make_replay_toolkit(std::shared_ptr<ReplayLog> log, const Intrinsics& k) {
  return {std::make_shared<ReplayChat>(log), std::make_shared<ReplayDetector>(log, k),
          std::make_shared<ReplaySegmenter>(log, k)};
}

// Records every exchange of a wrapped toolkit as exact-digest replay entries.
class Recorder {
 public:
  void add(const json& descriptor, json response) {
    std::lock_guard lock(mu_);
    entries_.push_back({{"request_digest", request_digest(descriptor)},
                        {"kind", descriptor.at("kind")},
                        {"response", std::move(response)}});
  }
  json entries() const {
    std::lock_guard lock(mu_);
    return entries_;
  }
  void save(const std::filesystem::path& path) const {
    std::ofstream os(path);
    os << entries().dump(1) << "\n";
    if (!os) throw Error(Errc::IoFailure, "cannot write " + path.string());
  }

 private:
  mutable std::mutex mu_;
  json entries_ = json::array();
};

class RecordingChat : public ChatModel {
 public:
  RecordingChat(std::shared_ptr<ChatModel> inner, std::shared_ptr<Recorder> rec)
      : inner_(std::move(inner)), rec_(std::move(rec)) {}
  std::string complete(const ChatRequest& req) override {
    std::string text = inner_->complete(req);
    rec_->add(describe(req), {{"text", text}});
    return text;
  }
  bool wants_images() const override { return inner_->wants_images(); }

 private:
  std::shared_ptr<ChatModel> inner_;
  std::shared_ptr<Recorder> rec_;
};

class RecordingDetector : public Detector {
 public:
  RecordingDetector(std::shared_ptr<Detector> inner, std::shared_ptr<Recorder> rec)
      : inner_(std::move(inner)), rec_(std::move(rec)) {}
  std::vector<Detection> detect(const SceneFrame& frame, const std::string& phrase, double threshold) override {
    auto out = inner_->detect(frame, phrase, threshold);
    rec_->add(describe_detect(frame.index, phrase, threshold), detections_to_json(out));
    return out;
  }
  bool wants_images() const override { return inner_->wants_images(); }

 private:
  std::shared_ptr<Detector> inner_;
  std::shared_ptr<Recorder> rec_;
};

class RecordingSegmenter : public Segmenter {
 public:
  RecordingSegmenter(std::shared_ptr<Segmenter> inner, std::shared_ptr<Recorder> rec)
      : inner_(std::move(inner)), rec_(std::move(rec)) {}
  std::vector<SegmentMask> segment(const SceneFrame& frame, const SegmentPrompt& prompt, double threshold) override {
    auto out = inner_->segment(frame, prompt, threshold);
    rec_->add(describe_segment(frame.index, prompt, threshold), masks_to_json(out));
    return out;
  }
  bool wants_images() const override { return inner_->wants_images(); }

 private:
  std::shared_ptr<Segmenter> inner_;
  std::shared_ptr<Recorder> rec_;
};

inline Toolkit record(const Toolkit& tk, std::shared_ptr<Recorder> rec) {
  return {std::make_shared<RecordingChat>(tk.chat, rec), std::make_shared<RecordingDetector>(tk.detector, rec),
          std::make_shared<RecordingSegmenter>(tk.segmenter, rec)};
}

// Sends each chat task to its own model, falling back to a default.
class RoutedChat : public ChatModel {
 public:
  RoutedChat(std::shared_ptr<ChatModel> fallback, std::map<ChatTask, std::shared_ptr<ChatModel>> routes)
      : fallback_(std::move(fallback)), routes_(std::move(routes)) {}
  std::string complete(const ChatRequest& req) override {
    auto it = routes_.find(req.task);
    return (it == routes_.end() ? fallback_ : it->second)->complete(req);
  }
  bool wants_images() const override {
    if (fallback_->wants_images()) return true;
    return std::any_of(routes_.begin(), routes_.end(), [](const auto& r) { return r.second->wants_images(); });
  }

 private:
  std::shared_ptr<ChatModel> fallback_;
  std::map<ChatTask, std::shared_ptr<ChatModel>> routes_;
};

}  // namespace vg
