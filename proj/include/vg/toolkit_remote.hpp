#pragma once

// HTTP/JSON clients for externally hosted models.
//
//   chat       POST {model, messages: [{role, content: [{type: "text", text} |
//                    {type: "image", data: <base64>}]}]}          -> {text}
//   detector   POST {image: <base64>, phrase, threshold}         -> {detections: [{box: [x0, y0, x1, y1], score}]}
//   segmenter  POST {image: <base64>, prompt: {phrase} | {point: [u, v]} | {box: [x0, y0, x1, y1]}, threshold}
//                                                                -> {masks: [{rle | bitmap, score}]}
//
// Transport failures and 5xx replies raise the capability's *Unavailable
// code, timeouts raise Timeout, and 4xx replies raise ProtocolError carrying
// the HTTP status.

// Eigen must precede httplib: <resolv.h> defines a `_res` macro that
// collides with Eigen parameter names.
#include "vg/semantic.hpp"

#include <httplib.h>

#include <memory>
#include <string>

namespace vg {

struct Endpoint {
  std::string base;  // scheme://host[:port]
  std::string path = "/";
  double timeout_s = 60.0;

  static Endpoint parse(const std::string& url, double timeout_s = 60.0) {
    const auto scheme = url.find("://");
    if (scheme == std::string::npos) throw Error(Errc::InvalidConfig, "endpoint URL needs a scheme: " + url);
    const auto slash = url.find('/', scheme + 3);
    Endpoint e;
    e.base = url.substr(0, slash);
    e.path = slash == std::string::npos ? "/" : url.substr(slash);
    e.timeout_s = timeout_s;
    return e;
  }
};

namespace detail {

inline json post_json(const Endpoint& ep, const json& body, Errc unavailable) {
  httplib::Client cli(ep.base);
  const auto secs = static_cast<time_t>(ep.timeout_s);
  const auto usecs = static_cast<time_t>((ep.timeout_s - static_cast<double>(secs)) * 1e6);
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);
  auto res = cli.Post(ep.path, body.dump(), "application/json");
  if (!res) {
    const auto err = res.error();
    if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read)
      throw Error(Errc::Timeout, ep.base + ep.path + ": " + httplib::to_string(err));
    throw Error(unavailable, ep.base + ep.path + ": " + httplib::to_string(err));
  }
  if (res->status >= 500) throw Error(unavailable, ep.base + ep.path + " replied " + std::to_string(res->status));
  if (res->status < 200 || res->status >= 300)
    throw Error(Errc::ProtocolError, ep.base + ep.path + " replied " + std::to_string(res->status))
        .with_status(res->status);
  try {
    return json::parse(res->body);
  } catch (const json::parse_error& e) {
    throw Error(Errc::ProtocolError, std::string("reply is not JSON: ") + e.what()).with_status(res->status);
  }
}

}  // namespace detail

inline json chat_body(const std::string& model, const ChatRequest& req) {
  json messages = json::array();
  for (const auto& t : req.turns) {
    json content = json::array();
    for (const auto& p : t.parts)
      content.push_back(p.is_image ? json{{"type", "image"}, {"data", base64_encode(p.data)}}
                                   : json{{"type", "text"}, {"text", p.data}});
    messages.push_back({{"role", to_string(t.role)}, {"content", content}});
  }
  return {{"model", model}, {"messages", messages}};
}

class RemoteChat : public ChatModel {
 public:
  RemoteChat(Endpoint ep, std::string model = "default") : ep_(std::move(ep)), model_(std::move(model)) {}
  std::string complete(const ChatRequest& req) override {
    const json r = detail::post_json(ep_, chat_body(model_, req), Errc::ChatUnavailable);
    if (!r.contains("text") || !r["text"].is_string()) throw Error(Errc::ProtocolError, "chat reply lacks 'text'");
    return r["text"].get<std::string>();
  }

 private:
  Endpoint ep_;
  std::string model_;
};

class RemoteDetector : public Detector {
 public:
  RemoteDetector(Endpoint ep, Intrinsics k) : ep_(std::move(ep)), k_(k) {}
  std::vector<Detection> detect(const SceneFrame& frame, const std::string& phrase, double threshold) override {
    const json body = {{"image", base64_encode(frame.image_bytes())}, {"phrase", phrase}, {"threshold", threshold}};
    return detections_from_json(detail::post_json(ep_, body, Errc::DetectorUnavailable), frame.index, phrase,
                                k_.width, k_.height);
  }

 private:
  Endpoint ep_;
  Intrinsics k_;
};

class RemoteSegmenter : public Segmenter {
 public:
  RemoteSegmenter(Endpoint ep, Intrinsics k) : ep_(std::move(ep)), k_(k) {}
  std::vector<SegmentMask> segment(const SceneFrame& frame, const SegmentPrompt& prompt, double threshold) override {
    const json body = {{"image", base64_encode(frame.image_bytes())}, {"prompt", prompt.to_json()}, {"threshold", threshold}};
    return masks_from_json(detail::post_json(ep_, body, Errc::SegmenterUnavailable), frame.index, k_.width,
                           k_.height);
  }

 private:
  Endpoint ep_;
  Intrinsics k_;
};

}  // namespace vg
