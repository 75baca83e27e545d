#pragma once

// Think-Act runtime: pipeline configuration, the tool bindings behind the
// registry, the scripted executor of the 13-step pipeline with its fallbacks,
// and the planner-driven loop.

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "vg/action.hpp"
#include "vg/expansion.hpp"
#include "vg/ply.hpp"
#include "vg/semantic.hpp"
#include "vg/skill.hpp"

namespace vg {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- Configuration ---------------------------------------------------------

struct PipelineConfig {
  double threshold = 0.5;
  double fallback_threshold = 0.3;
  double eps = 0.4;
  int ste_cap = 32;
  int mge_cap = 32;
  int max_frames = 300;
  int context_frames = 4;
  int stride = 2;
  int jobs = 1;
  int max_steps = 30;
  SorConfig sor;
  DbscanConfig dbscan{0.10, 10, 0.01, 60000};

  void validate() const {
    auto bad = [](const std::string& why) { return Error(Errc::InvalidConfig, why); };
    if (!(threshold > 0 && threshold <= 1)) throw bad("threshold must lie in (0, 1]");
    if (!(fallback_threshold > 0 && fallback_threshold <= threshold))
      throw bad("fallback_threshold must lie in (0, threshold]");
    if (!(eps > 0)) throw bad("eps must be positive");
    if (ste_cap < 1 || mge_cap < 1 || max_frames < 1 || context_frames < 1 || stride < 1 || jobs < 1 || max_steps < 1)
      throw bad("caps, stride, jobs and max_steps must be >= 1");
    if (sor.k < 1 || !(sor.std_ratio > 0)) throw bad("sor.k and sor.std_ratio must be positive");
    if (!(dbscan.eps > 0) || dbscan.min_pts < 1 || dbscan.voxel < 0) throw bad("dbscan parameters out of range");
  }

  json to_json() const {
    return {{"threshold", threshold},
            {"fallback_threshold", fallback_threshold},
            {"eps", eps},
            {"ste_cap", ste_cap},
            {"mge_cap", mge_cap},
            {"max_frames", max_frames},
            {"context_frames", context_frames},
            {"stride", stride},
            {"jobs", jobs},
            {"max_steps", max_steps},
            {"sor", {{"k", sor.k}, {"std_ratio", sor.std_ratio}}},
            {"dbscan",
             {{"eps", dbscan.eps}, {"min_pts", dbscan.min_pts}, {"voxel", dbscan.voxel}, {"voxel_above", dbscan.voxel_above}}}};
  }

  // Overrides the fields present in `j`; unknown keys are rejected.
  static PipelineConfig from_json(const json& j) { return from_json(j, PipelineConfig()); }
  static PipelineConfig from_json(const json& j, PipelineConfig base) {
    if (!j.is_object()) throw Error(Errc::InvalidConfig, "config must be a JSON object");
    try {
      for (auto it = j.begin(); it != j.end(); ++it) {
        const auto& k = it.key();
        const auto& v = it.value();
        if (k == "threshold") base.threshold = v.get<double>();
        else if (k == "fallback_threshold") base.fallback_threshold = v.get<double>();
        else if (k == "eps") base.eps = v.get<double>();
        else if (k == "ste_cap") base.ste_cap = v.get<int>();
        else if (k == "mge_cap") base.mge_cap = v.get<int>();
        else if (k == "max_frames") base.max_frames = v.get<int>();
        else if (k == "context_frames") base.context_frames = v.get<int>();
        else if (k == "stride") base.stride = v.get<int>();
        else if (k == "jobs") base.jobs = v.get<int>();
        else if (k == "max_steps") base.max_steps = v.get<int>();
        else if (k == "sor") {
          for (auto s = v.begin(); s != v.end(); ++s) {
            if (s.key() == "k") base.sor.k = s.value().get<int>();
            else if (s.key() == "std_ratio") base.sor.std_ratio = s.value().get<double>();
            else throw Error(Errc::InvalidConfig, "unknown config key sor." + s.key());
          }
        } else if (k == "dbscan") {
          for (auto s = v.begin(); s != v.end(); ++s) {
            if (s.key() == "eps") base.dbscan.eps = s.value().get<double>();
            else if (s.key() == "min_pts") base.dbscan.min_pts = s.value().get<int>();
            else if (s.key() == "voxel") base.dbscan.voxel = s.value().get<double>();
            else if (s.key() == "voxel_above") base.dbscan.voxel_above = s.value().get<std::size_t>();
            else throw Error(Errc::InvalidConfig, "unknown config key dbscan." + s.key());
          }
        } else {
          throw Error(Errc::InvalidConfig, "unknown config key " + k);
        }
      }
    } catch (const json::exception& e) {
      throw Error(Errc::InvalidConfig, std::string("bad config value: ") + e.what());
    }
    base.validate();
    return base;
  }

  static PipelineConfig load(const fs::path& path) { return load(path, PipelineConfig()); }
  static PipelineConfig load(const fs::path& path, PipelineConfig base) {
    std::ifstream is(path);
    if (!is) throw Error(Errc::InvalidConfig, "cannot open config " + path.string());
    try {
      return from_json(json::parse(is), base);
    } catch (const json::parse_error& e) {
      throw Error(Errc::InvalidConfig, "config " + path.string() + ": " + e.what());
    }
  }
};

// ---- Trace -----------------------------------------------------------------

struct TraceStep {
  int step = 0;
  std::string thought;
  AgentAction action;
  std::string observation;
  std::optional<Errc> error;
  json effective_config = json::object();
  json detail = json::object();

  json to_json() const {
    json j = {{"step", step},
              {"thought", thought},
              {"action", render_action(action)},
              {"call", action_to_json(action)},
              {"observation", observation},
              {"status", error ? "error" : "ok"},
              {"effective_config", effective_config}};
    if (error) j["error"] = std::string(to_string(*error));
    if (!detail.empty()) j["detail"] = detail;
    return j;
  }
};

struct AgentTrace {
  std::vector<TraceStep> steps;

  bool finished() const { return !steps.empty() && std::holds_alternative<Finish>(steps.back().action); }
  bool aborted() const { return !steps.empty() && std::holds_alternative<Abort>(steps.back().action); }

  std::vector<std::string> tool_sequence() const {
    std::vector<std::string> out;
    for (const auto& s : steps)
      if (const auto* t = std::get_if<ToolCall>(&s.action); t && s.error != Errc::ActionParseError)
        out.push_back(t->name);
    return out;
  }

  std::string to_jsonl() const {
    std::string out;
    for (const auto& s : steps) out += s.to_json().dump() + "\n";
    return out;
  }
};

// Masks of a {"masks": [{frame, rle, score}]} archive.
inline std::vector<SegmentMask> masks_from_archive(const json& archive) {
  std::vector<SegmentMask> out;
  for (const auto& e : archive.at("masks"))
    out.push_back({e.at("frame").get<int>(), mask_from_rle(e.at("rle")), 0, e.value("score", 1.0)});
  return out;
}

// ---- Session: tool bindings over one scene and query -----------------------

// Named artifacts (image lists, mask archives, clouds) live in memory and are
// mirrored to `out_dir` when one is set. Paths passed by the planner are
// resolved by file name; a ".pth" suffix is read as ".json".
class Session {
 public:
  Session(const Scene& scene, std::string query, Toolkit toolkit, PipelineConfig cfg, fs::path out_dir = {})
      : scene_(scene), query_(std::move(query)), tk_(std::move(toolkit)), cfg_(cfg), out_(std::move(out_dir)),
        registry_(ToolRegistry::load_default()), effective_threshold_(cfg.threshold) {
    tk_.check();
    cfg_.validate();
    if (!out_.empty()) fs::create_directories(out_);
  }

  // Called after every tool invocation, successful or not.
  std::function<void(const std::string& tool, Session&)> after_tool;

  const Scene& scene() const noexcept { return scene_; }
  const std::string& query() const noexcept { return query_; }
  const PipelineConfig& config() const noexcept { return cfg_; }
  const ToolRegistry& registry() const noexcept { return registry_; }
  double effective_threshold() const noexcept { return effective_threshold_; }
  const std::optional<ParsedQuery>& parsed() const noexcept { return parsed_; }
  const std::optional<Bbox3D>& bbox() const noexcept { return bbox_; }
  const fs::path& out_dir() const noexcept { return out_; }

  bool has(const std::string& name) const { return files_.count(normalize(name)) > 0; }
  const json& artifact(const std::string& name) const {
    auto it = files_.find(normalize(name));
    if (it == files_.end()) throw Error(Errc::ArgumentValidation, "no artifact named '" + name + "'");
    return it->second;
  }
  std::size_t list_size(const std::string& name) const { return artifact(name).size(); }

  // Point clouds by name: the exported (filtered) cloud and the raw lift it
  // was filtered from.
  PointCloud* cloud(const std::string& name) { return find_in(clouds_, name); }
  PointCloud* raw_cloud(const std::string& name) { return find_in(raw_clouds_, name); }

  json effective_config() const {
    return {{"threshold", effective_threshold_},
            {"fallback_threshold", cfg_.fallback_threshold},
            {"eps", cfg_.eps},
            {"ste_cap", cfg_.ste_cap},
            {"mge_cap", cfg_.mge_cap},
            {"stride", cfg_.stride},
            {"context_frames", cfg_.context_frames}};
  }

  // Validates and runs one tool call. Errors propagate as vg::Error.
  std::string invoke(const ToolCall& call, json& detail) {
    const json args = registry_.validate(call);
    struct Notify {
      Session& s;
      const std::string& name;
      ~Notify() {
        if (s.after_tool) s.after_tool(name, s);
      }
    } notify{*this, call.name};
    try {
      if (call.name == "query_parse") return t_query_parse(args, detail);
      if (call.name == "read_image_files") return t_read_image_files(args, detail);
      if (call.name == "object_filter") return t_object_filter(args, detail);
      if (call.name == "vlm_filter") return t_vlm_filter(args, detail);
      if (call.name == "vlm_score") return t_vlm_score(args, detail);
      if (call.name == "argmax_image_and_seg_id") return t_argmax(args, detail);
      if (call.name == "segment_target_in_reference") return t_segment_reference(args, detail);
      if (call.name == "vlm_frame_expansion") return t_frame_expansion(args, detail);
      if (call.name == "segment_all_target_object") return t_segment_all(args, detail);
      if (call.name == "reconstruct_point_cloud") return t_reconstruct(args, detail);
      if (call.name == "centroid_complete") return t_centroid_complete(args, detail);
      if (call.name == "calculate_bbox") return t_calculate_bbox(args, detail);
    } catch (const json::exception& e) {
      throw Error(Errc::ArgumentValidation, call.name + ": " + e.what());
    }
    throw Error(Errc::UnknownTool, "tool '" + call.name + "' has no binding");
  }

  // Runs one call and renders the outcome as an observation; failures become
  // "Error[<code>]: <message>" observations.
  TraceStep dispatch(const ToolCall& call, std::string thought = {}) {
    TraceStep s;
    s.thought = std::move(thought);
    s.action = call;
    try {
      s.observation = invoke(call, s.detail);
    } catch (const Error& e) {
      s.error = e.code();
      s.observation = "Error[" + std::string(to_string(e.code())) + "]: " + e.what();
    }
    s.effective_config = effective_config();
    return s;
  }

  void write_text(const std::string& name, const std::string& body) const {
    if (out_.empty()) return;
    std::ofstream os(out_ / name, std::ios::binary);
    os << body;
    if (!os) throw Error(Errc::IoFailure, "cannot write " + (out_ / name).string());
  }

 private:
  static std::string normalize(const std::string& name) {
    fs::path p = fs::path(name).filename();
    if (p.extension() == ".pth") p.replace_extension(".json");
    return p.string();
  }

  template <typename M>
  static typename M::mapped_type* find_in(M& m, const std::string& name) {
    auto it = m.find(normalize(name));
    return it == m.end() ? nullptr : &it->second;
  }

  void put(const std::string& name, json value) {
    if (!out_.empty()) write_text(name, value.dump(1) + "\n");
    files_[name] = std::move(value);
  }

  std::string image_name(int frame) const { return scene_.at(frame).image_name(); }

  json names(const std::vector<int>& frames) const {
    json out = json::array();
    for (int f : frames) out.push_back(image_name(f));
    return out;
  }

  // Frame index named by an image path: exact name, then the numeric stem.
  int resolve_image(const std::string& path) const {
    const std::string name = fs::path(path).filename().string();
    for (const auto& f : scene_.frames)
      if (f.image_name() == name) return f.index;
    const std::string stem = fs::path(name).stem().string();
    char* end = nullptr;
    const long id = std::strtol(stem.c_str(), &end, 10);
    if (!stem.empty() && end && *end == '\0' && scene_.find(static_cast<int>(id))) return static_cast<int>(id);
    throw Error(Errc::ArgumentValidation, "no frame matches image '" + path + "'");
  }

  std::vector<int> frames_of(const std::string& list_name) const {
    std::vector<int> out;
    for (const auto& n : artifact(list_name)) out.push_back(resolve_image(n.get<std::string>()));
    return out;
  }

  double threshold_arg(const json& a) {
    if (a.contains("threshold")) {
      const double t = a["threshold"].get<double>();
      check_threshold(t);
      effective_threshold_ = std::min(effective_threshold_, t);
    }
    return effective_threshold_;
  }

  const ParsedQuery& parsed_arg(const json& a) {
    if (a.contains("parsed_query")) {
      const json& v = a["parsed_query"];
      if (v.is_object()) {
        arg_parsed_ = ParsedQuery::from_json(v);
        return *arg_parsed_;
      }
      const std::string s = v.get<std::string>();
      if (has(s) && artifact(s).is_object()) {
        arg_parsed_ = ParsedQuery::from_json(artifact(s));
        return *arg_parsed_;
      }
      json j = json::parse(s, nullptr, false);
      if (j.is_discarded() || !j.is_object())
        throw Error(Errc::ArgumentValidation, "parsed_query must be the query_parse output or its file name");
      arg_parsed_ = ParsedQuery::from_json(j);
      return *arg_parsed_;
    }
    if (!parsed_) throw Error(Errc::ArgumentValidation, "parsed_query: no query has been parsed yet");
    return *parsed_;
  }

  static json mask_archive(const std::vector<SegmentMask>& masks, const std::vector<std::string>& images,
                           const std::vector<PoolSource>* sources = nullptr) {
    json arr = json::array();
    for (std::size_t i = 0; i < masks.size(); ++i) {
      json e = {{"image", images[i]}, {"frame", masks[i].frame_index}, {"score", masks[i].score},
                {"rle", mask_to_rle(masks[i].bitmap)}};
      if (sources) e["source"] = to_string((*sources)[i]);
      arr.push_back(std::move(e));
    }
    return {{"masks", arr}};
  }

  std::vector<SegmentMask> archive_masks(const std::string& name) const { return masks_from_archive(artifact(name)); }

  std::string active_query(const json& a) const { return a.value("query", parse_query_text_.value_or(query_)); }

  // -- bindings --

  std::string t_query_parse(const json& a, json& d) {
    const std::string q = a.value("query", query_);
    parsed_ = parse_query(q, *tk_.chat);
    parse_query_text_ = q;
    put("parsed_query.json", parsed_->to_json());
    d["query"] = q;
    return parsed_->to_json().dump(2);
  }

  std::string t_read_image_files(const json& a, json& d) {
    const std::string id = a.at("scene_id").get<std::string>();
    if (id != scene_.scene_id) d["note"] = "scene_id '" + id + "' differs from the loaded scene '" + scene_.scene_id + "'";
    std::vector<int> frames;
    for (const auto& f : scene_.frames)
      if (f.valid) frames.push_back(f.index);
    put("image_files.json", names(frames));
    d["count"] = frames.size();
    return "image_files.json";
  }

  std::string t_object_filter(const json& a, json& d) {
    const double t = threshold_arg(a);
    const std::string src = a.value("image_files_path", "image_files.json");
    const auto& pq = parsed_arg(a);
    const auto kept = object_filter(scene_, frames_of(src), pq.target_class, t, *tk_.detector, cfg_.jobs);
    put("object_filtered_image_files.json", names(kept));
    d["threshold"] = t;
    d["input"] = normalize(src);
    return "object_filtered_image_files.json, " + std::to_string(kept.size());
  }

  std::string t_vlm_filter(const json& a, json& d) {
    const std::string src = a.value("image_files_path", "object_filtered_image_files.json");
    std::string feature;
    if (a.contains("scene_feature")) feature = a["scene_feature"].get<std::string>();
    else if (parsed_) feature = parsed_->scene_feature;
    else throw Error(Errc::ArgumentValidation, "scene_feature: no query has been parsed yet");
    const auto kept = vlm_filter(scene_, frames_of(src), feature, *tk_.chat, cfg_.jobs);
    put("vlm_filtered_image_files.json", names(kept));
    d["input"] = normalize(src);
    return "vlm_filtered_image_files.json, " + std::to_string(kept.size());
  }

  std::string t_vlm_score(const json& a, json& d) {
    std::string src;
    if (a.contains("image_files_path")) {
      src = a["image_files_path"].get<std::string>();
    } else if (has("vlm_filtered_image_files.json") && list_size("vlm_filtered_image_files.json") > 0) {
      src = "vlm_filtered_image_files.json";
    } else {
      src = "object_filtered_image_files.json";
      d["reverted_to"] = src;
    }
    const auto frames = frames_of(src);
    if (frames.empty()) throw Error(Errc::ArgumentValidation, "image list '" + src + "' is empty");
    const auto& pq = parsed_arg(a);
    const auto scores = vlm_score(scene_, frames, active_query(a), pq, *tk_.chat, cfg_.jobs);
    json sj = json::array();
    std::size_t malformed = 0;
    for (const auto& s : scores) {
      json e = s.to_json();
      e["image"] = image_name(s.frame_index);
      sj.push_back(std::move(e));
      malformed += s.note.rfind("malformed", 0) == 0;
    }
    put("vlm_scores.json", sj);
    put("vlm_ranked_image_files.json", names(rank(scores)));
    d["input"] = normalize(src);
    d["scored"] = scores.size();
    if (malformed) d["malformed"] = malformed;
    return "('vlm_scores.json', 'vlm_ranked_image_files.json')";
  }

  std::string t_argmax(const json& a, json& d) {
    if (a.contains("scores_path")) (void)artifact(a["scores_path"].get<std::string>());
    const auto ranked = frames_of(a.value("image_files_path", "vlm_ranked_image_files.json"));
    const double t = threshold_arg(a);
    const auto& pq = parsed_arg(a);
    const std::string q = active_query(a);
    json skipped = json::array();
    for (int f : ranked) {
      try {
        const auto r = mark_and_pick(scene_.at(f), q, pq, *tk_.segmenter, *tk_.chat, t);
        std::vector<std::string> imgs(r.masks.size(), image_name(f));
        json arch = mask_archive(r.masks, imgs);
        for (std::size_t i = 0; i < r.masks.size(); ++i) arch["masks"][i]["id"] = r.masks[i].instance_id;
        arch["image"] = image_name(f);
        arch["frame"] = f;
        arch["seg_id"] = r.instance_id;
        put("reference_image_mask_results.json", arch);
        d["threshold"] = t;
        d["instances"] = r.masks.size();
        if (!skipped.empty()) d["skipped"] = skipped;
        return "('" + image_name(f) + "', " + std::to_string(r.instance_id) + ", 'reference_image_mask_results.json')";
      } catch (const Error& e) {
        if (e.code() != Errc::NoInstances && e.code() != Errc::NoMatch && e.code() != Errc::MalformedToolOutput) throw;
        skipped.push_back({{"image", image_name(f)}, {"error", std::string(to_string(e.code()))}});
      }
    }
    d["skipped"] = skipped;
    throw Error(Errc::NoMatch, "no ranked image yields a matching target (" + std::to_string(ranked.size()) + " tried)");
  }

  std::string t_segment_reference(const json& a, json& d) {
    const json& arch = artifact(a.value("mask_path", "reference_image_mask_results.json"));
    const int frame = arch.at("frame").get<int>();
    if (a.contains("image_path") && resolve_image(a["image_path"].get<std::string>()) != frame)
      throw Error(Errc::ArgumentValidation, "image_path does not match the mask archive's image");
    const int id = a.value("seg_id", arch.at("seg_id").get<int>());
    const auto& masks = arch.at("masks");
    if (id < 0 || id >= static_cast<int>(masks.size()))
      throw Error(Errc::ArgumentValidation, "seg_id " + std::to_string(id) + " is outside 0.." +
                                                std::to_string(static_cast<int>(masks.size()) - 1));
    ref_ = SegmentMask{frame, mask_from_rle(masks[static_cast<std::size_t>(id)].at("rle")), 0,
                       masks[static_cast<std::size_t>(id)].value("score", 1.0)};
    if (!out_.empty()) {
      const cv::Mat img = annotate(scene_.at(frame).color(), {*ref_});
      if (!cv::imwrite((out_ / "reference_image_with_target_mask_box.png").string(), img))
        throw Error(Errc::IoFailure, "cannot write reference_image_with_target_mask_box.png");
    }
    d["frame"] = frame;
    d["seg_id"] = id;
    d["pixels"] = count_set(ref_->bitmap);
    return "reference_image_with_target_mask_box.png";
  }

  std::string t_frame_expansion(const json& a, json& d) {
    if (!ref_) throw Error(Errc::ArgumentValidation, "no reference target; run segment_target_in_reference first");
    if (a.contains("reference_image_path") && resolve_image(a["reference_image_path"].get<std::string>()) != ref_->frame_index)
      throw Error(Errc::ArgumentValidation, "reference_image_path does not match the isolated reference");
    const int cap = a.value("max_frames", cfg_.ste_cap);
    if (cap < 1) throw Error(Errc::ArgumentValidation, "max_frames must be >= 1");
    const double t = threshold_arg(a);
    if (!parsed_) throw Error(Errc::ArgumentValidation, "no query has been parsed yet");
    SteLog log;
    clip_ = semantic_temporal_expansion(scene_, *ref_, active_query(a), *parsed_, tk_, {cap, cfg_.context_frames, t}, &log);
    put("expanded_image_files.json", names(clip_->frames()));
    d["threshold"] = t;
    d["cap"] = cap;
    d["forward"] = {{"accepted", log.forward.accepted}, {"stop", log.forward.stop}};
    d["backward"] = {{"accepted", log.backward.accepted}, {"stop", log.backward.stop}};
    return "('expanded_image_files.json', " + std::to_string(clip_->entries.size()) + ")";
  }

  std::string t_segment_all(const json& a, json& d) {
    const auto frames = frames_of(a.value("image_files_path", "expanded_image_files.json"));
    const double t = threshold_arg(a);
    std::vector<SegmentMask> masks;
    std::vector<std::string> imgs;
    json resegmented = json::array();
    for (int f : frames) {
      const SegmentMask* known = nullptr;
      if (clip_)
        for (const auto& m : clip_->entries)
          if (m.frame_index == f) known = &m;
      if (known) {
        masks.push_back(*known);
      } else {
        if (!parsed_) throw Error(Errc::ArgumentValidation, "no query has been parsed yet");
        auto got = tk_.segmenter->segment(scene_.at(f), SegmentPrompt::by_phrase(parsed_->target_class), t);
        assign_ids_by_area(got);
        if (got.empty() || count_set(got.front().bitmap) == 0) continue;
        got.front().frame_index = f;
        masks.push_back(got.front());
        resegmented.push_back(image_name(f));
      }
      imgs.push_back(image_name(f));
    }
    if (masks.empty()) throw Error(Errc::NoInstances, "no target mask in any listed image");
    put("final_images.json", imgs);
    put("final_masks.json", mask_archive(masks, imgs));
    latest_masks_ = "final_masks.json";
    d["threshold"] = t;
    d["masks"] = masks.size();
    if (!resegmented.empty()) d["resegmented"] = resegmented;
    return "('final_images.json', 'final_masks.json')";
  }

  std::string masks_for_images(const std::string& images) const {
    const std::string n = normalize(images);
    if (n == "final_images.json") return "final_masks.json";
    if (n == "centroid_final_images.json") return "centroid_final_masks.json";
    throw Error(Errc::ArgumentValidation, "images_path '" + images + "' has no matching mask archive; pass masks_path");
  }

  std::string t_reconstruct(const json& a, json& d) {
    std::string masks_name;
    if (a.contains("masks_path")) masks_name = a["masks_path"].get<std::string>();
    else if (a.contains("images_path")) masks_name = masks_for_images(a["images_path"].get<std::string>());
    else if (latest_masks_) masks_name = *latest_masks_;
    else throw Error(Errc::ArgumentValidation, "no mask archive to reconstruct from");
    auto masks = archive_masks(masks_name);
    if (a.contains("images_path")) {
      std::set<int> keep;
      for (int f : frames_of(a["images_path"].get<std::string>())) keep.insert(f);
      masks.erase(std::remove_if(masks.begin(), masks.end(), [&](const SegmentMask& m) { return !keep.count(m.frame_index); }),
                  masks.end());
    }
    const int stride = a.value("stride", cfg_.stride);
    if (stride < 1) throw Error(Errc::ArgumentValidation, "stride must be >= 1");
    if (masks.empty()) throw Error(Errc::ArgumentValidation, "mask archive '" + masks_name + "' is empty");
    PointCloud raw = lift_masks(scene_, masks, stride);
    if (raw.empty()) throw Error(Errc::EmptyCloud, "every masked pixel has invalid depth");
    PointCloud clean = clean_cloud(raw, cfg_.sor, cfg_.dbscan);
    if (!out_.empty()) write_ply(out_ / "pred_pcd.ply", clean);
    d["masks"] = normalize(masks_name);
    d["frames"] = masks.size();
    d["raw_points"] = raw.size();
    d["points"] = clean.size();
    raw_clouds_["pred_pcd.ply"] = std::move(raw);
    clouds_["pred_pcd.ply"] = std::move(clean);
    return "pred_pcd.ply";
  }

  std::string t_centroid_complete(const json& a, json& d) {
    const std::string pcd = a.value("pcd_path", "pred_pcd.ply");
    const PointCloud* raw = raw_cloud(pcd);
    if (!raw) throw Error(Errc::ArgumentValidation, "no point cloud named '" + pcd + "'");
    const double eps = a.value("eps", cfg_.eps);
    const int cap = a.value("max_frames", cfg_.mge_cap);
    if (cap < 0) throw Error(Errc::ArgumentValidation, "max_frames must be >= 0");
    const double t = threshold_arg(a);
    if (raw->empty()) throw Error(Errc::NonFiniteCentroid, "the initial cloud is empty, so its centroid is NaN");
    const Point3 c = centroid(*raw);
    TrackedClip clip;
    const std::string seed = has("final_masks.json") ? "final_masks.json" : "";
    if (seed.empty()) throw Error(Errc::ArgumentValidation, "no semantic masks to expand from; run segment_all_target_object first");
    clip.entries = archive_masks(seed);
    clip.ref_index = ref_ ? ref_->frame_index : clip.entries.front().frame_index;
    MgeLog log;
    const auto pool = geometric_expansion(scene_, c, clip, tk_, {eps, cap, t, cfg_.jobs}, &log);
    std::vector<std::string> imgs;
    std::vector<PoolSource> src;
    for (const auto& e : pool.entries) {
      imgs.push_back(image_name(e.mask.frame_index));
      src.push_back(e.source);
    }
    put("centroid_final_images.json", imgs);
    put("centroid_final_masks.json", mask_archive(pool.masks(), imgs, &src));
    latest_masks_ = "centroid_final_masks.json";
    std::size_t visible = 0;
    for (const auto& cand : log.checked) visible += cand.status == Visibility::Visible;
    d["centroid"] = {c.x(), c.y(), c.z()};
    d["threshold"] = t;
    d["eps"] = eps;
    d["checked"] = log.checked.size();
    d["visible"] = visible;
    d["added"] = pool.entries.size() - clip.entries.size();
    if (!log.skipped_empty.empty()) d["skipped_empty"] = names(log.skipped_empty);
    return "('centroid_final_images.json', 'centroid_final_masks.json')";
  }

  std::string t_calculate_bbox(const json& a, json& d) {
    const std::string name = a.at("pcd_path").get<std::string>();
    const PointCloud* pcd = cloud(name);
    PointCloud loaded;
    if (!pcd) {
      fs::path p = name;
      if (!fs::exists(p) && !out_.empty()) p = out_ / name;
      if (!fs::exists(p)) throw Error(Errc::ArgumentValidation, "no point cloud named '" + name + "'");
      loaded = read_ply(p);
      pcd = &loaded;
    }
    bbox_ = axis_aligned_bbox(*pcd);
    const auto arr = bbox_->to_array();
    put("pred_bbox.json", {{"scene_id", scene_.scene_id}, {"query", query_}, {"bbox", arr}});
    d["points"] = pcd->size();
    return format_bbox(*bbox_);
  }

  const Scene& scene_;
  std::string query_;
  Toolkit tk_;
  PipelineConfig cfg_;
  fs::path out_;
  ToolRegistry registry_;
  double effective_threshold_;

  std::optional<ParsedQuery> parsed_, arg_parsed_;
  std::optional<std::string> parse_query_text_;
  std::optional<SegmentMask> ref_;
  std::optional<TrackedClip> clip_;
  std::optional<std::string> latest_masks_;
  std::optional<Bbox3D> bbox_;
  std::map<std::string, json> files_;
  std::map<std::string, PointCloud> clouds_, raw_clouds_;
};

struct RunResult {
  std::optional<Bbox3D> bbox;  // set only when the run ends with Finish
  AgentTrace trace;
};

namespace detail {

inline RunResult finish_run(Session& s, AgentTrace trace) {
  RunResult r;
  if (trace.finished()) r.bbox = s.bbox();
  r.trace = std::move(trace);
  return r;
}

inline TraceStep terminal_step(const Session& s, AgentAction a, std::string thought, std::optional<Errc> err = {}) {
  TraceStep t;
  t.thought = std::move(thought);
  t.action = std::move(a);
  t.error = err;
  t.effective_config = s.effective_config();
  return t;
}

}  // namespace detail

// ---- Scripted executor -----------------------------------------------------

inline RunResult run_scripted(Session& s) {
  AgentTrace trace;
  const auto& cfg = s.config();
  auto call = [&](std::string thought, std::string name, json args) -> const TraceStep& {
    TraceStep st = s.dispatch({std::move(name), std::move(args)}, std::move(thought));
    st.step = static_cast<int>(trace.steps.size()) + 1;
    trace.steps.push_back(std::move(st));
    return trace.steps.back();
  };
  auto abort_with = [&](const std::string& reason, std::optional<Errc> err) {
    TraceStep t = detail::terminal_step(s, Abort{reason}, "The pipeline cannot continue.", err);
    t.step = static_cast<int>(trace.steps.size()) + 1;
    trace.steps.push_back(std::move(t));
    return detail::finish_run(s, std::move(trace));
  };
  auto failed = [&](const TraceStep& st) { return st.error.has_value(); };

  if (const auto& st = call("Parse the query into target class, attributes, conditions and scene feature.",
                            "query_parse", {{"query", s.query()}});
      failed(st))
    return abort_with("query_parse failed: " + st.observation, st.error);

  if (const auto& st = call("Index every frame of the scene.", "read_image_files", {{"scene_id", s.scene().scene_id}});
      failed(st))
    return abort_with("read_image_files failed: " + st.observation, st.error);

  {
    const auto& st = call("Keep frames where the detector finds the target class.", "object_filter",
                          {{"image_files_path", "image_files.json"},
                           {"parsed_query", "parsed_query.json"},
                           {"threshold", cfg.threshold}});
    if (failed(st)) return abort_with("object_filter failed: " + st.observation, st.error);
  }
  if (s.list_size("object_filtered_image_files.json") == 0) {
    if (cfg.fallback_threshold < cfg.threshold) {
      const auto& st = call("No frame passed at the default threshold; retry once with the looser fallback threshold "
                            "and keep it for every later step.",
                            "object_filter",
                            {{"image_files_path", "image_files.json"},
                             {"parsed_query", "parsed_query.json"},
                             {"threshold", cfg.fallback_threshold}});
      if (failed(st)) return abort_with("object_filter failed: " + st.observation, st.error);
    }
    if (s.list_size("object_filtered_image_files.json") == 0)
      return abort_with("the target class was not detected in any frame", Errc::NoInstances);
  }

  if (const auto& st = call("Keep frames that match the scene feature.", "vlm_filter",
                            {{"image_files_path", "object_filtered_image_files.json"}});
      failed(st))
    return abort_with("vlm_filter failed: " + st.observation, st.error);

  std::string scored = "vlm_filtered_image_files.json";
  std::string score_thought = "Score the remaining frames against the full query and rank them.";
  if (s.list_size("vlm_filtered_image_files.json") == 0) {
    scored = "object_filtered_image_files.json";
    score_thought = "The scene filter rejected every frame; revert to the coarse filtering result and score those frames.";
  }
  if (const auto& st = call(score_thought, "vlm_score", {{"image_files_path", scored}, {"parsed_query", "parsed_query.json"}});
      failed(st))
    return abort_with("vlm_score failed: " + st.observation, st.error);

  if (const auto& st = call("Walk the ranked frames and pick the reference view and target instance.",
                            "argmax_image_and_seg_id",
                            {{"scores_path", "vlm_scores.json"},
                             {"image_files_path", "vlm_ranked_image_files.json"},
                             {"parsed_query", "parsed_query.json"},
                             {"threshold", s.effective_threshold()}});
      failed(st))
    return abort_with("no reference view: " + st.observation, st.error);

  if (const auto& st = call("Isolate the chosen instance in the reference view.", "segment_target_in_reference",
                            {{"mask_path", "reference_image_mask_results.json"}});
      failed(st))
    return abort_with("segment_target_in_reference failed: " + st.observation, st.error);

  if (const auto& st = call("Track the target forward and backward from the reference view.", "vlm_frame_expansion",
                            {{"max_frames", cfg.ste_cap}, {"threshold", s.effective_threshold()}});
      failed(st))
    return abort_with("vlm_frame_expansion failed: " + st.observation, st.error);

  if (const auto& st = call("Collect the target mask of every tracked frame.", "segment_all_target_object",
                            {{"image_files_path", "expanded_image_files.json"}, {"threshold", s.effective_threshold()}});
      failed(st))
    return abort_with("segment_all_target_object failed: " + st.observation, st.error);

  if (const auto& st = call("Lift the tracked masks into an initial point cloud.", "reconstruct_point_cloud",
                            {{"images_path", "final_images.json"}, {"masks_path", "final_masks.json"}});
      failed(st))
    return abort_with("initial reconstruction failed: " + st.observation, st.error);

  std::string images = "centroid_final_images.json", masks = "centroid_final_masks.json";
  std::string final_thought = "Reconstruct from the semantic and geometric views together.";
  {
    const auto& st = call("Project the initial centroid into the remaining frames to harvest unoccluded views.",
                          "centroid_complete",
                          {{"pcd_path", "pred_pcd.ply"},
                           {"eps", cfg.eps},
                           {"max_frames", cfg.mge_cap},
                           {"threshold", s.effective_threshold()}});
    if (failed(st)) {
      if (*st.error != Errc::EmptyCloud && *st.error != Errc::NonFiniteCentroid)
        return abort_with("centroid_complete failed: " + st.observation, st.error);
      images = "final_images.json";
      masks = "final_masks.json";
      final_thought = "The centroid is unusable; skip geometric expansion and reconstruct from the tracked frames only.";
    }
  }

  if (const auto& st = call(final_thought, "reconstruct_point_cloud", {{"images_path", images}, {"masks_path", masks}});
      failed(st))
    return abort_with("final reconstruction failed: " + st.observation, st.error);

  const auto& bb = call("Compute the axis-aligned box of the final cloud.", "calculate_bbox", {{"pcd_path", "pred_pcd.ply"}});
  if (failed(bb)) return abort_with("calculate_bbox failed: " + bb.observation, bb.error);

  const std::string target = s.parsed() ? s.parsed()->target_class : std::string("target");
  TraceStep fin = detail::terminal_step(s, Finish{"The 3D bounding box for the " + target + " is " + bb.observation + "."},
                                        "The box is ready.");
  fin.step = static_cast<int>(trace.steps.size()) + 1;
  trace.steps.push_back(std::move(fin));
  return detail::finish_run(s, std::move(trace));
}

// ---- Planner loop ----------------------------------------------------------

inline std::string planner_system_prompt(const SkillDocument& skill, const ToolRegistry& reg) {
  return fill_template(load_asset("prompts/system.md"),
                       {{"skill_description", skill.source}, {"tool_descriptions", reg.describe()}, {"tool_names", reg.names()}});
}

// Text between a leading "Thought:" label and the "Action:" label.
inline std::string extract_thought(const std::string& text) {
  auto end = text.rfind("Action:");
  std::string t = text.substr(0, end == std::string::npos ? 0 : end);
  if (auto p = t.find("Thought:"); p != std::string::npos) t = t.substr(p + 8);
  t = trim(t);
  while (!t.empty() && (t.back() == '*' || t.back() == '`')) t.pop_back();
  while (!t.empty() && (t.front() == '*' || t.front() == '`')) t.erase(t.begin());
  return trim(t);
}

inline RunResult run_react(Session& s, ChatModel& planner, int max_steps) {
  if (max_steps < 1) throw Error(Errc::InvalidConfig, "max_steps must be >= 1");
  const auto skill = SkillDocument::load_default();
  ChatRequest req;
  req.task = ChatTask::Planner;
  req.turns.push_back({Role::System, {ChatPart::text(planner_system_prompt(skill, s.registry()))}});
  req.turns.push_back({Role::User, {ChatPart::text(fill_template(load_asset("prompts/user/agent_task.md"),
                                                                 {{"scene_id", s.scene().scene_id}, {"query", s.query()}}))}});
  AgentTrace trace;
  auto push = [&](TraceStep st) {
    st.step = static_cast<int>(trace.steps.size()) + 1;
    trace.steps.push_back(std::move(st));
  };

  for (int step = 1; step <= max_steps; ++step) {
    std::optional<AgentAction> action;
    std::string text, parse_error;
    for (int attempt = 1; attempt <= 2 && !action; ++attempt) {
      req.hints = {{"step", step}, {"attempt", attempt}};
      try {
        text = planner.complete(req);
      } catch (const Error& e) {
        push(detail::terminal_step(s, Abort{"planner unavailable: " + std::string(e.what())}, "", Errc::PlannerUnavailable));
        return detail::finish_run(s, std::move(trace));
      }
      req.turns.push_back({Role::Assistant, {ChatPart::text(text)}});
      try {
        action = parse_action(text);
      } catch (const Error& e) {
        parse_error = e.what();
        req.turns.push_back({Role::User, {ChatPart::text("Observation: Error[ActionParseError]: " + parse_error +
                                                         "\nRespond with one Thought and one Action in the required format.")}});
      }
    }
    if (!action) {
      TraceStep st = detail::terminal_step(s, Abort{"unparsable action"}, extract_thought(text), Errc::ActionParseError);
      st.action = ToolCall{"<unparsed>", json::object()};
      st.observation = "Error[ActionParseError]: " + parse_error;
      st.detail = {{"text", text}};
      push(std::move(st));
      continue;
    }
    if (!std::holds_alternative<ToolCall>(*action)) {
      push(detail::terminal_step(s, *action, extract_thought(text)));
      return detail::finish_run(s, std::move(trace));
    }
    TraceStep st = s.dispatch(std::get<ToolCall>(*action), extract_thought(text));
    req.turns.push_back({Role::User, {ChatPart::text("Observation: " + st.observation)}});
    push(std::move(st));
  }
  push(detail::terminal_step(s, Abort{"step budget of " + std::to_string(max_steps) + " exhausted"}, "", Errc::StepBudget));
  return detail::finish_run(s, std::move(trace));
}

}  // namespace vg
