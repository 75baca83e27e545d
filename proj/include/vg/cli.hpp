#pragma once

// Command implementations behind the `vg` executable. Each returns a process
// exit code: 0 success (Finish), 2 Abort, 1 I/O or configuration errors.

#include <nlohmann/json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vg/agent.hpp"
#include "vg/evaluation.hpp"
#include "vg/synthetic.hpp"
#include "vg/toolkit_oracle.hpp"
#include "vg/toolkit_remote.hpp"
#include "vg/toolkit_replay.hpp"

namespace vg {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode { kExitOk = 0, kExitError = 1, kExitAbort = 2 };

enum class RunMode { Scripted, React };
enum class ToolkitKind { Oracle, Replay, Remote };

struct RemoteUrls {
  std::string chat, detector, segmenter, planner;
  double timeout_s = 60.0;

  // Unset fields fall back to TAB_CHAT_URL, TAB_DETECTOR_URL,
  // TAB_SEGMENTER_URL and TAB_PLANNER_URL.
  void fill_from_env() {
    auto env = [](const char* k) -> std::string {
      const char* v = std::getenv(k);
      return v ? v : "";
    };
    if (chat.empty()) chat = env("TAB_CHAT_URL");
    if (detector.empty()) detector = env("TAB_DETECTOR_URL");
    if (segmenter.empty()) segmenter = env("TAB_SEGMENTER_URL");
    if (planner.empty()) planner = env("TAB_PLANNER_URL");
  }
};

struct RunManifest {
  fs::path scene;
  std::string query;
  RunMode mode = RunMode::Scripted;
  ToolkitKind toolkit = ToolkitKind::Oracle;
  std::optional<fs::path> config;
  json overrides = json::object();  // applied after the config file
  fs::path out;
  std::optional<fs::path> ground_truth;  // oracle; defaults to <scene>/ground_truth.json
  std::optional<fs::path> replay_log;
  std::optional<fs::path> planner_log;
  std::optional<fs::path> record;
  RemoteUrls urls;
};

inline RunMode parse_mode(const std::string& s) {
  if (s == "scripted") return RunMode::Scripted;
  if (s == "react") return RunMode::React;
  throw Error(Errc::InvalidConfig, "mode must be scripted or react");
}

inline ToolkitKind parse_toolkit(const std::string& s) {
  if (s == "oracle") return ToolkitKind::Oracle;
  if (s == "replay") return ToolkitKind::Replay;
  if (s == "remote") return ToolkitKind::Remote;
  throw Error(Errc::InvalidConfig, "toolkit must be oracle, replay or remote");
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void write_file(const fs::path& p, const std::string& body) {
  std::ofstream os(p, std::ios::binary);
  os << body;
  if (!os) throw Error(Errc::IoFailure, "cannot write " + p.string());
}

inline PipelineConfig manifest_config(const RunManifest& m) {
  PipelineConfig cfg;
  if (m.config) cfg = PipelineConfig::load(*m.config);
  if (!m.overrides.empty()) cfg = PipelineConfig::from_json(m.overrides, cfg);
  return cfg;
}

inline Toolkit make_toolkit(const RunManifest& m, const Scene& scene) {
  switch (m.toolkit) {
    case ToolkitKind::Oracle: {
      const fs::path gt = m.ground_truth.value_or(m.scene / "ground_truth.json");
      return make_oracle_toolkit(load_ground_truth(gt, scene));
    }
    case ToolkitKind::Replay:
      if (!m.replay_log) throw Error(Errc::InvalidConfig, "--toolkit replay needs --replay-log");
      return make_replay_toolkit(ReplayLog::load(*m.replay_log), scene.intrinsics);
    case ToolkitKind::Remote: {
      if (m.urls.chat.empty() || m.urls.detector.empty() || m.urls.segmenter.empty())
        throw Error(Errc::InvalidConfig, "--toolkit remote needs chat, detector and segmenter URLs");
      return {std::make_shared<RemoteChat>(Endpoint::parse(m.urls.chat, m.urls.timeout_s)),
              std::make_shared<RemoteDetector>(Endpoint::parse(m.urls.detector, m.urls.timeout_s), scene.intrinsics),
              std::make_shared<RemoteSegmenter>(Endpoint::parse(m.urls.segmenter, m.urls.timeout_s), scene.intrinsics)};
    }
  }
  throw Error(Errc::InvalidConfig, "unknown toolkit");
}

inline std::shared_ptr<ChatModel> make_planner(const RunManifest& m) {
  if (m.planner_log) return std::make_shared<ReplayChat>(ReplayLog::load(*m.planner_log));
  if (!m.urls.planner.empty()) return std::make_shared<RemoteChat>(Endpoint::parse(m.urls.planner, m.urls.timeout_s));
  throw Error(Errc::InvalidConfig, "--mode react needs a planner: --planner-log or --planner-url");
}

struct GroundOutcome {
  int exit_code = kExitError;
  std::optional<Bbox3D> bbox;
  AgentTrace trace;
  std::string error;
};

// Runs one grounding task and writes trace.jsonl, pred_pcd.ply,
// pred_bbox.json and run.json under m.out.
inline GroundOutcome ground(const RunManifest& m, std::ostream& err = std::cerr) {
  GroundOutcome o;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    if (m.query.empty()) throw Error(Errc::InvalidConfig, "--query must not be empty");
    if (m.out.empty()) throw Error(Errc::InvalidConfig, "--out is required");
    const PipelineConfig cfg = manifest_config(m);
    std::shared_ptr<ChatModel> planner;
    if (m.mode == RunMode::React) planner = make_planner(m);
    const Scene scene = load_scene(m.scene, static_cast<std::size_t>(cfg.max_frames));
    Toolkit tk = make_toolkit(m, scene);
    std::shared_ptr<Recorder> rec;
    if (m.record) {
      rec = std::make_shared<Recorder>();
      tk = record(tk, rec);
      if (planner) planner = std::make_shared<RecordingChat>(planner, rec);
    }
    fs::create_directories(m.out);
    Session s(scene, m.query, tk, cfg, m.out);
    RunResult r = m.mode == RunMode::Scripted ? run_scripted(s) : run_react(s, *planner, cfg.max_steps);
    write_file(m.out / "trace.jsonl", r.trace.to_jsonl());
    if (rec) rec->save(*m.record);
    o.bbox = r.bbox;
    o.trace = std::move(r.trace);
    o.exit_code = o.trace.finished() ? kExitOk : kExitAbort;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    json run = {{"meta", {{"finished_at", utc_timestamp()}, {"elapsed_s", secs}}},
                {"scene_id", scene.scene_id},
                {"query", m.query},
                {"mode", m.mode == RunMode::Scripted ? "scripted" : "react"},
                {"config", cfg.to_json()},
                {"status", o.trace.finished() ? "finish" : "abort"},
                {"steps", o.trace.steps.size()}};
    if (o.bbox) run["bbox"] = o.bbox->to_array();
    if (!o.trace.steps.empty()) run["final_action"] = render_action(o.trace.steps.back().action);
    write_file(m.out / "run.json", run.dump(2) + "\n");
    if (!o.trace.finished()) err << "aborted: " << render_action(o.trace.steps.back().action) << "\n";
  } catch (const Error& e) {
    o.exit_code = kExitError;
    o.error = e.what();
    err << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
  } catch (const std::exception& e) {
    o.exit_code = kExitError;
    o.error = e.what();
    err << "error: " << e.what() << "\n";
  }
  return o;
}

inline int cmd_ground(const RunManifest& m, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  const auto o = ground(m, err);
  if (o.bbox) out << format_bbox(*o.bbox) << "\n";
  return o.exit_code;
}

inline int cmd_simulate(const fs::path& spec_path, const fs::path& out_dir, std::ostream& out = std::cout,
                        std::ostream& err = std::cerr) {
  try {
    std::ifstream is(spec_path);
    if (!is) throw Error(Errc::IoFailure, "cannot open " + spec_path.string());
    json j;
    try {
      j = json::parse(is);
    } catch (const json::parse_error& e) {
      throw Error(Errc::InvalidSpec, e.what());
    }
    const SyntheticSpec spec = spec_from_json(j);
    const Scene scene = render_synthetic(spec).first;
    write_scene(out_dir, spec, scene);
    out << "wrote " << scene.frames.size() << " frames to " << out_dir.string() << "\n";
    return kExitOk;
  } catch (const Error& e) {
    err << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
  }
  return kExitError;
}

struct EvalOptions {
  fs::path pred, gt, out;
  std::optional<fs::path> proposals;
  bool top1 = false;
  std::optional<fs::path> candidates;
  std::vector<double> thresholds{0.25, 0.5};
};

inline std::vector<double> parse_thresholds(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      std::size_t used = 0;
      const double t = std::stod(item, &used);
      if (used != item.size() || !(t >= 0 && t <= 1)) throw std::invalid_argument(item);
      out.push_back(t);
    } catch (const std::exception&) {
      throw Error(Errc::InvalidConfig, "bad threshold '" + item + "'");
    }
  }
  if (out.empty()) throw Error(Errc::InvalidConfig, "no thresholds given");
  return out;
}

inline int cmd_eval(const EvalOptions& o, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  try {
    if (o.top1 && !o.candidates) throw Error(Errc::InvalidConfig, "--top1 needs --candidates");
    auto records = join_records(read_jsonl(o.pred), read_jsonl(o.gt));
    json report = {{"meta", {{"generated_at", utc_timestamp()}}},
                   {"pred", o.pred.filename().string()},
                   {"gt", o.gt.filename().string()},
                   {"records", records.size()}};
    if (o.proposals) {
      const auto props = group_proposals(read_jsonl(*o.proposals));
      std::size_t changed = 0;
      for (auto& r : records) {
        auto it = props.find(r.query_id);
        if (!r.pred || it == props.end()) continue;
        const Bbox3D refined = refine_with_proposals(*r.pred, it->second);
        changed += !(refined == *r.pred);
        r.pred = refined;
      }
      report["refined"] = changed;
    }
    if (o.top1) {
      const auto t = top1_accuracy(records, read_candidates(read_jsonl(*o.candidates)));
      report["top1"] = t.to_json();
      char buf[64];
      std::snprintf(buf, sizeof buf, "top-1 accuracy %.4f (%zu/%zu)\n", t.accuracy(), t.correct, t.count);
      out << buf;
    } else {
      const auto acc = accuracy(records, o.thresholds);
      report["accuracy"] = acc.to_json();
      out << acc.table();
    }
    fs::create_directories(o.out);
    write_file(o.out / "report.json", report.dump(2) + "\n");
    return kExitOk;
  } catch (const Error& e) {
    err << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
  }
  return kExitError;
}

// Batch grounding: a JSON-lines manifest of {query_id, scene, query, subset?}
// is grounded with up to `jobs` runs in flight. Each run writes to
// <out>/<query_id>/; predictions.jsonl collects the boxes for `eval`.
inline int cmd_batch(const fs::path& manifest, const RunManifest& base, int jobs, std::ostream& out = std::cout,
                     std::ostream& err = std::cerr) {
  try {
    const auto lines = read_jsonl(manifest);
    if (lines.empty()) throw Error(Errc::InvalidConfig, "batch manifest is empty");
    std::vector<RunManifest> runs;
    std::vector<json> ids;
    for (const auto& l : lines) {
      RunManifest m = base;
      try {
        ids.push_back(l.at("query_id"));
        fs::path scene = l.at("scene").get<std::string>();
        if (scene.is_relative()) scene = manifest.parent_path() / scene;
        m.scene = scene;
        m.query = l.at("query").get<std::string>();
        const std::string id = l["query_id"].is_string() ? l["query_id"].get<std::string>() : l["query_id"].dump();
        m.out = base.out / id;
        if (l.contains("subset")) ids.back() = {{"query_id", l["query_id"]}, {"subset", l["subset"]}};
        else ids.back() = {{"query_id", l["query_id"]}};
      } catch (const json::exception& e) {
        throw Error(Errc::InvalidConfig, std::string("bad batch line: ") + e.what());
      }
      runs.push_back(std::move(m));
    }
    std::vector<GroundOutcome> results(runs.size());
    std::vector<std::ostringstream> errs(runs.size());
    parallel_for(runs.size(), jobs, [&](std::size_t i) { results[i] = ground(runs[i], errs[i]); });
    std::string preds;
    int worst = kExitOk;
    for (std::size_t i = 0; i < runs.size(); ++i) {
      json p = ids[i];
      p["box"] = results[i].bbox ? json(results[i].bbox->to_array()) : json(nullptr);
      preds += p.dump() + "\n";
      if (!errs[i].str().empty()) err << p["query_id"].dump() << ": " << errs[i].str();
      if (results[i].exit_code == kExitError) worst = kExitError;
      else if (results[i].exit_code == kExitAbort && worst == kExitOk) worst = kExitAbort;
    }
    fs::create_directories(base.out);
    write_file(base.out / "predictions.jsonl", preds);
    out << "grounded " << runs.size() << " queries\n";
    return worst;
  } catch (const Error& e) {
    err << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
  }
  return kExitError;
}

}  // namespace vg
