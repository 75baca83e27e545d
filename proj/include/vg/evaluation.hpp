#pragma once

// Axis-aligned 3D IoU, Acc@t over records and subsets, proposal refinement
// and argmax-IoU top-1 selection.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vg/cloud.hpp"
#include "vg/error.hpp"

namespace vg {

using nlohmann::json;

// Intersection over union of two axis-aligned boxes. When the union has no
// volume the result is 1 for identical boxes and 0 otherwise.
inline double iou3d(const Bbox3D& a, const Bbox3D& b) {
  const Point3 alo = a.min(), ahi = a.max(), blo = b.min(), bhi = b.max();
  double inter = 1.0;
  for (int i = 0; i < 3; ++i) inter *= std::max(0.0, std::min(ahi[i], bhi[i]) - std::max(alo[i], blo[i]));
  const double uni = a.volume() + b.volume() - inter;
  if (!(uni > 0)) return a == b ? 1.0 : 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

enum class Subset { None, Unique, Multiple, Easy, Hard, Dep, Indep };

inline const char* to_string(Subset s) {
  switch (s) {
    case Subset::None: return "";
    case Subset::Unique: return "Unique";
    case Subset::Multiple: return "Multiple";
    case Subset::Easy: return "Easy";
    case Subset::Hard: return "Hard";
    case Subset::Dep: return "Dep";
    case Subset::Indep: return "Indep";
  }
  return "";
}

inline Subset subset_from_string(const std::string& s) {
  std::string l;
  for (char c : s) l += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (l.empty() || l == "none") return Subset::None;
  for (Subset x : {Subset::Unique, Subset::Multiple, Subset::Easy, Subset::Hard, Subset::Dep, Subset::Indep}) {
    std::string n = to_string(x);
    for (auto& c : n) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (n == l) return x;
  }
  throw Error(Errc::InvalidConfig, "unknown subset tag '" + s + "'");
}

struct EvalRecord {
  std::string query_id;
  std::optional<Bbox3D> pred;  // absent when the run aborted
  Bbox3D gt;
  Subset subset = Subset::None;
};

struct AccuracyRow {
  std::size_t count = 0;
  std::vector<double> acc;  // parallel to the thresholds
};

struct AccuracyReport {
  std::vector<double> thresholds;
  AccuracyRow overall;
  std::map<std::string, AccuracyRow> subsets;  // only tags that occur

  json to_json() const {
    auto row = [&](const AccuracyRow& r) {
      json j = {{"count", r.count}};
      for (std::size_t i = 0; i < thresholds.size(); ++i) j[threshold_key(thresholds[i])] = r.acc[i];
      return j;
    };
    json subs = json::object();
    for (const auto& [k, r] : subsets) subs[k] = row(r);
    return {{"thresholds", thresholds}, {"overall", row(overall)}, {"subsets", subs}};
  }

  std::string table() const {
    std::ostringstream os;
    char buf[64];
    os << "subset      count";
    for (double t : thresholds) {
      std::snprintf(buf, sizeof buf, "  %9s", threshold_key(t).c_str());
      os << buf;
    }
    os << "\n";
    auto line = [&](const std::string& name, const AccuracyRow& r) {
      std::snprintf(buf, sizeof buf, "%-10s %6zu", name.c_str(), r.count);
      os << buf;
      for (double a : r.acc) {
        std::snprintf(buf, sizeof buf, "  %9.4f", a);
        os << buf;
      }
      os << "\n";
    };
    line("overall", overall);
    for (const auto& [k, r] : subsets) line(k, r);
    return os.str();
  }

  static std::string threshold_key(double t) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "Acc@%g", t);
    return buf;
  }
};

// Fraction of records whose IoU strictly exceeds each threshold; missing
// predictions count as misses.
inline AccuracyReport accuracy(const std::vector<EvalRecord>& records, std::vector<double> thresholds = {0.25, 0.5}) {
  if (records.empty()) throw Error(Errc::InvalidConfig, "no records to evaluate");
  AccuracyReport rep;
  rep.thresholds = thresholds;
  std::map<std::string, std::vector<std::size_t>> hits;
  auto add = [&](AccuracyRow& row, std::vector<std::size_t>& h, double iou) {
    if (h.empty()) h.assign(thresholds.size(), 0);
    ++row.count;
    for (std::size_t i = 0; i < thresholds.size(); ++i) h[i] += iou > thresholds[i];
  };
  std::vector<std::size_t> all;
  for (const auto& r : records) {
    const double iou = r.pred ? iou3d(*r.pred, r.gt) : 0.0;
    add(rep.overall, all, iou);
    if (r.subset != Subset::None) add(rep.subsets[to_string(r.subset)], hits[to_string(r.subset)], iou);
  }
  auto finish = [&](AccuracyRow& row, const std::vector<std::size_t>& h) {
    row.acc.resize(thresholds.size());
    for (std::size_t i = 0; i < thresholds.size(); ++i)
      row.acc[i] = static_cast<double>(h[i]) / static_cast<double>(row.count);
  };
  finish(rep.overall, all);
  for (auto& [k, row] : rep.subsets) finish(row, hits[k]);
  return rep;
}

// The proposal overlapping `pred` most (lowest index on ties); `pred` itself
// when there are no proposals or none overlaps.
inline Bbox3D refine_with_proposals(const Bbox3D& pred, const std::vector<Bbox3D>& proposals) {
  double best = 0.0;
  const Bbox3D* pick = nullptr;
  for (const auto& p : proposals) {
    const double iou = iou3d(pred, p);
    if (iou > best) {
      best = iou;
      pick = &p;
    }
  }
  return pick ? *pick : pred;
}

// True iff the candidate overlapping `pred` most (lowest index on ties) is the
// target. No overlap with any candidate is a miss.
inline bool top1_selection(const Bbox3D& pred, const std::vector<Bbox3D>& candidates, std::size_t target_index) {
  if (candidates.empty()) throw Error(Errc::InvalidConfig, "top-1 selection needs candidates");
  if (target_index >= candidates.size()) throw Error(Errc::InvalidConfig, "target index out of range");
  double best = 0.0;
  std::optional<std::size_t> pick;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double iou = iou3d(pred, candidates[i]);
    if (iou > best) {
      best = iou;
      pick = i;
    }
  }
  return pick && *pick == target_index;
}

// ---- JSON lines ------------------------------------------------------------

inline Bbox3D bbox_from_json(const json& j) {
  if (!j.is_array() || j.size() != 6) throw Error(Errc::InvalidConfig, "box must be [cx, cy, cz, dx, dy, dz]");
  std::array<double, 6> a{};
  for (std::size_t i = 0; i < 6; ++i) {
    if (!j[i].is_number()) throw Error(Errc::InvalidConfig, "box values must be numbers");
    a[i] = j[i].get<double>();
  }
  if (a[3] < 0 || a[4] < 0 || a[5] < 0) throw Error(Errc::InvalidConfig, "box extents must be >= 0");
  return Bbox3D::from_array(a);
}

inline std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(Errc::IoFailure, "cannot open " + path.string());
  std::vector<json> out;
  std::size_t n = 0;
  for (std::string line; std::getline(is, line);) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw Error(Errc::InvalidConfig, path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
    if (!out.back().is_object()) throw Error(Errc::InvalidConfig, path.string() + ":" + std::to_string(n) + ": not an object");
  }
  return out;
}

struct BoxLine {
  std::string query_id;
  std::optional<Bbox3D> box;
  Subset subset = Subset::None;
};

inline BoxLine box_line_from_json(const json& j, bool box_required) {
  BoxLine b;
  try {
    b.query_id = j.at("query_id").is_string() ? j.at("query_id").get<std::string>() : j.at("query_id").dump();
    if (j.contains("box") && !j["box"].is_null()) b.box = bbox_from_json(j["box"]);
    else if (box_required) throw Error(Errc::InvalidConfig, "record " + b.query_id + " has no box");
    if (j.contains("subset") && j["subset"].is_string()) b.subset = subset_from_string(j["subset"].get<std::string>());
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidConfig, std::string("bad record: ") + e.what());
  }
  return b;
}

// Joins ground truth (which drives the record list) with predictions by
// query id. A prediction without ground truth is a schema error.
inline std::vector<EvalRecord> join_records(const std::vector<json>& preds, const std::vector<json>& gts) {
  if (preds.empty()) throw Error(Errc::InvalidConfig, "prediction file is empty");
  if (gts.empty()) throw Error(Errc::InvalidConfig, "ground-truth file is empty");
  std::map<std::string, std::optional<Bbox3D>> by_id;
  for (const auto& p : preds) {
    auto b = box_line_from_json(p, false);
    if (!by_id.emplace(b.query_id, b.box).second) throw Error(Errc::InvalidConfig, "duplicate prediction " + b.query_id);
  }
  std::vector<EvalRecord> out;
  std::map<std::string, bool> seen;
  for (const auto& g : gts) {
    auto b = box_line_from_json(g, true);
    if (seen[b.query_id]) throw Error(Errc::InvalidConfig, "duplicate ground truth " + b.query_id);
    seen[b.query_id] = true;
    EvalRecord r{b.query_id, std::nullopt, *b.box, b.subset};
    if (auto it = by_id.find(b.query_id); it != by_id.end()) r.pred = it->second;
    out.push_back(std::move(r));
  }
  for (const auto& [id, _] : by_id)
    if (!seen.count(id)) throw Error(Errc::InvalidConfig, "prediction " + id + " has no ground truth");
  return out;
}

// Proposal lines {query_id, box}; several lines per query id.
inline std::map<std::string, std::vector<Bbox3D>> group_proposals(const std::vector<json>& lines) {
  std::map<std::string, std::vector<Bbox3D>> out;
  for (const auto& l : lines) {
    auto b = box_line_from_json(l, true);
    out[b.query_id].push_back(*b.box);
  }
  return out;
}

struct CandidateSet {
  std::vector<Bbox3D> boxes;
  std::size_t target_index = 0;
};

// Candidate lines {query_id, boxes: [[6]...], target_index}.
inline std::map<std::string, CandidateSet> read_candidates(const std::vector<json>& lines) {
  std::map<std::string, CandidateSet> out;
  for (const auto& l : lines) {
    try {
      const std::string id = l.at("query_id").is_string() ? l.at("query_id").get<std::string>() : l.at("query_id").dump();
      CandidateSet c;
      for (const auto& b : l.at("boxes")) c.boxes.push_back(bbox_from_json(b));
      c.target_index = l.at("target_index").get<std::size_t>();
      if (c.boxes.empty() || c.target_index >= c.boxes.size())
        throw Error(Errc::InvalidConfig, "candidate set " + id + " has no valid target");
      out[id] = std::move(c);
    } catch (const json::exception& e) {
      throw Error(Errc::InvalidConfig, std::string("bad candidate line: ") + e.what());
    }
  }
  return out;
}

struct Top1Report {
  std::size_t count = 0, correct = 0;
  std::map<std::string, std::pair<std::size_t, std::size_t>> subsets;  // tag -> (count, correct)

  double accuracy() const { return count ? static_cast<double>(correct) / static_cast<double>(count) : 0.0; }

  json to_json() const {
    json subs = json::object();
    for (const auto& [k, v] : subsets)
      subs[k] = {{"count", v.first}, {"top1", v.first ? static_cast<double>(v.second) / static_cast<double>(v.first) : 0.0}};
    return {{"overall", {{"count", count}, {"top1", accuracy()}}}, {"subsets", subs}};
  }
};

inline Top1Report top1_accuracy(const std::vector<EvalRecord>& records, const std::map<std::string, CandidateSet>& cands) {
  Top1Report r;
  for (const auto& rec : records) {
    auto it = cands.find(rec.query_id);
    if (it == cands.end()) throw Error(Errc::InvalidConfig, "no candidates for " + rec.query_id);
    const bool ok = rec.pred && top1_selection(*rec.pred, it->second.boxes, it->second.target_index);
    ++r.count;
    r.correct += ok;
    if (rec.subset != Subset::None) {
      auto& s = r.subsets[to_string(rec.subset)];
      ++s.first;
      s.second += ok;
    }
  }
  return r;
}

}  // namespace vg
