#pragma once

// The grounding skill document and the tool registry the planner sees.

#include <nlohmann/json.hpp>

#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "vg/action.hpp"
#include "vg/assets.hpp"
#include "vg/error.hpp"

namespace vg {

using nlohmann::json;

struct SkillStep {
  int number = 0;
  std::string title;
  std::string body;
};

struct SkillTip {
  std::string title;
  std::string body;
};

struct SkillDocument {
  std::string name;
  std::string description;
  std::string when_to_use;
  std::vector<SkillStep> steps;
  std::vector<SkillTip> tips;
  std::string source;  // markdown as shipped

  static SkillDocument parse(const std::string& md) {
    static const std::regex kName(R"(\*\*Name:\*\*\s*`([^`]+)`)");
    static const std::regex kDesc(R"(\*\*Description:\*\*\s*(.+))");
    static const std::regex kStep(R"(^(\d+)\.\s+\*\*([^*]+)\*\*:?\s*(.*)$)");
    static const std::regex kTip(R"(^\*\*([^*]+)\*\*:\s*(.+)$)");
    SkillDocument d;
    d.source = md;
    std::smatch m;
    if (std::regex_search(md, m, kName)) d.name = m[1].str();
    if (std::regex_search(md, m, kDesc)) d.description = m[1].str();
    enum class Section { None, When, Steps, Tips } sec = Section::None;
    std::istringstream is(md);
    for (std::string line; std::getline(is, line);) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.rfind("**When to use", 0) == 0) sec = Section::When;
      else if (line.rfind("**Instructions", 0) == 0) sec = Section::Steps;
      else if (line.rfind("**Strategy Tips", 0) == 0) sec = Section::Tips;
      else if (line == "---") sec = Section::None;
      else if (sec == Section::When && !line.empty()) d.when_to_use += (d.when_to_use.empty() ? "" : "\n") + line;
      else if (sec == Section::Steps && std::regex_match(line, m, kStep))
        d.steps.push_back({std::stoi(m[1].str()), m[2].str(), m[3].str()});
      else if (sec == Section::Tips && std::regex_match(line, m, kTip))
        d.tips.push_back({m[1].str(), m[2].str()});
    }
    if (d.name.empty()) throw Error(Errc::InvalidConfig, "skill document has no name");
    if (d.steps.empty()) throw Error(Errc::InvalidConfig, "skill document has no steps");
    for (std::size_t i = 0; i < d.steps.size(); ++i)
      if (d.steps[i].number != static_cast<int>(i) + 1)
        throw Error(Errc::InvalidConfig, "skill steps are not numbered consecutively at step " +
                                             std::to_string(d.steps[i].number));
    return d;
  }

  static SkillDocument load_default() { return parse(load_asset("skills/3d_visual_grounding.md")); }
};

struct ToolParam {
  std::string name;
  std::vector<std::string> types;  // JSON schema type names
  bool required = false;
  std::string description;
};

struct ToolSpec {
  std::string name;
  std::string description;
  std::vector<ToolParam> params;
  json schema;  // as shipped

  const ToolParam* param(const std::string& n) const {
    for (const auto& p : params)
      if (p.name == n) return &p;
    return nullptr;
  }
};

namespace detail {

inline bool json_has_type(const json& v, const std::string& t) {
  if (t == "string") return v.is_string();
  if (t == "number") return v.is_number();
  if (t == "integer") return v.is_number_integer() || v.is_number_unsigned();
  if (t == "boolean") return v.is_boolean();
  if (t == "object") return v.is_object();
  if (t == "array") return v.is_array();
  if (t == "null") return v.is_null();
  return false;
}

}  // namespace detail

class ToolRegistry {
 public:
  static ToolRegistry from_json(const json& j) {
    ToolRegistry r;
    try {
      for (const auto& t : j.at("tools")) {
        ToolSpec s;
        s.name = t.at("name").get<std::string>();
        s.description = t.at("description").get<std::string>();
        s.schema = t.at("parameters");
        const auto req = s.schema.value("required", json::array());
        for (auto it = s.schema.at("properties").begin(); it != s.schema.at("properties").end(); ++it) {
          ToolParam p;
          p.name = it.key();
          const auto& ty = it.value().at("type");
          if (ty.is_array())
            for (const auto& x : ty) p.types.push_back(x.get<std::string>());
          else
            p.types.push_back(ty.get<std::string>());
          p.description = it.value().value("description", "");
          p.required = std::find(req.begin(), req.end(), p.name) != req.end();
          s.params.push_back(std::move(p));
        }
        for (const auto& name : req)
          if (!s.param(name.get<std::string>()))
            throw Error(Errc::InvalidConfig, "tool '" + s.name + "' requires undeclared '" + name.get<std::string>() + "'");
        if (r.find(s.name)) throw Error(Errc::InvalidConfig, "duplicate tool '" + s.name + "'");
        r.tools_.push_back(std::move(s));
      }
    } catch (const json::exception& e) {
      throw Error(Errc::InvalidConfig, std::string("malformed tool registry: ") + e.what());
    }
    return r;
  }

  static ToolRegistry load_default() { return from_json(json::parse(load_asset("tools/registry.json"))); }

  const std::vector<ToolSpec>& tools() const noexcept { return tools_; }

  const ToolSpec* find(const std::string& name) const {
    for (const auto& t : tools_)
      if (t.name == name) return &t;
    return nullptr;
  }

  const ToolSpec& at(const std::string& name) const {
    if (const auto* t = find(name)) return *t;
    throw Error(Errc::UnknownTool, "unknown tool '" + name + "'; available: " + names());
  }

  // Checks a call against its spec and returns the arguments with elided
  // values removed.
  json validate(const ToolCall& call) const {
    const auto& spec = at(call.name);
    json out = json::object();
    for (auto it = call.args.begin(); it != call.args.end(); ++it) {
      const auto* p = spec.param(it.key());
      if (!p) throw Error(Errc::ArgumentValidation, call.name + ": unexpected argument '" + it.key() + "'");
      if (is_elided(it.value())) continue;
      if (std::none_of(p->types.begin(), p->types.end(),
                       [&](const std::string& t) { return detail::json_has_type(it.value(), t); }))
        throw Error(Errc::ArgumentValidation, call.name + ": argument '" + it.key() + "' must be of type " +
                                                  join_types(p->types));
      out[it.key()] = it.value();
    }
    for (const auto& p : spec.params)
      if (p.required && !out.contains(p.name))
        throw Error(Errc::ArgumentValidation, call.name + ": missing required argument '" + p.name + "'");
    return out;
  }

  std::string names() const {
    std::string s;
    for (const auto& t : tools_) s += (s.empty() ? "" : ", ") + t.name;
    return s;
  }

  // One block per tool: name, description and the parameter schema.
  std::string describe() const {
    std::string s;
    for (const auto& t : tools_) s += "- " + t.name + ": " + t.description + "\n  Parameters: " + t.schema.dump() + "\n";
    return s;
  }

 private:
  static std::string join_types(const std::vector<std::string>& ts) {
    std::string s;
    for (const auto& t : ts) s += (s.empty() ? "" : " or ") + t;
    return s;
  }

  std::vector<ToolSpec> tools_;
};

}  // namespace vg
