#pragma once

// Thought/Action grammar of the planner loop.
//
//   <tool_name>(<json object>)   tool call
//   Finish[<payload>]            task done; payload brackets must balance
//   Abort[<reason>]              task cannot be completed
//
// Only the text after the last "Action:" label is parsed (the whole text when
// there is no label), and only up to the end of the action construct; the
// rest of that line must be blank, later lines are ignored. A bare `...`
// inside the JSON marks elided arguments and is dropped before parsing.

#include <nlohmann/json.hpp>

#include <cctype>
#include <string>
#include <string_view>
#include <variant>

#include "vg/error.hpp"

namespace vg {

using nlohmann::json;

struct ToolCall {
  std::string name;
  json args = json::object();
  bool operator==(const ToolCall&) const = default;
};

struct Finish {
  std::string message;
  bool operator==(const Finish&) const = default;
};

struct Abort {
  std::string reason;
  bool operator==(const Abort&) const = default;
};

using AgentAction = std::variant<ToolCall, Finish, Abort>;

// String value that stands for an argument the planner left out.
inline constexpr std::string_view kElided = "...";

inline bool is_elided(const json& v) { return v.is_string() && v.get<std::string>() == kElided; }

namespace detail {

inline Error action_error(const std::string& why) { return Error(Errc::ActionParseError, why); }

// Text after the last "Action:" label (markdown emphasis around it allowed).
inline std::string_view action_region(std::string_view text) {
  std::size_t best = std::string_view::npos;
  for (std::size_t pos = text.find("Action:"); pos != std::string_view::npos; pos = text.find("Action:", pos + 1))
    best = pos;
  if (best == std::string_view::npos) return text;
  std::string_view rest = text.substr(best + 7);
  while (!rest.empty() && (rest.front() == '*' || rest.front() == '`' || std::isspace(static_cast<unsigned char>(rest.front()))))
    rest.remove_prefix(1);
  return rest;
}

// Index one past the delimiter closing the one at `open`, honoring JSON
// strings when `json_strings` is set.
inline std::size_t match_close(std::string_view s, std::size_t open, char o, char c, bool json_strings) {
  int depth = 0;
  bool in_str = false;
  for (std::size_t i = open; i < s.size(); ++i) {
    const char ch = s[i];
    if (in_str) {
      if (ch == '\\') ++i;
      else if (ch == '"') in_str = false;
      continue;
    }
    if (json_strings && ch == '"') in_str = true;
    else if (ch == o) ++depth;
    else if (ch == c && --depth == 0) return i + 1;
  }
  throw action_error(std::string("unbalanced '") + o + "'");
}

// Drops bare `...` tokens outside strings together with the comma that
// separated them from a neighbouring member.
inline std::string strip_elisions(std::string_view s) {
  std::string out;
  bool in_str = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char ch = s[i];
    if (in_str) {
      out += ch;
      if (ch == '\\' && i + 1 < s.size()) out += s[++i];
      else if (ch == '"') in_str = false;
      continue;
    }
    if (ch == '"') {
      in_str = true;
      out += ch;
    } else if (s.substr(i, 3) == "...") {
      i += 2;
      // Remove a comma already emitted before the token.
      auto k = out.find_last_not_of(" \t\r\n");
      if (k != std::string::npos && out[k] == ',') out.erase(k);
      else {
        // Otherwise swallow the comma that follows it.
        auto j = i + 1;
        while (j < s.size() && std::isspace(static_cast<unsigned char>(s[j]))) ++j;
        if (j < s.size() && s[j] == ',') i = j;
      }
    } else {
      out += ch;
    }
  }
  return out;
}

inline void expect_line_end(std::string_view s, std::size_t from) {
  for (std::size_t i = from; i < s.size() && s[i] != '\n'; ++i)
    if (!std::isspace(static_cast<unsigned char>(s[i])) && s[i] != '`' && s[i] != '*')
      throw action_error("unexpected text after the action: '" + std::string(s.substr(i, 40)) + "'");
}

inline bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
inline bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

}  // namespace detail

inline AgentAction parse_action(std::string_view text) {
  const std::string_view s = detail::action_region(text);
  if (s.empty()) throw detail::action_error("empty action");
  if (!detail::ident_start(s.front())) throw detail::action_error("action must start with a name");
  std::size_t i = 0;
  while (i < s.size() && detail::ident_char(s[i])) ++i;
  const std::string name(s.substr(0, i));
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
  if (i >= s.size()) throw detail::action_error("'" + name + "' is not followed by '(' or '['");

  if (s[i] == '[') {
    if (name != "Finish" && name != "Abort")
      throw detail::action_error("only Finish and Abort take a bracketed payload, not '" + name + "'");
    const std::size_t end = detail::match_close(s, i, '[', ']', false);
    detail::expect_line_end(s, end);
    std::string payload(s.substr(i + 1, end - i - 2));
    if (name == "Finish") return Finish{std::move(payload)};
    return Abort{std::move(payload)};
  }
  if (s[i] != '(') throw detail::action_error("'" + name + "' is not followed by '(' or '['");
  const std::size_t open = i++;
  while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
  if (i >= s.size() || s[i] != '{') throw detail::action_error("tool input for '" + name + "' must be a JSON object");
  const std::size_t obj_end = detail::match_close(s, i, '{', '}', true);
  std::size_t j = obj_end;
  while (j < s.size() && std::isspace(static_cast<unsigned char>(s[j]))) ++j;
  if (j >= s.size() || s[j] != ')') throw detail::action_error("unbalanced '(' after '" + name + "'");
  detail::expect_line_end(s, j + 1);
  (void)open;
  json args;
  try {
    args = json::parse(detail::strip_elisions(s.substr(i, obj_end - i)));
  } catch (const json::parse_error& e) {
    throw detail::action_error("tool input for '" + name + "' is not valid JSON: " + e.what());
  }
  if (!args.is_object()) throw detail::action_error("tool input for '" + name + "' must be a JSON object");
  return ToolCall{name, std::move(args)};
}

inline std::string render_action(const AgentAction& a) {
  if (const auto* t = std::get_if<ToolCall>(&a)) return t->name + "(" + t->args.dump() + ")";
  if (const auto* f = std::get_if<Finish>(&a)) return "Finish[" + f->message + "]";
  return "Abort[" + std::get<Abort>(a).reason + "]";
}

inline json action_to_json(const AgentAction& a) {
  if (const auto* t = std::get_if<ToolCall>(&a)) return {{"type", "tool"}, {"name", t->name}, {"args", t->args}};
  if (const auto* f = std::get_if<Finish>(&a)) return {{"type", "finish"}, {"message", f->message}};
  return {{"type", "abort"}, {"reason", std::get<Abort>(a).reason}};
}

}  // namespace vg
