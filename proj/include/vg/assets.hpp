#pragma once

// Access to the prompt templates, skill document and tool registry. The
// compiled-in copies are used unless VG_ASSET_DIR_OVERRIDE points at a
// directory with the same layout.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>

#include "vg/embedded_assets.hpp"
#include "vg/error.hpp"

namespace vg {

inline std::string load_asset(std::string_view rel) {
  if (const char* dir = std::getenv("VG_ASSET_DIR_OVERRIDE"); dir && *dir) {
    const auto p = std::filesystem::path(dir) / rel;
    std::ifstream is(p, std::ios::binary);
    if (!is) throw Error(Errc::MissingManifest, "missing asset " + p.string());
    return {std::istreambuf_iterator<char>(is), {}};
  }
  for (const auto& [name, body] : assets::kEmbedded)
    if (name == rel) return std::string(body);
  throw Error(Errc::MissingManifest, "unknown asset " + std::string(rel));
}

// Replaces each {key} with its value. Unknown placeholders are left intact,
// so literal braces in prompt text (JSON examples) survive.
inline std::string fill_template(std::string_view tpl, const std::map<std::string, std::string>& vars) {
  std::string out;
  out.reserve(tpl.size());
  std::size_t i = 0;
  while (i < tpl.size()) {
    if (tpl[i] == '{') {
      const auto close = tpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        const std::string key(tpl.substr(i + 1, close - i - 1));
        if (auto it = vars.find(key); it != vars.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out += tpl[i++];
  }
  return out;
}

}  // namespace vg
