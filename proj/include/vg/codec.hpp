#pragma once

// Wire encodings: base64 for image payloads, run-length masks, FNV-1a
// digests for replay keys.

#include <openssl/evp.h>

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "vg/error.hpp"
#include "vg/grid.hpp"

namespace vg {

inline std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

inline std::string base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw Error(Errc::ProtocolError, "base64 length is not a multiple of 4");
  std::string out(3 * text.size() / 4, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw Error(Errc::ProtocolError, "invalid base64");
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Row-major run lengths, starting with a (possibly empty) run of zeros:
// {"size": [h, w], "counts": [z0, o0, z1, o1, ...]}.
inline nlohmann::json mask_to_rle(const Bitmap& m) {
  nlohmann::json counts = nlohmann::json::array();
  std::uint8_t cur = 0;
  std::size_t run = 0;
  for (auto b : m.data()) {
    const std::uint8_t bit = b ? 1 : 0;
    if (bit != cur) {
      counts.push_back(run);
      run = 0;
      cur = bit;
    }
    ++run;
  }
  counts.push_back(run);
  return {{"size", {m.height(), m.width()}}, {"counts", counts}};
}

inline Bitmap mask_from_rle(const nlohmann::json& rle) {
  try {
    const int h = rle.at("size").at(0).get<int>(), w = rle.at("size").at(1).get<int>();
    if (h < 0 || w < 0) throw Error(Errc::ProtocolError, "negative mask size");
    Bitmap m(w, h);
    std::size_t pos = 0;
    std::uint8_t bit = 0;
    for (const auto& c : rle.at("counts")) {
      const auto n = c.get<std::size_t>();
      if (pos + n > m.size()) throw Error(Errc::ProtocolError, "mask run overflows its size");
      std::fill_n(m.data().begin() + static_cast<std::ptrdiff_t>(pos), n, bit);
      pos += n;
      bit ^= 1;
    }
    if (pos != m.size()) throw Error(Errc::ProtocolError, "mask runs do not cover the image");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ProtocolError, std::string("bad mask RLE: ") + e.what());
  }
}

// {"size": [h, w], "rows": ["0110", ...]}.
inline Bitmap mask_from_rows(const nlohmann::json& bm) {
  try {
    const int h = bm.at("size").at(0).get<int>(), w = bm.at("size").at(1).get<int>();
    const auto& rows = bm.at("rows");
    if (static_cast<int>(rows.size()) != h) throw Error(Errc::ProtocolError, "bitmap row count mismatch");
    Bitmap m(w, h);
    for (int v = 0; v < h; ++v) {
      const auto row = rows[static_cast<std::size_t>(v)].get<std::string>();
      if (static_cast<int>(row.size()) != w) throw Error(Errc::ProtocolError, "bitmap row width mismatch");
      for (int u = 0; u < w; ++u) m.at(u, v) = row[static_cast<std::size_t>(u)] == '1';
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ProtocolError, std::string("bad mask bitmap: ") + e.what());
  }
}

}  // namespace vg
