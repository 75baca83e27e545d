#pragma once

// PLY persistence for point clouds: x,y,z as float32 plus optional
// red,green,blue as uint8, ASCII or binary little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "vg/cloud.hpp"
#include "vg/error.hpp"

namespace vg {

enum class PlyEncoding { Ascii, BinaryLittleEndian };

inline void write_ply(std::ostream& os, const PointCloud& pcd,
                      PlyEncoding enc = PlyEncoding::BinaryLittleEndian) {
  static_assert(std::endian::native == std::endian::little, "binary PLY writer assumes little-endian");
  const bool rgb = pcd.has_colors() && pcd.colors.size() == pcd.size();
  os << "ply\n"
     << (enc == PlyEncoding::Ascii ? "format ascii 1.0\n" : "format binary_little_endian 1.0\n")
     << "element vertex " << pcd.size() << "\n"
     << "property float x\nproperty float y\nproperty float z\n";
  if (rgb) os << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  os << "end_header\n";
  if (enc == PlyEncoding::Ascii) {
    std::ostringstream line;
    line.precision(9);
    for (std::size_t i = 0; i < pcd.size(); ++i) {
      line.str({});
      const auto& p = pcd.points[i];
      line << static_cast<float>(p.x()) << ' ' << static_cast<float>(p.y()) << ' '
           << static_cast<float>(p.z());
      if (rgb)
        line << ' ' << int(pcd.colors[i][0]) << ' ' << int(pcd.colors[i][1]) << ' '
             << int(pcd.colors[i][2]);
      line << '\n';
      os << line.str();
    }
  } else {
    for (std::size_t i = 0; i < pcd.size(); ++i) {
      const float xyz[3] = {static_cast<float>(pcd.points[i].x()),
                            static_cast<float>(pcd.points[i].y()),
                            static_cast<float>(pcd.points[i].z())};
      os.write(reinterpret_cast<const char*>(xyz), sizeof xyz);
      if (rgb) os.write(reinterpret_cast<const char*>(pcd.colors[i].data()), 3);
    }
  }
  if (!os) throw Error(Errc::IoFailure, "failed writing PLY stream");
}

inline void write_ply(const std::filesystem::path& path, const PointCloud& pcd,
                      PlyEncoding enc = PlyEncoding::BinaryLittleEndian) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(Errc::IoFailure, "cannot open " + path.string() + " for writing");
  write_ply(os, pcd, enc);
}

namespace detail {

enum class PlyType { I8, U8, I16, U16, I32, U32, F32, F64 };

inline bool ply_type_from(const std::string& s, PlyType& t) {
  if (s == "char" || s == "int8") t = PlyType::I8;
  else if (s == "uchar" || s == "uint8") t = PlyType::U8;
  else if (s == "short" || s == "int16") t = PlyType::I16;
  else if (s == "ushort" || s == "uint16") t = PlyType::U16;
  else if (s == "int" || s == "int32") t = PlyType::I32;
  else if (s == "uint" || s == "uint32") t = PlyType::U32;
  else if (s == "float" || s == "float32") t = PlyType::F32;
  else if (s == "double" || s == "float64") t = PlyType::F64;
  else return false;
  return true;
}

inline std::size_t ply_size(PlyType t) {
  switch (t) {
    case PlyType::I8: case PlyType::U8: return 1;
    case PlyType::I16: case PlyType::U16: return 2;
    case PlyType::I32: case PlyType::U32: case PlyType::F32: return 4;
    case PlyType::F64: return 8;
  }
  return 0;
}

template <typename T>
double read_le(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof v);
  return static_cast<double>(v);
}

inline double ply_decode(PlyType t, const char* p) {
  switch (t) {
    case PlyType::I8: return read_le<std::int8_t>(p);
    case PlyType::U8: return read_le<std::uint8_t>(p);
    case PlyType::I16: return read_le<std::int16_t>(p);
    case PlyType::U16: return read_le<std::uint16_t>(p);
    case PlyType::I32: return read_le<std::int32_t>(p);
    case PlyType::U32: return read_le<std::uint32_t>(p);
    case PlyType::F32: return read_le<float>(p);
    case PlyType::F64: return read_le<double>(p);
  }
  return 0;
}

}  // namespace detail

// Reads the vertex element; elements declared after it are ignored.
inline PointCloud read_ply(std::istream& is) {
  using detail::PlyType;
  std::string line;
  if (!std::getline(is, line) || line.rfind("ply", 0) != 0)
    throw Error(Errc::MalformedPly, "missing 'ply' magic");
  bool ascii = false, have_format = false, in_vertex = false, vertex_seen = false;
  std::size_t count = 0;
  struct Prop {
    std::string name;
    PlyType type;
  };
  std::vector<Prop> props;
  while (true) {
    if (!std::getline(is, line)) throw Error(Errc::MalformedPly, "unterminated header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw == "end_header") break;
    if (kw == "comment" || kw == "obj_info" || kw.empty()) continue;
    if (kw == "format") {
      std::string f;
      ls >> f;
      if (f == "ascii") ascii = true;
      else if (f != "binary_little_endian")
        throw Error(Errc::MalformedPly, "unsupported format '" + f + "'");
      have_format = true;
    } else if (kw == "element") {
      std::string name;
      ls >> name;
      in_vertex = name == "vertex" && !vertex_seen;
      if (in_vertex) {
        vertex_seen = true;
        if (!(ls >> count)) throw Error(Errc::MalformedPly, "bad vertex count");
      } else if (!vertex_seen) {
        throw Error(Errc::MalformedPly, "elements before 'vertex' are not supported");
      }
    } else if (kw == "property") {
      if (!in_vertex) continue;
      std::string type, name;
      ls >> type;
      if (type == "list") throw Error(Errc::MalformedPly, "list properties on vertices");
      ls >> name;
      PlyType t;
      if (!detail::ply_type_from(type, t))
        throw Error(Errc::MalformedPly, "unknown property type '" + type + "'");
      props.push_back({name, t});
    } else {
      throw Error(Errc::MalformedPly, "unexpected header line '" + line + "'");
    }
  }
  if (!have_format) throw Error(Errc::MalformedPly, "missing format line");
  int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1;
  for (int i = 0; i < static_cast<int>(props.size()); ++i) {
    const auto& n = props[i].name;
    if (n == "x") ix = i;
    else if (n == "y") iy = i;
    else if (n == "z") iz = i;
    else if (n == "red") ir = i;
    else if (n == "green") ig = i;
    else if (n == "blue") ib = i;
  }
  if (vertex_seen && (ix < 0 || iy < 0 || iz < 0))
    throw Error(Errc::MalformedPly, "vertex element lacks x/y/z");
  const bool rgb = ir >= 0 && ig >= 0 && ib >= 0;

  PointCloud out;
  out.points.reserve(count);
  if (rgb) out.colors.reserve(count);
  std::vector<double> vals(props.size());
  std::size_t stride = 0;
  for (const auto& p : props) stride += detail::ply_size(p.type);
  std::vector<char> buf(stride);
  for (std::size_t i = 0; i < count; ++i) {
    if (ascii) {
      if (!std::getline(is, line)) throw Error(Errc::MalformedPly, "truncated vertex data");
      std::istringstream ls(line);
      for (std::size_t j = 0; j < props.size(); ++j) {
        if (!(ls >> vals[j])) throw Error(Errc::MalformedPly, "short vertex line " + std::to_string(i));
        // Match binary decoding: the value is stored at its declared width.
        if (props[j].type == detail::PlyType::F32) vals[j] = static_cast<float>(vals[j]);
      }
    } else {
      if (!is.read(buf.data(), static_cast<std::streamsize>(stride)))
        throw Error(Errc::MalformedPly, "truncated binary vertex data");
      std::size_t off = 0;
      for (std::size_t j = 0; j < props.size(); ++j) {
        vals[j] = detail::ply_decode(props[j].type, buf.data() + off);
        off += detail::ply_size(props[j].type);
      }
    }
    out.points.emplace_back(vals[ix], vals[iy], vals[iz]);
    if (rgb)
      out.colors.push_back({static_cast<std::uint8_t>(vals[ir]), static_cast<std::uint8_t>(vals[ig]),
                            static_cast<std::uint8_t>(vals[ib])});
  }
  return out;
}

inline PointCloud read_ply(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(Errc::IoFailure, "cannot open " + path.string());
  return read_ply(is);
}

}  // namespace vg
