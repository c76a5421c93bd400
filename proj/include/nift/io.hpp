#pragma once

#include "nift/geometry.hpp"
#include "nift/kdtree.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace nift {

enum class MeshFormat { obj, ply };

inline MeshFormat format_from_path(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".obj") return MeshFormat::obj;
  if (ext == ".ply") return MeshFormat::ply;
  throw Error("unknown geometry format: " + path.string());
}

// Raw contents of a mesh/point file before kind resolution.
struct RawGeometry {
  Points vertices;
  std::vector<std::array<int, 3>> triangles;
  std::map<std::string, std::vector<double>> vertex_scalars;
};

namespace detail {

inline void add_polygon(std::vector<std::array<int, 3>>& tris, const std::vector<int>& poly) {
  for (std::size_t i = 1; i + 1 < poly.size(); ++i) tris.push_back({poly[0], poly[i], poly[i + 1]});
}

inline RawGeometry read_obj(std::istream& in) {
  RawGeometry raw;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 v;
      if (!(ls >> v.x() >> v.y() >> v.z())) throw Error("OBJ parse error at line " + std::to_string(lineno));
      raw.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<int> poly;
      std::string tok;
      while (ls >> tok) {
        int idx = 0;
        try {
          idx = std::stoi(tok.substr(0, tok.find('/')));
        } catch (const std::exception&) {
          throw Error("OBJ parse error at line " + std::to_string(lineno));
        }
        idx = idx < 0 ? static_cast<int>(raw.vertices.size()) + idx : idx - 1;
        poly.push_back(idx);
      }
      if (poly.size() < 3) throw Error("OBJ face with fewer than 3 vertices at line " + std::to_string(lineno));
      add_polygon(raw.triangles, poly);
    }
  }
  return raw;
}

struct PlyProperty {
  std::string name, type, list_count_type;
  bool is_list = false;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
};

inline std::size_t ply_type_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "float" || t == "int32" || t == "uint32" || t == "float32") return 4;
  if (t == "double" || t == "float64") return 8;
  throw Error("unsupported PLY type: " + t);
}

inline double ply_read_binary(std::istream& in, const std::string& t) {
  static_assert(std::endian::native == std::endian::little, "binary PLY reader assumes a little-endian host");
  unsigned char buf[8];
  const std::size_t n = ply_type_size(t);
  if (!in.read(reinterpret_cast<char*>(buf), static_cast<std::streamsize>(n))) throw Error("PLY: truncated binary data");
  auto as = [&]<class T>(T) {
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return static_cast<double>(v);
  };
  if (t == "char" || t == "int8") return as(std::int8_t{});
  if (t == "uchar" || t == "uint8") return as(std::uint8_t{});
  if (t == "short" || t == "int16") return as(std::int16_t{});
  if (t == "ushort" || t == "uint16") return as(std::uint16_t{});
  if (t == "int" || t == "int32") return as(std::int32_t{});
  if (t == "uint" || t == "uint32") return as(std::uint32_t{});
  if (t == "float" || t == "float32") return as(float{});
  return as(double{});
}

inline RawGeometry read_ply(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0) throw Error("PLY: missing magic");
  std::string format;
  std::vector<PlyElement> elements;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "format") {
      ls >> format;
    } else if (tag == "element") {
      PlyElement e;
      ls >> e.name >> e.count;
      elements.push_back(e);
    } else if (tag == "property") {
      if (elements.empty()) throw Error("PLY: property before element");
      PlyProperty p;
      std::string t;
      ls >> t;
      if (t == "list") {
        p.is_list = true;
        ls >> p.list_count_type >> p.type >> p.name;
      } else {
        p.type = t;
        ls >> p.name;
      }
      elements.back().props.push_back(p);
    } else if (tag == "end_header") {
      break;
    }
  }
  if (format != "ascii" && format != "binary_little_endian") throw Error("PLY: unsupported format '" + format + "'");
  const bool ascii = format == "ascii";

  RawGeometry raw;
  std::istringstream* ascii_line = nullptr;
  std::istringstream holder;
  auto next_value = [&](const std::string& type) -> double {
    if (!ascii) return ply_read_binary(in, type);
    double v;
    while (!(*ascii_line >> v)) {
      std::string l;
      if (!std::getline(in, l)) throw Error("PLY: truncated ascii data");
      holder = std::istringstream(l);
      ascii_line = &holder;
    }
    return v;
  };
  holder = std::istringstream("");
  ascii_line = &holder;

  for (const auto& e : elements) {
    for (std::size_t r = 0; r < e.count; ++r) {
      if (e.name == "vertex") {
        Vec3 v = Vec3::Zero();
        for (const auto& p : e.props) {
          if (p.is_list) {
            auto n = static_cast<std::size_t>(next_value(p.list_count_type));
            for (std::size_t k = 0; k < n; ++k) next_value(p.type);
            continue;
          }
          double x = next_value(p.type);
          if (p.name == "x") v.x() = x;
          else if (p.name == "y") v.y() = x;
          else if (p.name == "z") v.z() = x;
          else raw.vertex_scalars[p.name].push_back(x);
        }
        raw.vertices.push_back(v);
      } else if (e.name == "face") {
        for (const auto& p : e.props) {
          if (!p.is_list) {
            next_value(p.type);
            continue;
          }
          auto n = static_cast<std::size_t>(next_value(p.list_count_type));
          std::vector<int> poly(n);
          for (std::size_t k = 0; k < n; ++k) poly[k] = static_cast<int>(next_value(p.type));
          if (p.name == "vertex_indices" || p.name == "vertex_index") {
            if (n < 3) throw Error("PLY face with fewer than 3 vertices");
            add_polygon(raw.triangles, poly);
          }
        }
      } else {
        for (const auto& p : e.props) {
          if (p.is_list) {
            auto n = static_cast<std::size_t>(next_value(p.list_count_type));
            for (std::size_t k = 0; k < n; ++k) next_value(p.type);
          } else {
            next_value(p.type);
          }
        }
      }
    }
  }
  return raw;
}

}  // namespace detail

inline RawGeometry read_raw_geometry(const std::filesystem::path& path, MeshFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return format == MeshFormat::obj ? detail::read_obj(in) : detail::read_ply(in);
}

// Splat radius used when a point-only file is loaded without one: half the
// median nearest-neighbour spacing.
inline double auto_splat_radius(const Points& pts) { return 0.5 * median_nn_spacing(pts); }

// Loads a mesh, or a splat cloud for point-only files. A non-positive or
// absent splat_radius selects the automatic radius.
inline Geometry load_geometry(const std::filesystem::path& path, std::optional<MeshFormat> format = std::nullopt,
                              std::optional<double> splat_radius = std::nullopt) {
  RawGeometry raw = read_raw_geometry(path, format.value_or(format_from_path(path)));
  if (raw.vertices.empty()) throw Error("empty geometry");
  Geometry g;
  if (!raw.triangles.empty()) {
    g = make_mesh(std::move(raw.vertices), std::move(raw.triangles));
  } else {
    double r = splat_radius.value_or(0.0);
    if (!(r > 0.0)) r = auto_splat_radius(raw.vertices);
    g = make_splat_cloud(std::move(raw.vertices), r);
  }
  validate(g);
  return g;
}

inline Points load_points(const std::filesystem::path& path) {
  auto raw = read_raw_geometry(path, format_from_path(path));
  return raw.vertices;
}

// Writers ---------------------------------------------------------------------

inline void write_obj(const std::filesystem::path& path, const Geometry& g) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  for (const auto& v : g.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& t : g.triangles) out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
}

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

struct PlyWriteOptions {
  bool binary = false;
  const std::vector<Rgb>* colors = nullptr;
  std::vector<std::pair<std::string, const std::vector<double>*>> scalars;
};

inline void write_ply(const std::filesystem::path& path, const Points& vertices,
                      const std::vector<std::array<int, 3>>& triangles = {}, const PlyWriteOptions& opt = {}) {
  const std::size_t n = vertices.size();
  if (opt.colors && opt.colors->size() != n) throw Error("PLY: color count mismatch");
  for (const auto& [name, vals] : opt.scalars)
    if (vals->size() != n) throw Error("PLY: scalar '" + name + "' count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "ply\nformat " << (opt.binary ? "binary_little_endian" : "ascii") << " 1.0\n";
  out << "element vertex " << n << "\nproperty double x\nproperty double y\nproperty double z\n";
  for (const auto& s : opt.scalars) out << "property double " << s.first << '\n';
  if (opt.colors) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  if (!triangles.empty()) out << "element face " << triangles.size() << "\nproperty list uchar int vertex_indices\n";
  out << "end_header\n";
  auto put = [&](auto v) { out.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
  if (!opt.binary) out.precision(17);
  for (std::size_t i = 0; i < n; ++i) {
    if (opt.binary) {
      for (int a = 0; a < 3; ++a) put(vertices[i][a]);
      for (const auto& s : opt.scalars) put((*s.second)[i]);
      if (opt.colors) put((*opt.colors)[i].r), put((*opt.colors)[i].g), put((*opt.colors)[i].b);
    } else {
      out << vertices[i].x() << ' ' << vertices[i].y() << ' ' << vertices[i].z();
      for (const auto& s : opt.scalars) out << ' ' << (*s.second)[i];
      if (opt.colors)
        out << ' ' << int((*opt.colors)[i].r) << ' ' << int((*opt.colors)[i].g) << ' ' << int((*opt.colors)[i].b);
      out << '\n';
    }
  }
  for (const auto& t : triangles) {
    if (opt.binary) {
      put(std::uint8_t{3});
      for (int k : t) put(std::int32_t{k});
    } else {
      out << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
    }
  }
}

inline void write_geometry(const std::filesystem::path& path, const Geometry& g) {
  if (format_from_path(path) == MeshFormat::obj) write_obj(path, g);
  else write_ply(path, g.vertices, g.triangles);
}

}  // namespace nift
