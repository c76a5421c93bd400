#pragma once

#include "nift/geometry.hpp"

#include <map>
#include <queue>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace nift {

// Mesh utilities ------------------------------------------------------------

inline double signed_volume(const Geometry& g) {
  double v = 0.0;
  for (const auto& t : g.triangles)
    v += g.vertices[t[0]].dot(g.vertices[t[1]].cross(g.vertices[t[2]])) / 6.0;
  return v;
}

struct EdgeStats {
  std::size_t edges = 0;
  std::size_t boundary = 0;       // edges with one incident face
  std::size_t non_manifold = 0;   // edges with more than two
};

inline EdgeStats edge_stats(const Geometry& g) {
  std::map<std::pair<int, int>, int> count;
  for (const auto& t : g.triangles)
    for (int k = 0; k < 3; ++k) {
      int a = t[k], b = t[(k + 1) % 3];
      ++count[{std::min(a, b), std::max(a, b)}];
    }
  EdgeStats s;
  s.edges = count.size();
  for (const auto& [e, c] : count) {
    if (c == 1) ++s.boundary;
    if (c > 2) ++s.non_manifold;
  }
  return s;
}

// V - E + F over the vertices referenced by triangles.
inline long euler_characteristic(const Geometry& g) {
  std::vector<char> used(g.vertices.size(), 0);
  for (const auto& t : g.triangles)
    for (int i : t) used[i] = 1;
  long v = std::count(used.begin(), used.end(), 1);
  return v - static_cast<long>(edge_stats(g).edges) + static_cast<long>(g.triangles.size());
}

// Drops vertices not referenced by any triangle.
inline void compact_vertices(Geometry& g) {
  std::vector<int> remap(g.vertices.size(), -1);
  Points kept;
  for (auto& t : g.triangles)
    for (int& i : t) {
      if (remap[i] < 0) {
        remap[i] = static_cast<int>(kept.size());
        kept.push_back(g.vertices[i]);
      }
      i = remap[i];
    }
  g.vertices = std::move(kept);
}

// Makes face winding consistent within each connected component and
// outward-facing (positive signed volume per component).
inline void orient_outward(Geometry& g) {
  const std::size_t nf = g.triangles.size();
  std::map<std::pair<int, int>, std::vector<std::size_t>> edge_faces;
  for (std::size_t f = 0; f < nf; ++f)
    for (int k = 0; k < 3; ++k) {
      int a = g.triangles[f][k], b = g.triangles[f][(k + 1) % 3];
      edge_faces[{std::min(a, b), std::max(a, b)}].push_back(f);
    }
  auto has_directed = [&](std::size_t f, int a, int b) {
    const auto& t = g.triangles[f];
    for (int k = 0; k < 3; ++k)
      if (t[k] == a && t[(k + 1) % 3] == b) return true;
    return false;
  };
  std::vector<int> component(nf, -1);
  int ncomp = 0;
  for (std::size_t seed = 0; seed < nf; ++seed) {
    if (component[seed] >= 0) continue;
    std::queue<std::size_t> q;
    q.push(seed);
    component[seed] = ncomp;
    while (!q.empty()) {
      std::size_t f = q.front();
      q.pop();
      for (int k = 0; k < 3; ++k) {
        int a = g.triangles[f][k], b = g.triangles[f][(k + 1) % 3];
        for (std::size_t h : edge_faces[{std::min(a, b), std::max(a, b)}]) {
          if (h == f || component[h] >= 0) continue;
          if (has_directed(h, a, b)) std::swap(g.triangles[h][1], g.triangles[h][2]);
          component[h] = ncomp;
          q.push(h);
        }
      }
    }
    ++ncomp;
  }
  std::vector<double> vol(ncomp, 0.0);
  for (std::size_t f = 0; f < nf; ++f) {
    const auto& t = g.triangles[f];
    vol[component[f]] += g.vertices[t[0]].dot(g.vertices[t[1]].cross(g.vertices[t[2]]));
  }
  for (std::size_t f = 0; f < nf; ++f)
    if (vol[component[f]] < 0.0) std::swap(g.triangles[f][1], g.triangles[f][2]);
}

// Primitive meshes ----------------------------------------------------------

inline Geometry box_mesh(const Vec3& lo, const Vec3& hi) {
  Points v;
  for (int i = 0; i < 8; ++i)
    v.emplace_back(i & 1 ? hi.x() : lo.x(), i & 2 ? hi.y() : lo.y(), i & 4 ? hi.z() : lo.z());
  std::vector<std::array<int, 3>> t = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
                                       {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
  Geometry g = make_mesh(std::move(v), std::move(t));
  orient_outward(g);
  return g;
}

// Unit-cube mesh [0,1]^3: 8 vertices, 12 triangles.
inline Geometry unit_cube() { return box_mesh(Vec3::Zero(), Vec3::Ones()); }

// Subdivided icosahedron projected to a sphere; level 4 has 2562 vertices.
inline Geometry icosphere(int level, double radius = 1.0, const Vec3& center = Vec3::Zero()) {
  const double p = (1.0 + std::sqrt(5.0)) / 2.0;
  Points v = {{-1, p, 0}, {1, p, 0}, {-1, -p, 0}, {1, -p, 0}, {0, -1, p}, {0, 1, p},
              {0, -1, -p}, {0, 1, -p}, {p, 0, -1}, {p, 0, 1}, {-p, 0, -1}, {-p, 0, 1}};
  for (auto& x : v) x.normalize();
  std::vector<std::array<int, 3>> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                                       {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                                       {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                                       {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int it = 0; it < level; ++it) {
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
      auto key = std::make_pair(std::min(a, b), std::max(a, b));
      auto found = mid.find(key);
      if (found != mid.end()) return found->second;
      v.push_back((v[a] + v[b]).normalized());
      return mid[key] = static_cast<int>(v.size()) - 1;
    };
    std::vector<std::array<int, 3>> nf;
    for (auto t : f) {
      int a = midpoint(t[0], t[1]), b = midpoint(t[1], t[2]), c = midpoint(t[2], t[0]);
      nf.push_back({t[0], a, c});
      nf.push_back({t[1], b, a});
      nf.push_back({t[2], c, b});
      nf.push_back({a, b, c});
    }
    f = std::move(nf);
  }
  for (auto& x : v) x = center + radius * x;
  Geometry g = make_mesh(std::move(v), std::move(f));
  orient_outward(g);
  return g;
}

// Closed surface of revolution about +z from a profile in (r, z) whose first
// and last points lie on the axis. Returns the mesh and the vertex index of
// every (profile point, segment) pair (-1 for axis points).
struct Revolved {
  Geometry mesh;
  std::vector<std::vector<int>> ring;  // ring[k][j]
};

inline Revolved revolve(const std::vector<Eigen::Vector2d>& profile, int segments, double phase = 0.0) {
  if (profile.size() < 3 || profile.front().x() != 0.0 || profile.back().x() != 0.0)
    throw Error("revolve: profile must start and end on the axis");
  Revolved out;
  Points& v = out.mesh.vertices;
  const std::size_t k_last = profile.size() - 1;
  out.ring.assign(profile.size(), std::vector<int>(segments, -1));
  v.emplace_back(0.0, 0.0, profile.front().y());
  const int pole0 = 0;
  for (std::size_t k = 1; k < k_last; ++k)
    for (int j = 0; j < segments; ++j) {
      double phi = phase + 2.0 * std::numbers::pi * j / segments;
      out.ring[k][j] = static_cast<int>(v.size());
      v.emplace_back(profile[k].x() * std::cos(phi), profile[k].x() * std::sin(phi), profile[k].y());
    }
  v.emplace_back(0.0, 0.0, profile.back().y());
  const int pole1 = static_cast<int>(v.size()) - 1;
  auto& t = out.mesh.triangles;
  for (int j = 0; j < segments; ++j) {
    int jn = (j + 1) % segments;
    t.push_back({pole0, out.ring[1][jn], out.ring[1][j]});
    for (std::size_t k = 1; k + 1 < k_last; ++k) {
      t.push_back({out.ring[k][j], out.ring[k][jn], out.ring[k + 1][jn]});
      t.push_back({out.ring[k][j], out.ring[k + 1][jn], out.ring[k + 1][j]});
    }
    t.push_back({pole1, out.ring[k_last - 1][j], out.ring[k_last - 1][jn]});
  }
  out.mesh.kind = GeometryKind::mesh;
  return out;
}

// Appends points from a to b (excluding a) subdivided to spacing <= h.
inline void append_segment(std::vector<Eigen::Vector2d>& prof, const Eigen::Vector2d& b, double h) {
  const Eigen::Vector2d a = prof.back();
  int n = std::max(1, static_cast<int>(std::ceil((b - a).norm() / h - 1e-9)));
  for (int i = 1; i <= n; ++i) prof.push_back(a + (b - a) * (static_cast<double>(i) / n));
}

// Parametric shapes -----------------------------------------------------------

enum class ShapeKind { mug, bowl, bottle, rack, gripper };

inline std::string to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::mug: return "mug";
    case ShapeKind::bowl: return "bowl";
    case ShapeKind::bottle: return "bottle";
    case ShapeKind::rack: return "rack";
    case ShapeKind::gripper: return "gripper-proxy";
  }
  return "?";
}

inline ShapeKind shape_kind_from_string(const std::string& s) {
  if (s == "mug") return ShapeKind::mug;
  if (s == "bowl") return ShapeKind::bowl;
  if (s == "bottle") return ShapeKind::bottle;
  if (s == "rack") return ShapeKind::rack;
  if (s == "gripper-proxy" || s == "gripper") return ShapeKind::gripper;
  throw Error("unknown shape kind: " + s);
}

// Parameter ranges per kind, {name, {lo, default, hi}}. All lengths in model
// units before the uniform scale is applied.
struct ParamRange {
  double lo, def, hi;
};

inline const std::map<std::string, ParamRange>& shape_param_ranges(ShapeKind kind) {
  static const std::map<ShapeKind, std::map<std::string, ParamRange>> table = {
      {ShapeKind::mug,
       {{"radius", {0.32, 0.40, 0.48}},
        {"height", {0.75, 0.90, 1.10}},
        {"wall", {0.035, 0.05, 0.065}},
        {"bottom", {0.05, 0.07, 0.09}},
        {"handle_reach", {0.16, 0.22, 0.28}},
        {"handle_low", {0.20, 0.25, 0.32}},
        {"handle_high", {0.62, 0.70, 0.78}}}},
      {ShapeKind::bowl,
       {{"radius", {0.45, 0.55, 0.65}},
        {"height", {0.28, 0.35, 0.45}},
        {"foot", {0.18, 0.25, 0.32}},
        {"wall", {0.035, 0.05, 0.065}}}},
      {ShapeKind::bottle,
       {{"radius", {0.22, 0.28, 0.34}},
        {"body", {0.55, 0.70, 0.85}},
        {"shoulder", {0.12, 0.18, 0.24}},
        {"neck_radius", {0.08, 0.10, 0.13}},
        {"neck", {0.15, 0.22, 0.30}}}},
      {ShapeKind::rack,
       {{"post_height", {1.0, 1.2, 1.4}},
        {"post_width", {0.06, 0.08, 0.10}},
        {"peg_length", {0.25, 0.35, 0.45}},
        {"peg_width", {0.03, 0.04, 0.05}},
        {"peg_height", {0.75, 0.9, 1.05}}}},
      {ShapeKind::gripper,
       {{"palm_width", {0.34, 0.40, 0.46}},
        {"palm_depth", {0.10, 0.12, 0.14}},
        {"palm_height", {0.08, 0.10, 0.12}},
        {"finger_gap", {0.18, 0.22, 0.26}},
        {"finger_length", {0.22, 0.26, 0.30}},
        {"finger_width", {0.035, 0.04, 0.05}},
        {"finger_depth", {0.08, 0.10, 0.12}}}},
  };
  return table.at(kind);
}

struct ShapeSpec {
  ShapeKind kind = ShapeKind::mug;
  std::map<std::string, double> params;  // missing keys take defaults
  double scale = 1.0;
  RigidTransform pose;
  std::uint64_t seed = 0;
  int segments = 48;

  double param(const std::string& name) const {
    auto it = params.find(name);
    if (it != params.end()) return it->second;
    return shape_param_ranges(kind).at(name).def;
  }
};

inline void validate(const ShapeSpec& spec) {
  const auto& ranges = shape_param_ranges(spec.kind);
  for (const auto& [name, value] : spec.params) {
    auto it = ranges.find(name);
    if (it == ranges.end()) throw Error("unknown parameter '" + name + "' for " + to_string(spec.kind));
    if (value < it->second.lo - 1e-12 || value > it->second.hi + 1e-12)
      throw Error("parameter '" + name + "' out of range for " + to_string(spec.kind));
  }
  if (!(spec.scale > 0.0)) throw Error("shape scale must be positive");
  if (spec.segments < 12 || spec.segments % 4 != 0) throw Error("segments must be a multiple of 4, >= 12");
}

// Spec with every parameter drawn uniformly from its range.
template <class Rng>
ShapeSpec random_shape_spec(ShapeKind kind, Rng& rng) {
  ShapeSpec s;
  s.kind = kind;
  for (const auto& [name, r] : shape_param_ranges(kind)) {
    std::uniform_real_distribution<double> u(r.lo, r.hi);
    s.params[name] = u(rng);
  }
  return s;
}

namespace detail {

// Cup with a handle tube stitched into two 2x2-quad holes of the outer wall.
inline Geometry mug_mesh(const ShapeSpec& s) {
  const int S = s.segments;
  const double R = s.param("radius"), H = s.param("height"), w = s.param("wall"), b = s.param("bottom");
  const double h = 2.0 * std::numbers::pi * R / S;  // outer-wall grid spacing
  // Outer wall rings are placed exactly at multiples of h so that the holes
  // are square.
  const int wall_steps = std::max(6, static_cast<int>(std::round(H / h)));
  const double hz = H / wall_steps;
  std::vector<Eigen::Vector2d> prof = {{0.0, 0.0}};
  append_segment(prof, {R, 0.0}, h);
  const std::size_t wall_first = prof.size() - 1;
  for (int i = 1; i <= wall_steps; ++i) prof.emplace_back(R, hz * i);
  append_segment(prof, {R - w, H}, h);
  append_segment(prof, {R - w, b}, h);
  append_segment(prof, {0.0, b}, h);
  // Phase puts segment index 1 at phi = 0 (handle side is +x).
  Revolved rev = revolve(prof, S, -2.0 * std::numbers::pi / S);
  Geometry& g = rev.mesh;

  int ra = static_cast<int>(std::round(s.param("handle_low") * H / hz)) - 1;
  int rb = static_cast<int>(std::round(s.param("handle_high") * H / hz)) - 1;
  ra = std::clamp(ra, 1, wall_steps - 6);
  rb = std::clamp(rb, ra + 3, wall_steps - 3);
  auto wall_vertex = [&](int row, int col) { return rev.ring[wall_first + row][col]; };
  // Remove the 2x2 quads (rows r..r+2, cols 0..2) at both holes.
  std::vector<char> in_block(g.vertices.size(), 0);
  auto mark = [&](int r, char tag) {
    for (int dr = 0; dr < 3; ++dr)
      for (int c = 0; c < 3; ++c) in_block[wall_vertex(r + dr, c)] = tag;
  };
  mark(ra, 1);
  mark(rb, 2);
  std::vector<std::array<int, 3>> kept;
  for (const auto& t : g.triangles) {
    char a = in_block[t[0]];
    if (a != 0 && in_block[t[1]] == a && in_block[t[2]] == a) continue;
    kept.push_back(t);
  }
  g.triangles = std::move(kept);

  const std::array<std::pair<int, int>, 8> loop = {
      {{0, 0}, {0, 1}, {0, 2}, {1, 2}, {2, 2}, {2, 1}, {2, 0}, {1, 0}}};
  std::array<int, 8> loop_a, loop_b;
  for (int k = 0; k < 8; ++k) {
    loop_a[k] = wall_vertex(ra + loop[k].first, loop[k].second);
    loop_b[k] = wall_vertex(rb + 2 - loop[k].first, loop[k].second);
  }
  const Vec3 ca = g.vertices[wall_vertex(ra + 1, 1)];
  const Vec3 cb = g.vertices[wall_vertex(rb + 1, 1)];
  const double reach = s.param("handle_reach");
  const double half = 0.5 * (cb.z() - ca.z());
  const double zc = 0.5 * (ca.z() + cb.z());
  const double arc = std::numbers::pi * 0.5 * (reach + half);
  const int steps = std::max(8, static_cast<int>(std::ceil(arc / h)));
  std::vector<std::array<int, 8>> rings = {loop_a};
  for (int i = 1; i < steps; ++i) {
    double psi = std::numbers::pi * i / steps;
    Vec3 c(R + reach * std::sin(psi), 0.0, zc - half * std::cos(psi));
    double alpha = -std::atan2(half * std::sin(psi), reach * std::cos(psi));
    Mat3 rot = Eigen::AngleAxisd(alpha, Vec3::UnitY()).toRotationMatrix();
    std::array<int, 8> ring;
    for (int k = 0; k < 8; ++k) {
      ring[k] = static_cast<int>(g.vertices.size());
      g.vertices.push_back(c + rot * (g.vertices[loop_a[k]] - ca));
    }
    rings.push_back(ring);
  }
  rings.push_back(loop_b);
  for (std::size_t i = 0; i + 1 < rings.size(); ++i)
    for (int k = 0; k < 8; ++k) {
      int kn = (k + 1) % 8;
      g.triangles.push_back({rings[i][k], rings[i][kn], rings[i + 1][kn]});
      g.triangles.push_back({rings[i][k], rings[i + 1][kn], rings[i + 1][k]});
    }
  compact_vertices(g);
  return g;
}

inline Geometry bowl_mesh(const ShapeSpec& s) {
  const double R = s.param("radius"), H = s.param("height"), f = s.param("foot"), w = s.param("wall");
  const double h = 2.0 * std::numbers::pi * R / s.segments;
  std::vector<Eigen::Vector2d> prof = {{0.0, 0.0}};
  append_segment(prof, {f, 0.0}, h);
  const int n = std::max(8, static_cast<int>(std::ceil(0.5 * std::numbers::pi * H / h)));
  for (int i = 1; i <= n; ++i) {
    double u = 0.5 * std::numbers::pi * i / n;
    prof.emplace_back(f + (R - f) * std::sin(u), H * (1.0 - std::cos(u)));
  }
  const double fi = std::max(0.5 * f, f - w), Ri = R - w;
  append_segment(prof, {Ri, H}, h);
  for (int i = n - 1; i >= 0; --i) {
    double u = 0.5 * std::numbers::pi * i / n;
    prof.emplace_back(fi + (Ri - fi) * std::sin(u), w + (H - w) * (1.0 - std::cos(u)));
  }
  append_segment(prof, {0.0, w}, h);
  return revolve(prof, s.segments).mesh;
}

inline Geometry bottle_mesh(const ShapeSpec& s) {
  const double R = s.param("radius"), body = s.param("body"), sh = s.param("shoulder");
  const double rn = s.param("neck_radius"), neck = s.param("neck");
  const double h = 2.0 * std::numbers::pi * R / s.segments;
  std::vector<Eigen::Vector2d> prof = {{0.0, 0.0}};
  append_segment(prof, {R, 0.0}, h);
  append_segment(prof, {R, body}, h);
  const int n = std::max(4, static_cast<int>(std::ceil(sh / h)));
  for (int i = 1; i <= n; ++i) {
    double u = static_cast<double>(i) / n;
    double blend = 0.5 - 0.5 * std::cos(std::numbers::pi * u);
    prof.emplace_back(R + (rn - R) * blend, body + sh * u);
  }
  append_segment(prof, {rn, body + sh + neck}, h);
  append_segment(prof, {0.0, body + sh + neck}, h);
  return revolve(prof, s.segments).mesh;
}

inline Geometry rack_mesh(const ShapeSpec& s) {
  const double ph = s.param("post_height"), pw = s.param("post_width");
  const double pl = s.param("peg_length"), pgw = s.param("peg_width"), pz = s.param("peg_height");
  Geometry base = box_mesh(Vec3(-0.3, -0.3, 0.0), Vec3(0.3, 0.3, 0.06));
  Geometry post = box_mesh(Vec3(-pw / 2, -pw / 2, 0.06), Vec3(pw / 2, pw / 2, 0.06 + ph));
  Geometry peg = box_mesh(Vec3(pw / 2, -pgw / 2, pz - pgw / 2), Vec3(pw / 2 + pl, pgw / 2, pz + pgw / 2));
  return merge_meshes(merge_meshes(base, post), peg);
}

// Two-finger gripper: palm box above the origin, fingers along -z at
// x = +-(gap + width)/2. The origin is the palm's bottom center.
inline Geometry gripper_mesh(const ShapeSpec& s) {
  const double pw = s.param("palm_width"), pd = s.param("palm_depth"), ph = s.param("palm_height");
  const double gap = s.param("finger_gap"), fl = s.param("finger_length");
  const double fw = s.param("finger_width"), fd = s.param("finger_depth");
  Geometry palm = box_mesh(Vec3(-pw / 2, -pd / 2, 0.0), Vec3(pw / 2, pd / 2, ph));
  Geometry left = box_mesh(Vec3(-gap / 2 - fw, -fd / 2, -fl), Vec3(-gap / 2, fd / 2, 0.0));
  Geometry right = box_mesh(Vec3(gap / 2, -fd / 2, -fl), Vec3(gap / 2 + fw, fd / 2, 0.0));
  return merge_meshes(merge_meshes(palm, left), right);
}

}  // namespace detail

// Watertight parametric mesh for a spec, scaled and posed. Deterministic.
inline Geometry gen_shape(const ShapeSpec& spec) {
  validate(spec);
  Geometry g;
  switch (spec.kind) {
    case ShapeKind::mug: g = detail::mug_mesh(spec); break;
    case ShapeKind::bowl: g = detail::bowl_mesh(spec); break;
    case ShapeKind::bottle: g = detail::bottle_mesh(spec); break;
    case ShapeKind::rack: g = detail::rack_mesh(spec); break;
    case ShapeKind::gripper: g = detail::gripper_mesh(spec); break;
  }
  orient_outward(g);
  for (auto& v : g.vertices) v = spec.pose(spec.scale * v);
  return g;
}

// Mug-specific frame data used to construct ground-truth rim grasps.
struct MugFrame {
  double outer_radius, inner_radius, height;
};

inline MugFrame mug_frame(const ShapeSpec& s) {
  return {s.scale * s.param("radius"), s.scale * (s.param("radius") - s.param("wall")), s.scale * s.param("height")};
}

}  // namespace nift
