#pragma once

#include "nift/geometry.hpp"

#include <algorithm>
#include <numeric>
#include <optional>
#include <vector>

namespace nift {

// Bounding-volume hierarchy over the triangles of a mesh or the splat
// spheres of a point cloud. Immutable after construction; every query gives
// the same answer as iterating over all primitives.
class RayAccelerator {
 public:
  explicit RayAccelerator(Geometry geom) : geom_(std::move(geom)) {
    validate(geom_);
    const std::size_t n = primitive_count();
    prims_.resize(n);
    std::iota(prims_.begin(), prims_.end(), 0u);
    boxes_.resize(n);
    centers_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      boxes_[i] = primitive_bounds(i);
      centers_[i] = boxes_[i].center();
    }
    nodes_.reserve(2 * n);
    nodes_.emplace_back();
    build_into(0, 0, static_cast<std::uint32_t>(n));
    sphere_ = nift::bounding_sphere(geom_);
  }

  const Geometry& geometry() const { return geom_; }
  const Sphere& bounding_sphere() const { return sphere_; }
  const Aabb& bounds() const { return nodes_.front().box; }

  // Smallest positive hit distance along a unit direction, or nullopt.
  std::optional<double> cast_ray(const Vec3& origin, const Vec3& dir) const {
    if (std::abs(dir.squaredNorm() - 1.0) > 2e-9) throw Error("ray direction is not normalized");
    double best = std::numeric_limits<double>::infinity();
    const Vec3 inv = dir.cwiseInverse();
    std::uint32_t stack[64];
    int sp = 0;
    stack[sp++] = 0;
    while (sp > 0) {
      const Node& node = nodes_[stack[--sp]];
      if (!slab_hit(node.box, origin, inv, best)) continue;
      if (node.count > 0) {
        for (std::uint32_t i = node.first; i < node.first + node.count; ++i) {
          double t = intersect(prims_[i], origin, dir);
          if (t < best) best = t;
        }
      } else {
        stack[sp++] = node.first;
        stack[sp++] = node.first + 1;
      }
    }
    if (std::isinf(best)) return std::nullopt;
    return best;
  }

  // Number of surface crossings along a ray (used for parity inside tests).
  int count_crossings(const Vec3& origin, const Vec3& dir) const {
    const Vec3 inv = dir.cwiseInverse();
    const double far = std::numeric_limits<double>::infinity();
    int count = 0;
    std::uint32_t stack[64];
    int sp = 0;
    stack[sp++] = 0;
    while (sp > 0) {
      const Node& node = nodes_[stack[--sp]];
      if (!slab_hit(node.box, origin, inv, far)) continue;
      if (node.count > 0) {
        for (std::uint32_t i = node.first; i < node.first + node.count; ++i)
          if (std::isfinite(intersect(prims_[i], origin, dir))) ++count;
      } else {
        stack[sp++] = node.first;
        stack[sp++] = node.first + 1;
      }
    }
    return count;
  }

  // Ray-parity inside test, majority vote over three skew directions. Only
  // meaningful for closed meshes.
  bool inside(const Vec3& p) const {
    static const Vec3 dirs[3] = {Vec3(0.5773502691896258, 0.5773502691896257, 0.5773502691896258),
                                 Vec3(-0.2672612419124244, 0.5345224838248488, -0.8017837257372732),
                                 Vec3(0.8164965809277261, -0.4082482904638631, -0.4082482904638629)};
    if (!geom_.is_mesh()) return nearest_distance(p) <= 0.0;
    int votes = 0;
    for (const auto& d : dirs) votes += count_crossings(p, d.normalized()) % 2;
    return votes >= 2;
  }

  // Exact distance to the surface: point-to-triangle for meshes, distance to
  // the nearest splat sphere (clamped at 0) for clouds.
  double nearest_distance(const Vec3& p) const {
    double best2 = std::numeric_limits<double>::infinity();
    std::uint32_t stack[64];
    int sp = 0;
    stack[sp++] = 0;
    while (sp > 0) {
      const Node& node = nodes_[stack[--sp]];
      if (node.box.squared_distance(p) >= best2) continue;
      if (node.count > 0) {
        for (std::uint32_t i = node.first; i < node.first + node.count; ++i)
          best2 = std::min(best2, primitive_sq_distance(prims_[i], p));
      } else {
        const Node& l = nodes_[node.first];
        const Node& r = nodes_[node.first + 1];
        // Visit the closer child first.
        if (l.box.squared_distance(p) < r.box.squared_distance(p)) {
          stack[sp++] = node.first + 1;
          stack[sp++] = node.first;
        } else {
          stack[sp++] = node.first;
          stack[sp++] = node.first + 1;
        }
      }
    }
    double d = std::sqrt(best2);
    if (!geom_.is_mesh()) d = std::max(0.0, d - geom_.splat_radius);
    return d;
  }

  // Brute-force reference versions of the queries.
  std::optional<double> cast_ray_brute(const Vec3& origin, const Vec3& dir) const {
    double best = std::numeric_limits<double>::infinity();
    for (std::uint32_t i = 0; i < primitive_count(); ++i) best = std::min(best, intersect(i, origin, dir));
    if (std::isinf(best)) return std::nullopt;
    return best;
  }
  double nearest_distance_brute(const Vec3& p) const {
    double best2 = std::numeric_limits<double>::infinity();
    for (std::uint32_t i = 0; i < primitive_count(); ++i) best2 = std::min(best2, primitive_sq_distance(i, p));
    double d = std::sqrt(best2);
    if (!geom_.is_mesh()) d = std::max(0.0, d - geom_.splat_radius);
    return d;
  }

  std::size_t primitive_count() const {
    return geom_.is_mesh() ? geom_.triangles.size() : geom_.vertices.size();
  }

  // Checks that every primitive lies within each ancestor node box.
  bool check_containment() const {
    for (const Node& node : nodes_) {
      auto [first, last] = leaf_range(node);
      for (std::uint32_t i = first; i < last; ++i) {
        Aabb b = boxes_[prims_[i]];
        if (!node.box.contains(b.lo, 1e-12) || !node.box.contains(b.hi, 1e-12)) return false;
      }
    }
    return true;
  }

 private:
  struct Node {
    Aabb box;
    std::uint32_t first = 0;  // child index (inner) or primitive offset (leaf)
    std::uint32_t count = 0;  // 0 for inner nodes
    std::uint32_t span_first = 0, span_count = 0;
  };

  static constexpr std::uint32_t kLeafSize = 4;

  std::pair<std::uint32_t, std::uint32_t> leaf_range(const Node& n) const {
    return {n.span_first, n.span_first + n.span_count};
  }

  Aabb primitive_bounds(std::size_t i) const {
    Aabb b;
    if (geom_.is_mesh()) {
      for (int v : geom_.triangles[i]) b.extend(geom_.vertices[v]);
    } else {
      const Vec3& c = geom_.vertices[i];
      b.extend(c - Vec3::Constant(geom_.splat_radius));
      b.extend(c + Vec3::Constant(geom_.splat_radius));
    }
    return b;
  }

  void build_into(std::uint32_t slot, std::uint32_t first, std::uint32_t count) {
    Aabb box, cbox;
    for (std::uint32_t i = first; i < first + count; ++i) {
      box.extend(boxes_[prims_[i]]);
      cbox.extend(centers_[prims_[i]]);
    }
    nodes_[slot].box = box;
    nodes_[slot].span_first = first;
    nodes_[slot].span_count = count;
    Vec3 ext = cbox.extent();
    int axis = 0;
    ext.maxCoeff(&axis);
    if (count <= kLeafSize || ext[axis] <= 0.0) {
      nodes_[slot].first = first;
      nodes_[slot].count = count;
      return;
    }
    const std::uint32_t mid = first + count / 2;
    std::nth_element(prims_.begin() + first, prims_.begin() + mid, prims_.begin() + first + count,
                     [&](std::uint32_t a, std::uint32_t b) { return centers_[a][axis] < centers_[b][axis]; });
    const std::uint32_t left = static_cast<std::uint32_t>(nodes_.size());
    nodes_.emplace_back();
    nodes_.emplace_back();
    nodes_[slot].first = left;
    build_into(left, first, mid - first);
    build_into(left + 1, mid, first + count - mid);
  }

  static bool slab_hit(const Aabb& b, const Vec3& o, const Vec3& inv, double tmax) {
    double t0 = 0.0, t1 = tmax;
    for (int a = 0; a < 3; ++a) {
      double ta = (b.lo[a] - o[a]) * inv[a];
      double tb = (b.hi[a] - o[a]) * inv[a];
      if (std::isnan(ta) || std::isnan(tb)) {
        // Zero direction component with origin on a slab plane.
        if (o[a] < b.lo[a] || o[a] > b.hi[a]) return false;
        continue;
      }
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
      if (t0 > t1) return false;
    }
    return true;
  }

  // Positive hit parameter, or +inf.
  double intersect(std::uint32_t i, const Vec3& o, const Vec3& d) const {
    constexpr double inf = std::numeric_limits<double>::infinity();
    constexpr double tmin = 1e-12;
    if (geom_.is_mesh()) {
      const auto& t = geom_.triangles[i];
      const Vec3& v0 = geom_.vertices[t[0]];
      Vec3 e1 = geom_.vertices[t[1]] - v0;
      Vec3 e2 = geom_.vertices[t[2]] - v0;
      Vec3 p = d.cross(e2);
      double det = e1.dot(p);
      if (std::abs(det) < 1e-300) return inf;
      double inv = 1.0 / det;
      Vec3 s = o - v0;
      double u = s.dot(p) * inv;
      if (u < 0.0 || u > 1.0) return inf;
      Vec3 q = s.cross(e1);
      double v = d.dot(q) * inv;
      if (v < 0.0 || u + v > 1.0) return inf;
      double tt = e2.dot(q) * inv;
      return tt > tmin ? tt : inf;
    }
    Vec3 oc = o - geom_.vertices[i];
    double r = geom_.splat_radius;
    double b = oc.dot(d);
    double c = oc.squaredNorm() - r * r;
    double disc = b * b - c;
    if (disc < 0.0) return inf;
    double sq = std::sqrt(disc);
    double t0 = -b - sq, t1 = -b + sq;
    if (t0 > tmin) return t0;
    if (t1 > tmin) return t1;
    return inf;
  }

  double primitive_sq_distance(std::uint32_t i, const Vec3& p) const {
    if (geom_.is_mesh()) {
      const auto& t = geom_.triangles[i];
      return (closest_point_on_triangle(p, geom_.vertices[t[0]], geom_.vertices[t[1]], geom_.vertices[t[2]]) - p)
          .squaredNorm();
    }
    return (geom_.vertices[i] - p).squaredNorm();
  }

  Geometry geom_;
  std::vector<std::uint32_t> prims_;
  std::vector<Aabb> boxes_;
  std::vector<Vec3> centers_;
  std::vector<Node> nodes_;
  Sphere sphere_;
};

// Free-function query interface.
inline std::optional<double> cast_ray(const RayAccelerator& accel, const Vec3& origin, const Vec3& dir) {
  return accel.cast_ray(origin, dir);
}

inline double nearest_distance(const RayAccelerator& accel, const Vec3& p) { return accel.nearest_distance(p); }

}  // namespace nift
