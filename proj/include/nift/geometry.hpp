#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nift {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Points = std::vector<Vec3>;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Geometry ------------------------------------------------------------------

enum class GeometryKind { mesh, splat_cloud };

struct Sphere {
  Vec3 center = Vec3::Zero();
  double radius = 0.0;
};

struct Aabb {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());

  void extend(const Vec3& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  void extend(const Aabb& b) {
    lo = lo.cwiseMin(b.lo);
    hi = hi.cwiseMax(b.hi);
  }
  Vec3 center() const { return 0.5 * (lo + hi); }
  Vec3 extent() const { return hi - lo; }
  bool contains(const Vec3& p, double eps = 0.0) const {
    return (p.array() >= lo.array() - eps).all() && (p.array() <= hi.array() + eps).all();
  }
  // Box scaled about its center.
  Aabb scaled(double factor) const {
    Vec3 c = center(), h = 0.5 * factor * extent();
    return {c - h, c + h};
  }
  // Squared distance from p to the box (0 inside).
  double squared_distance(const Vec3& p) const {
    Vec3 d = (lo - p).cwiseMax(p - hi).cwiseMax(Vec3::Zero());
    return d.squaredNorm();
  }
};

// A triangle mesh or a cloud of splat spheres, in model units.
struct Geometry {
  GeometryKind kind = GeometryKind::mesh;
  Points vertices;
  std::vector<std::array<int, 3>> triangles;
  double splat_radius = 0.0;

  bool is_mesh() const { return kind == GeometryKind::mesh; }

  Aabb bounds() const {
    Aabb b;
    for (const auto& v : vertices) b.extend(v);
    if (!is_mesh()) {
      b.lo.array() -= splat_radius;
      b.hi.array() += splat_radius;
    }
    return b;
  }
};

inline Geometry make_mesh(Points vertices, std::vector<std::array<int, 3>> triangles) {
  Geometry g;
  g.kind = GeometryKind::mesh;
  g.vertices = std::move(vertices);
  g.triangles = std::move(triangles);
  return g;
}

inline Geometry make_splat_cloud(Points points, double radius) {
  Geometry g;
  g.kind = GeometryKind::splat_cloud;
  g.vertices = std::move(points);
  g.splat_radius = radius;
  return g;
}

// Throws unless the geometry satisfies the structural invariants: indices in
// range, positive splat radius, and at least four non-coplanar points.
inline void validate(const Geometry& g) {
  if (g.vertices.empty()) throw Error("empty geometry");
  if (g.is_mesh()) {
    if (g.triangles.empty()) throw Error("empty geometry");
    const int n = static_cast<int>(g.vertices.size());
    for (const auto& t : g.triangles)
      for (int i : t)
        if (i < 0 || i >= n) throw Error("triangle index out of range");
  } else if (!(g.splat_radius > 0.0)) {
    throw Error("splat radius must be positive");
  }
  for (const auto& v : g.vertices)
    if (!v.allFinite()) throw Error("non-finite vertex");
  if (g.vertices.size() < 4) throw Error("degenerate geometry: fewer than 4 points");
  Vec3 mean = Vec3::Zero();
  for (const auto& v : g.vertices) mean += v;
  mean /= static_cast<double>(g.vertices.size());
  Mat3 cov = Mat3::Zero();
  for (const auto& v : g.vertices) cov += (v - mean) * (v - mean).transpose();
  Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  const double scale = std::max(es.eigenvalues()(2), 1e-300);
  if (es.eigenvalues()(0) <= 1e-12 * scale) throw Error("degenerate geometry: coplanar points");
}

inline double triangle_area(const Geometry& g, std::size_t t) {
  const auto& tri = g.triangles[t];
  return 0.5 * (g.vertices[tri[1]] - g.vertices[tri[0]])
                   .cross(g.vertices[tri[2]] - g.vertices[tri[0]])
                   .norm();
}

inline double surface_area(const Geometry& g) {
  double a = 0.0;
  for (std::size_t t = 0; t < g.triangles.size(); ++t) a += triangle_area(g, t);
  return a;
}

// Bounding sphere: Ritter's approximation followed by one tightening pass
// that re-centers on the farthest point pair found by the first pass.
inline Sphere bounding_sphere(std::span<const Vec3> pts, double pad = 0.0) {
  if (pts.empty()) return {};
  auto farthest = [&](const Vec3& from) {
    std::size_t best = 0;
    double bd = -1.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      double d = (pts[i] - from).squaredNorm();
      if (d > bd) bd = d, best = i;
    }
    return best;
  };
  auto grow = [&](Sphere s) {
    for (const auto& p : pts) {
      double d = (p - s.center).norm();
      if (d > s.radius) {
        double r = 0.5 * (s.radius + d);
        s.center += (d - r) / d * (p - s.center);
        s.radius = r;
      }
    }
    return s;
  };
  const Vec3& x = pts[farthest(pts[0])];
  const Vec3& y = pts[farthest(x)];
  Sphere s = grow({0.5 * (x + y), 0.5 * (x - y).norm()});

  // Tightening: pull the center toward the farthest point while shrinking,
  // then regrow; keep whichever sphere is smaller.
  Vec3 c = s.center;
  for (int it = 0; it < 16; ++it) {
    const Vec3& f = pts[farthest(c)];
    c += 0.5 / (it + 2) * (f - c);
  }
  double r = 0.0;
  for (const auto& p : pts) r = std::max(r, (p - c).norm());
  if (r < s.radius) s = {c, r};
  s.radius += pad;
  return s;
}

inline Sphere bounding_sphere(const Geometry& g) {
  return bounding_sphere(g.vertices, g.is_mesh() ? 0.0 : g.splat_radius);
}

// Smallest sphere enclosing two spheres.
inline Sphere enclosing_sphere(const Sphere& a, const Sphere& b) {
  Vec3 d = b.center - a.center;
  double dist = d.norm();
  if (dist + b.radius <= a.radius) return a;
  if (dist + a.radius <= b.radius) return b;
  double r = 0.5 * (dist + a.radius + b.radius);
  Vec3 c = a.center + (r - a.radius) / dist * d;
  return {c, r};
}

inline Vec3 centroid(std::span<const Vec3> pts) {
  Vec3 c = Vec3::Zero();
  for (const auto& p : pts) c += p;
  return pts.empty() ? c : Vec3(c / static_cast<double>(pts.size()));
}

// Rigid transforms ----------------------------------------------------------

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  Vec3 operator()(const Vec3& p) const { return rotation * p + translation; }

  // (*this) ∘ other: apply other first.
  RigidTransform operator*(const RigidTransform& other) const {
    return {rotation * other.rotation, rotation * other.translation + translation};
  }

  RigidTransform inverse() const {
    Mat3 rt = rotation.transpose();
    return {rt, -(rt * translation)};
  }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }

  static RigidTransform from_matrix(const Mat4& m) {
    return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
  }
};

inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) { return a * b; }
inline RigidTransform invert(const RigidTransform& t) { return t.inverse(); }

inline RigidTransform translation(const Vec3& t) { return {Mat3::Identity(), t}; }
inline RigidTransform rotation(const Mat3& r) { return {r, Vec3::Zero()}; }

inline bool is_rotation(const Mat3& r, double tol = 1e-9) {
  return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
         std::abs(r.determinant() - 1.0) <= tol;
}

// Rodrigues' formula for the rotation exp([w]x).
inline Mat3 rotation_from_axis_angle(const Vec3& w) {
  double angle = w.norm();
  if (angle < 1e-15) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, w / angle).toRotationMatrix();
}

// Geodesic angle of a rotation, in radians.
inline double rotation_angle(const Mat3& r) {
  double c = std::clamp(0.5 * (r.trace() - 1.0), -1.0, 1.0);
  return std::acos(c);
}

// Nearest proper rotation in the Frobenius sense.
inline Mat3 orthonormalize(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

// Uniform (Haar) rotation from a normalized Gaussian quaternion.
template <class Rng>
Mat3 haar_random_rotation(Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Eigen::Quaterniond q;
  double norm = 0.0;
  do {
    q = Eigen::Quaterniond(n01(rng), n01(rng), n01(rng), n01(rng));
    norm = q.norm();
  } while (norm < 1e-12);
  q.coeffs() /= norm;
  return orthonormalize(q.toRotationMatrix());
}

template <class Rng>
Vec3 uniform_in_ball(Rng& rng, double radius) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vec3 p;
  do {
    p = Vec3(u(rng), u(rng), u(rng));
  } while (p.squaredNorm() > 1.0);
  return radius * p;
}

inline Points apply_transform(std::span<const Vec3> pts, const RigidTransform& t) {
  Points out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back(t(p));
  return out;
}

inline Geometry apply_transform(const Geometry& g, const RigidTransform& t) {
  Geometry out = g;
  for (auto& v : out.vertices) v = t(v);
  return out;
}

inline Geometry scaled(const Geometry& g, double s, const Vec3& about = Vec3::Zero()) {
  Geometry out = g;
  for (auto& v : out.vertices) v = about + s * (v - about);
  out.splat_radius *= s;
  return out;
}

// Concatenation of two meshes into one triangle soup.
inline Geometry merge_meshes(const Geometry& a, const Geometry& b) {
  Geometry out = a;
  const int off = static_cast<int>(a.vertices.size());
  out.vertices.insert(out.vertices.end(), b.vertices.begin(), b.vertices.end());
  for (auto t : b.triangles) out.triangles.push_back({t[0] + off, t[1] + off, t[2] + off});
  return out;
}

// Surface sampling ----------------------------------------------------------

// Area-weighted uniform samples on a mesh, or a uniform subsample of a splat
// cloud (without replacement when count <= size).
inline Points sample_surface(const Geometry& g, std::size_t count, std::uint64_t seed) {
  if (count == 0) throw Error("sample count must be positive");
  std::mt19937_64 rng(seed);
  Points out;
  out.reserve(count);
  if (!g.is_mesh()) {
    const std::size_t n = g.vertices.size();
    if (count <= n) {
      std::vector<std::size_t> idx(n);
      for (std::size_t i = 0; i < n; ++i) idx[i] = i;
      for (std::size_t i = 0; i < count; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(idx[i], idx[pick(rng)]);
        out.push_back(g.vertices[idx[i]]);
      }
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      for (std::size_t i = 0; i < count; ++i) out.push_back(g.vertices[pick(rng)]);
    }
    return out;
  }
  std::vector<double> cdf(g.triangles.size());
  double total = 0.0;
  for (std::size_t t = 0; t < g.triangles.size(); ++t) cdf[t] = (total += triangle_area(g, t));
  if (!(total > 0.0)) throw Error("zero-area mesh");
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (std::size_t i = 0; i < count; ++i) {
    double r = u01(rng) * total;
    std::size_t t = std::min<std::size_t>(
        std::upper_bound(cdf.begin(), cdf.end(), r) - cdf.begin(), cdf.size() - 1);
    double a = u01(rng), b = u01(rng);
    if (a + b > 1.0) a = 1.0 - a, b = 1.0 - b;
    const auto& tri = g.triangles[t];
    const Vec3& p0 = g.vertices[tri[0]];
    out.push_back(p0 + a * (g.vertices[tri[1]] - p0) + b * (g.vertices[tri[2]] - p0));
  }
  return out;
}

// Exact closest point on triangle (Ericson, Real-Time Collision Detection 5.1.5).
inline Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  Vec3 ab = b - a, ac = c - a, ap = p - a;
  double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;
  Vec3 bp = p - b;
  double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;
  double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + d1 / (d1 - d3) * ab;
  Vec3 cp = p - c;
  double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;
  double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + d2 / (d2 - d6) * ac;
  double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0)
    return b + (d4 - d3) / ((d4 - d3) + (d5 - d6)) * (c - b);
  double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

}  // namespace nift
