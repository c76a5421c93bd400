#pragma once

#include "nift/bvh.hpp"
#include "nift/geometry.hpp"
#include "nift/io.hpp"
#include "nift/parallel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <random>
#include <vector>

namespace nift {

// Interaction bisector surface: points equidistant to two objects, as the
// zero level set of s(x) = d_A(x) - d_B(x).

struct ImportanceConfig {
  double exponent = 2.0;
  double delta_fraction = 0.01;  // of the scene diameter
  std::optional<double> delta;   // absolute override
};

struct IbsConfig {
  int grid_res = 64;
  double equidistance_tol = 0.01;
  double truncation = 1.0;          // scale of the joint bounding sphere
  double penetration_tol = 0.02;    // allowed contact depth, fraction of scene diameter
  ImportanceConfig importance;
};

struct IbsPointSet {
  Points points;
  std::vector<double> d_a, d_b, weights;
  Sphere truncation;

  std::size_t size() const { return points.size(); }
  double scene_diameter() const { return 2.0 * truncation.radius; }
};

inline double relative_equidistance(double da, double db, double eps = 1e-12) {
  return std::abs(da - db) / std::max({da, db, eps});
}

// Normalized w_i ~ 1 / (d_A + delta)^p.
inline std::vector<double> importance_weights(const IbsPointSet& ibs, const ImportanceConfig& cfg) {
  const double delta = cfg.delta ? *cfg.delta : cfg.delta_fraction * ibs.scene_diameter();
  std::vector<double> w(ibs.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) sum += w[i] = std::pow(ibs.d_a[i] + delta, -cfg.exponent);
  if (!(sum > 0.0) || !std::isfinite(sum)) throw Error("importance weights are degenerate");
  for (auto& x : w) x /= sum;
  return w;
}

// Largest depth of sampled surface points of `a` inside closed `b`.
inline double penetration_depth(const Geometry& a, const RayAccelerator& b, std::size_t samples = 2000,
                                std::uint64_t seed = 1) {
  Points pts = sample_surface(a, samples, seed);
  if (a.is_mesh()) pts.insert(pts.end(), a.vertices.begin(), a.vertices.end());
  std::vector<double> depth(pts.size(), 0.0);
  parallel_for(pts.size(), [&](std::size_t i) {
    if (b.inside(pts[i])) depth[i] = b.nearest_distance(pts[i]);
  });
  return *std::max_element(depth.begin(), depth.end());
}

inline IbsPointSet compute_ibs(const RayAccelerator& a, const RayAccelerator& b, const IbsConfig& cfg = {}) {
  if (cfg.grid_res < 16) throw Error("ibs grid resolution must be at least 16");
  if (!(cfg.equidistance_tol > 0.0)) throw Error("equidistance tolerance must be positive");
  IbsPointSet out;
  Sphere joint = enclosing_sphere(a.bounding_sphere(), b.bounding_sphere());
  out.truncation = {joint.center, joint.radius * cfg.truncation};
  const double diameter = 2.0 * joint.radius;

  const double depth = std::max(penetration_depth(a.geometry(), b, 1000, 7),
                                penetration_depth(b.geometry(), a, 1000, 7));
  if (depth > cfg.penetration_tol * diameter)
    throw Error("objects interpenetrate (depth " + std::to_string(depth) + "): no consistent bisector");

  // Regular grid over the cube circumscribing the joint sphere.
  const int n = cfg.grid_res;
  const double h = 2.0 * joint.radius / (n - 1);
  const Vec3 origin = joint.center - Vec3::Constant(joint.radius);
  auto node = [&](int i, int j, int k) { return Vec3(origin + h * Vec3(double(i), double(j), double(k))); };
  auto flat = [&](int i, int j, int k) { return (static_cast<std::size_t>(i) * n + j) * n + k; };
  const std::size_t total = static_cast<std::size_t>(n) * n * n;

  std::vector<double> s(total);
  parallel_for(total, [&](std::size_t id) {
    const int i = static_cast<int>(id / (n * n)), j = static_cast<int>(id / n % n), k = static_cast<int>(id % n);
    Vec3 p = node(i, j, k);
    s[id] = a.nearest_distance(p) - b.nearest_distance(p);
  });

  struct Hit {
    Vec3 p;
    double da, db;
    bool ok = false;
  };
  // Up to three sign-change edges leave each node (+x, +y, +z).
  std::vector<std::array<Hit, 3>> hits(total);
  const double r2 = out.truncation.radius * out.truncation.radius;
  parallel_for(total, [&](std::size_t id) {
    const int i = static_cast<int>(id / (n * n)), j = static_cast<int>(id / n % n), k = static_cast<int>(id % n);
    const int step[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    for (int e = 0; e < 3; ++e) {
      const int i2 = i + step[e][0], j2 = j + step[e][1], k2 = k + step[e][2];
      if (i2 >= n || j2 >= n || k2 >= n) continue;
      double s0 = s[id], s1 = s[flat(i2, j2, k2)];
      if (s0 == 0.0 || (s0 > 0.0) == (s1 > 0.0)) {
        if (s0 != 0.0 || e != 0) continue;  // exact zeros are taken once
      }
      Vec3 lo = node(i, j, k), hi = node(i2, j2, k2);
      double slo = s0;
      Hit hit;
      for (int it = 0; it < 60; ++it) {
        Vec3 mid = 0.5 * (lo + hi);
        double da = a.nearest_distance(mid), db = b.nearest_distance(mid);
        double sm = da - db;
        hit = {mid, da, db, false};
        if (relative_equidistance(da, db) < 0.1 * cfg.equidistance_tol) break;
        if ((sm > 0.0) == (slo > 0.0)) {
          lo = mid;
          slo = sm;
        } else {
          hi = mid;
        }
      }
      if ((hit.p - out.truncation.center).squaredNorm() > r2) continue;
      if (relative_equidistance(hit.da, hit.db) > cfg.equidistance_tol) continue;
      // Bisector points buried inside either solid are not interaction space.
      if (a.inside(hit.p) || b.inside(hit.p)) continue;
      hit.ok = true;
      hits[id][e] = hit;
    }
  });
  for (const auto& cell : hits)
    for (const auto& h3 : cell)
      if (h3.ok) {
        out.points.push_back(h3.p);
        out.d_a.push_back(h3.da);
        out.d_b.push_back(h3.db);
      }
  if (out.points.empty()) throw Error("empty bisector: objects too far apart for the truncation sphere");
  out.weights = importance_weights(out, cfg.importance);
  return out;
}

inline IbsPointSet compute_ibs(const Geometry& a, const Geometry& b, const IbsConfig& cfg = {}) {
  return compute_ibs(RayAccelerator(a), RayAccelerator(b), cfg);
}

inline IbsPointSet subset(const IbsPointSet& ibs, const std::vector<std::size_t>& idx) {
  IbsPointSet out;
  out.truncation = ibs.truncation;
  for (std::size_t i : idx) {
    out.points.push_back(ibs.points[i]);
    out.d_a.push_back(ibs.d_a[i]);
    out.d_b.push_back(ibs.d_b[i]);
    out.weights.push_back(ibs.weights[i]);
  }
  return out;
}

// Weighted sampling without replacement (Efraimidis-Spirakis keys
// log(u)/w). Returned indices are sorted ascending.
inline std::vector<std::size_t> weighted_sample_indices(const std::vector<double>& weights, std::size_t count,
                                                        std::uint64_t seed) {
  if (count > weights.size())
    throw Error("cannot draw " + std::to_string(count) + " samples from " + std::to_string(weights.size()) +
                " points without replacement");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::pair<double, std::size_t>> keys(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    double r = u(rng);
    while (r == 0.0) r = u(rng);
    keys[i] = {weights[i] > 0.0 ? std::log(r) / weights[i] : -std::numeric_limits<double>::infinity(), i};
  }
  std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(count), keys.end(),
                    [](const auto& x, const auto& y) { return x.first > y.first || (x.first == y.first && x.second < y.second); });
  std::vector<std::size_t> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = keys[i].second;
  std::sort(out.begin(), out.end());
  return out;
}

inline IbsPointSet importance_sample(const IbsPointSet& ibs, std::size_t count, const ImportanceConfig& cfg,
                                     std::uint64_t seed) {
  if (ibs.size() == 0) throw Error("empty bisector");
  if (count == 0) throw Error("sample count must be positive");
  IbsPointSet weighted = ibs;
  weighted.weights = importance_weights(ibs, cfg);
  return subset(weighted, weighted_sample_indices(weighted.weights, count, seed));
}

inline void write_ibs_ply(const std::filesystem::path& path, const IbsPointSet& ibs) {
  write_ply(path, ibs.points, {},
            {.binary = false, .scalars = {{"d_A", &ibs.d_a}, {"d_B", &ibs.d_b}, {"weight", &ibs.weights}}});
}

}  // namespace nift
