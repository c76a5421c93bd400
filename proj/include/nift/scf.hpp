#pragma once

#include "nift/bvh.hpp"
#include "nift/geometry.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace nift {

// Space coverage features: band powers of the spherical-harmonic expansion
// of the normalized spherical distance function around a point.

enum class DirectionScheme { fibonacci, equiangular };

inline std::string to_string(DirectionScheme s) { return s == DirectionScheme::fibonacci ? "fibonacci" : "equiangular"; }
inline DirectionScheme direction_scheme_from_string(const std::string& s) {
  if (s == "fibonacci") return DirectionScheme::fibonacci;
  if (s == "equiangular") return DirectionScheme::equiangular;
  throw Error("unknown direction scheme: " + s);
}

constexpr int sh_index(int l, int m) { return l * l + l + m; }
constexpr int sh_count(int order) { return (order + 1) * (order + 1); }

// Real orthonormal spherical harmonic Y_l^m without the Condon-Shortley
// phase; m > 0 uses sqrt(2) cos(m phi), m < 0 uses sqrt(2) sin(|m| phi).
inline double sh_basis(int l, int m, const Vec3& dir) {
  if (l < 0 || std::abs(m) > l) throw Error("spherical harmonic requires |m| <= l");
  const int am = std::abs(m);
  const double x = std::clamp(dir.z(), -1.0, 1.0);
  const double s = std::sqrt(std::max(0.0, 1.0 - x * x));
  // P_am^am = (2am-1)!! s^am, then upward in l.
  double pmm = 1.0;
  for (int k = 1; k <= am; ++k) pmm *= (2.0 * k - 1.0) * s;
  double p = pmm;
  if (l > am) {
    double pm1 = x * (2.0 * am + 1.0) * pmm;
    double pm2 = pmm;
    p = pm1;
    for (int ll = am + 2; ll <= l; ++ll) {
      p = (x * (2.0 * ll - 1.0) * pm1 - (ll + am - 1.0) * pm2) / (ll - am);
      pm2 = pm1;
      pm1 = p;
    }
  }
  double ratio = 1.0;  // (l-am)!/(l+am)!
  for (int k = l - am + 1; k <= l + am; ++k) ratio /= k;
  const double k_lm = std::sqrt((2.0 * l + 1.0) / (4.0 * std::numbers::pi) * ratio);
  if (m == 0) return k_lm * p;
  const double phi = std::atan2(dir.y(), dir.x());
  return std::numbers::sqrt2 * k_lm * p * (m > 0 ? std::cos(am * phi) : std::sin(am * phi));
}

// Quadrature directions on the unit sphere with weights summing to 4 pi.
// The basis matrix (directions x (order+1)^2) is cached for max_order.
struct DirectionSet {
  Points directions;
  std::vector<double> weights;
  int max_order = 0;
  DirectionScheme scheme = DirectionScheme::fibonacci;
  Eigen::MatrixXd basis;

  std::size_t size() const { return directions.size(); }
};

inline std::size_t quadrature_floor(int order) { return 4u * static_cast<std::size_t>(sh_count(order)); }

inline DirectionSet make_direction_set(std::size_t count, DirectionScheme scheme = DirectionScheme::fibonacci,
                                       int max_order = 5) {
  if (max_order < 0) throw Error("negative spherical harmonic order");
  if (count < quadrature_floor(max_order))
    throw Error("direction count " + std::to_string(count) + " below quadrature floor " +
                std::to_string(quadrature_floor(max_order)) + " for order " + std::to_string(max_order));
  DirectionSet set;
  set.max_order = max_order;
  set.scheme = scheme;
  constexpr double four_pi = 4.0 * std::numbers::pi;
  if (scheme == DirectionScheme::fibonacci) {
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    const double n = static_cast<double>(count);
    for (std::size_t i = 0; i < count; ++i) {
      double z = 1.0 - (2.0 * i + 1.0) / n;
      double r = std::sqrt(std::max(0.0, 1.0 - z * z));
      double phi = golden * static_cast<double>(i);
      set.directions.emplace_back(r * std::cos(phi), r * std::sin(phi), z);
      set.weights.push_back(four_pi / n);
    }
  } else {
    // Midpoint rule in theta, uniform in phi, n_phi = 2 n_theta.
    const auto n_theta = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(std::sqrt(count / 2.0))));
    const std::size_t n_phi = 2 * n_theta;
    double total = 0.0;
    for (std::size_t i = 0; i < n_theta; ++i) {
      double theta = (i + 0.5) * std::numbers::pi / n_theta;
      for (std::size_t j = 0; j < n_phi; ++j) {
        double phi = (j + 0.5) * 2.0 * std::numbers::pi / n_phi;
        set.directions.emplace_back(std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta));
        set.weights.push_back(std::sin(theta));
        total += std::sin(theta);
      }
    }
    for (auto& w : set.weights) w *= four_pi / total;
  }
  for (auto& d : set.directions) d.normalize();
  set.basis.resize(static_cast<Eigen::Index>(set.size()), sh_count(max_order));
  for (std::size_t i = 0; i < set.size(); ++i)
    for (int l = 0; l <= max_order; ++l)
      for (int m = -l; m <= l; ++m)
        set.basis(static_cast<Eigen::Index>(i), sh_index(l, m)) = sh_basis(l, m, set.directions[i]);
  return set;
}

// Per-direction hit distances (inf on miss) and the normalized function
// F = (d_min + d_avg) / (d + d_avg), with F = 0 on misses.
struct SphericalSamples {
  std::vector<double> values;
  std::vector<double> raw_distances;
  double d_min = 0.0;
  double d_avg = 0.0;
};

inline SphericalSamples samples_from_distances(std::vector<double> distances) {
  SphericalSamples s;
  s.raw_distances = std::move(distances);
  double dmin = std::numeric_limits<double>::infinity(), sum = 0.0;
  std::size_t hits = 0;
  for (double d : s.raw_distances)
    if (std::isfinite(d)) dmin = std::min(dmin, d), sum += d, ++hits;
  if (hits == 0) throw Error("point sees no object: all rays missed");
  s.d_min = dmin;
  s.d_avg = sum / static_cast<double>(hits);
  s.values.resize(s.raw_distances.size());
  for (std::size_t i = 0; i < s.raw_distances.size(); ++i) {
    double d = s.raw_distances[i];
    s.values[i] = std::isfinite(d) ? (s.d_min + s.d_avg) / (d + s.d_avg) : 0.0;
  }
  return s;
}

inline SphericalSamples spherical_distance_function(const RayAccelerator& accel, const Vec3& point,
                                                    const DirectionSet& dirs) {
  std::vector<double> d(dirs.size());
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    auto hit = accel.cast_ray(point, dirs.directions[i]);
    d[i] = hit ? *hit : std::numeric_limits<double>::infinity();
  }
  return samples_from_distances(std::move(d));
}

// Coefficients c_l^m indexed by sh_index(l, m).
inline Eigen::VectorXd sh_expand(std::span<const double> values, const DirectionSet& dirs, int order) {
  if (order > dirs.max_order)
    throw Error("order " + std::to_string(order) + " exceeds direction set capability " +
                std::to_string(dirs.max_order));
  if (values.size() != dirs.size()) throw Error("samples and directions are not aligned");
  const Eigen::Index n = static_cast<Eigen::Index>(dirs.size());
  Eigen::VectorXd wf(n);
  for (Eigen::Index i = 0; i < n; ++i) wf[i] = dirs.weights[i] * values[i];
  return dirs.basis.leftCols(sh_count(order)).transpose() * wf;
}

inline Eigen::VectorXd sh_expand(const SphericalSamples& samples, const DirectionSet& dirs, int order) {
  return sh_expand(std::span<const double>(samples.values), dirs, order);
}

struct ScfDescriptor {
  Eigen::VectorXd powers;
  int order = 0;
};

// Band powers c_l = sqrt(sum_m (c_l^m)^2).
inline ScfDescriptor scf_descriptor(const Eigen::VectorXd& coefficients, int order) {
  if (coefficients.size() < sh_count(order)) throw Error("coefficients incomplete for requested order");
  ScfDescriptor d;
  d.order = order;
  d.powers = Eigen::VectorXd::Zero(order + 1);
  for (int l = 0; l <= order; ++l) {
    double s = 0.0;
    for (int m = -l; m <= l; ++m) s += coefficients[sh_index(l, m)] * coefficients[sh_index(l, m)];
    d.powers[l] = std::sqrt(s);
  }
  return d;
}

struct ScfConfig {
  int order = 5;
  std::size_t dir_count = 4000;
  DirectionScheme scheme = DirectionScheme::fibonacci;

  std::string fingerprint() const {
    return "scf:n=" + std::to_string(order) + ":dirs=" + std::to_string(dir_count) + ":" + to_string(scheme);
  }
};

// Evaluator bound to a configuration with its direction set precomputed.
class ScfEvaluator {
 public:
  explicit ScfEvaluator(ScfConfig cfg = {})
      : cfg_(cfg), dirs_(make_direction_set(cfg.dir_count, cfg.scheme, cfg.order)) {}

  const ScfConfig& config() const { return cfg_; }
  const DirectionSet& directions() const { return dirs_; }

  ScfDescriptor operator()(const RayAccelerator& accel, const Vec3& point) const {
    return scf_descriptor(sh_expand(spherical_distance_function(accel, point, dirs_), dirs_, cfg_.order), cfg_.order);
  }

 private:
  ScfConfig cfg_;
  DirectionSet dirs_;
};

inline ScfDescriptor scf_at(const RayAccelerator& accel, const Vec3& point, const ScfEvaluator& eval) {
  return eval(accel, point);
}

inline ScfDescriptor scf_at(const Geometry& geom, const Vec3& point, const ScfConfig& cfg = {}) {
  RayAccelerator accel(geom);
  return ScfEvaluator(cfg)(accel, point);
}

}  // namespace nift
