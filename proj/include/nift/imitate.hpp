#pragma once

#include "nift/field.hpp"
#include "nift/template.hpp"

#include <json.hpp>

#include <array>
#include <limits>

namespace nift {

struct OptimizeConfig {
  int restarts = 10;
  int max_iters = 500;
  double learning_rate = 1e-2;
  double init_translation_scale = 0.1;  // of the target diameter
  int window = 10;
  double min_improvement = 1e-6;
  double outside_weight = 10.0;  // per unit of out-of-domain distance
  std::uint64_t seed = 0;

  void check() const {
    if (restarts < 1) throw Error("restarts must be at least 1");
    if (max_iters < 1) throw Error("max_iters must be at least 1");
    if (!(learning_rate > 0.0)) throw Error("learning rate must be positive");
    if (window < 1) throw Error("convergence window must be at least 1");
  }
};

// ---------------------------------------------------------------- adam

struct AdamState {
  Eigen::VectorXd m, v;
  int t = 0;
  explicit AdamState(Eigen::Index n = 0) : m(Eigen::VectorXd::Zero(n)), v(Eigen::VectorXd::Zero(n)) {}
};

inline Eigen::VectorXd adam_step(AdamState& s, const Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr,
                                 double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  if (s.m.size() != grad.size() || params.size() != grad.size()) throw Error("adam state dimension mismatch");
  ++s.t;
  s.m = beta1 * s.m + (1.0 - beta1) * grad;
  s.v = beta2 * s.v + (1.0 - beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1, s.t), c2 = 1.0 - std::pow(beta2, s.t);
  return params.array() - lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + eps);
}

// ---------------------------------------------------------------- objective

// Pose acting on template-frame points: x -> R (x - c) + c + t, with c the
// template centroid, so rotation updates do not swing the template around
// a distant origin.
struct PoseState {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  RigidTransform transform(const Vec3& pivot) const {
    return {rotation, pivot + translation - rotation * pivot};
  }
  static PoseState from_transform(const RigidTransform& t, const Vec3& pivot) {
    return {t.rotation, t.rotation * pivot + t.translation - pivot};
  }
};

inline void require_compatible(const InteractionTemplate& tmpl, const DescriptorField& field) {
  if (tmpl.fingerprint != field.fingerprint())
    throw Error("field fingerprint mismatch: template " + tmpl.fingerprint + " vs field " + field.fingerprint());
  if (tmpl.dim() != field.dim()) throw Error("template and field descriptor sizes differ");
}

// Per-point residual ||d - f(clamp(y))||_1 + w |o - dist(y, domain)| and its
// gradient in y.
inline double point_residual(const DescriptorField& field, const Eigen::VectorXd& desc, double outside, double weight,
                             const Vec3& y, Vec3* grad) {
  Mat3 jc;
  const Vec3 yc = clamp_to_box(field.domain(), y, grad ? &jc : nullptr);
  Vec3 g = Vec3::Zero();
  double r = field.l1_to(yc, desc, grad ? &g : nullptr);
  const Vec3 off = y - yc;
  const double out = off.norm();
  const double diff = out - outside;
  r += weight * std::abs(diff);
  if (grad) {
    *grad = jc.transpose() * g;
    if (out > 0.0 && diff != 0.0) *grad += weight * (diff > 0 ? 1.0 : -1.0) * (Mat3::Identity() - jc).transpose() * (off / out);
  }
  return r;
}

inline double objective(const InteractionTemplate& tmpl, const DescriptorField& field, const RigidTransform& t,
                        double outside_weight = OptimizeConfig{}.outside_weight) {
  require_compatible(tmpl, field);
  const Points x = tmpl.template_points();
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    sum += point_residual(field, tmpl.descriptors.col(static_cast<Eigen::Index>(i)), tmpl.outside[i], outside_weight,
                          t(x[i]), nullptr);
  return sum;
}

// Value and gradient in the local parameters (dw, dt): the pose moves as
// R <- exp([dw]x) R, t <- t + dt.
inline double objective_gradient(const InteractionTemplate& tmpl, const DescriptorField& field, const PoseState& s,
                                 const Vec3& pivot, Eigen::Matrix<double, 6, 1>* grad,
                                 double outside_weight = OptimizeConfig{}.outside_weight) {
  const Points x = tmpl.template_points();
  const RigidTransform t = s.transform(pivot);
  double sum = 0.0;
  Vec3 gw = Vec3::Zero(), gt = Vec3::Zero();
  for (std::size_t i = 0; i < x.size(); ++i) {
    Vec3 gy;
    sum += point_residual(field, tmpl.descriptors.col(static_cast<Eigen::Index>(i)), tmpl.outside[i], outside_weight,
                          t(x[i]), grad ? &gy : nullptr);
    if (grad) {
      gw += (s.rotation * (x[i] - pivot)).cross(gy);
      gt += gy;
    }
  }
  if (grad) *grad << gw, gt;
  return sum;
}

inline PoseState apply_increment(const PoseState& s, const Eigen::Matrix<double, 6, 1>& d) {
  return {orthonormalize(rotation_from_axis_angle(d.head<3>()) * s.rotation), s.translation + d.tail<3>()};
}

// Central differences over the six local parameters.
inline Eigen::Matrix<double, 6, 1> objective_gradient_fd(const InteractionTemplate& tmpl, const DescriptorField& field,
                                                        const PoseState& s, const Vec3& pivot, double h = 1e-6,
                                                        double outside_weight = OptimizeConfig{}.outside_weight) {
  Eigen::Matrix<double, 6, 1> g;
  for (int k = 0; k < 6; ++k) {
    Eigen::Matrix<double, 6, 1> d = Eigen::Matrix<double, 6, 1>::Zero();
    d[k] = h;
    const double fp = objective_gradient(tmpl, field, apply_increment(s, d), pivot, nullptr, outside_weight);
    const double fm = objective_gradient(tmpl, field, apply_increment(s, -d), pivot, nullptr, outside_weight);
    g[k] = (fp - fm) / (2 * h);
  }
  return g;
}

// ---------------------------------------------------------------- optimizer

struct RestartResult {
  int index = 0;
  std::uint64_t seed = 0;
  double final_residual = 0.0;
  double best_residual = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
  bool diverged = false;
  RigidTransform best_transform;
  std::vector<double> trace;       // residual per iteration
  std::vector<double> best_trace;  // running best
};

struct PoseResult {
  RigidTransform best_transform;  // template frame -> target frame
  double best_residual = 0.0;
  int best_restart = 0;
  RigidTransform anchor_transform;  // best_transform o anchor_pose_ref
  std::vector<RestartResult> restarts;
};

inline std::uint64_t restart_seed(std::uint64_t master, int r) {
  std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(r)};
  std::array<std::uint32_t, 2> out;
  seq.generate(out.begin(), out.end());
  return (std::uint64_t(out[0]) << 32) | out[1];
}

// Area-weighted surface centroid (deterministic sample).
inline Vec3 surface_centroid(const Geometry& g) { return centroid(sample_surface(g, 4096, 0)); }

inline RestartResult run_restart(const InteractionTemplate& tmpl, const DescriptorField& field, const Vec3& pivot,
                                 const PoseState& init, const OptimizeConfig& cfg) {
  RestartResult r;
  PoseState s = init;
  AdamState adam(6);
  const Eigen::Matrix<double, 6, 1> zero = Eigen::Matrix<double, 6, 1>::Zero();
  for (int it = 0; it < cfg.max_iters; ++it) {
    Eigen::Matrix<double, 6, 1> g;
    const double f = objective_gradient(tmpl, field, s, pivot, &g, cfg.outside_weight);
    if (!std::isfinite(f) || !g.allFinite()) {
      r.diverged = true;
      break;
    }
    r.iterations = it + 1;
    r.trace.push_back(f);
    if (f < r.best_residual) {
      r.best_residual = f;
      r.best_transform = s.transform(pivot);
    }
    r.best_trace.push_back(r.best_residual);
    if (it >= cfg.window && r.best_trace[it - cfg.window] - r.best_residual < cfg.min_improvement) {
      r.converged = true;
      break;
    }
    Eigen::Matrix<double, 6, 1> d = adam_step(adam, zero, g, cfg.learning_rate);
    s = apply_increment(s, d);
  }
  r.final_residual = r.trace.empty() ? std::numeric_limits<double>::quiet_NaN() : r.trace.back();
  return r;
}

inline PoseResult optimize_pose(const InteractionTemplate& tmpl, const DescriptorField& field, const Geometry& target,
                                const OptimizeConfig& cfg = {}) {
  cfg.check();
  tmpl.check();
  require_compatible(tmpl, field);
  const Vec3 pivot = centroid(tmpl.template_points());
  const Vec3 target_center = surface_centroid(target);
  const double diameter = 2.0 * bounding_sphere(target).radius;

  std::vector<RestartResult> runs(static_cast<std::size_t>(cfg.restarts));
  parallel_for(runs.size(), [&](std::size_t i) {
    const std::uint64_t seed = restart_seed(cfg.seed, static_cast<int>(i));
    std::mt19937_64 rng(seed);
    PoseState init;
    init.rotation = haar_random_rotation(rng);
    init.translation = target_center - pivot + uniform_in_ball(rng, cfg.init_translation_scale * diameter);
    runs[i] = run_restart(tmpl, field, pivot, init, cfg);
    runs[i].index = static_cast<int>(i);
    runs[i].seed = seed;
  });

  PoseResult out;
  out.best_residual = std::numeric_limits<double>::infinity();
  for (const auto& r : runs)
    if (!r.diverged && r.best_residual < out.best_residual) {
      out.best_residual = r.best_residual;
      out.best_restart = r.index;
      out.best_transform = r.best_transform;
    }
  if (!std::isfinite(out.best_residual)) throw Error("every restart diverged (non-finite objective)");
  out.anchor_transform = out.best_transform * tmpl.anchor_pose_ref;
  out.restarts = std::move(runs);
  return out;
}

inline nlohmann::json to_json(const PoseResult& r, bool traces = true) {
  nlohmann::json restarts = nlohmann::json::array();
  for (const auto& s : r.restarts) {
    nlohmann::json j = {{"index", s.index},
                        {"seed", s.seed},
                        {"final_residual", s.final_residual},
                        {"best_residual", s.best_residual},
                        {"iterations", s.iterations},
                        {"converged", s.converged},
                        {"diverged", s.diverged}};
    if (traces) j["trace"] = s.trace;
    restarts.push_back(std::move(j));
  }
  return {{"matrix", to_json(r.anchor_transform)},
          {"best_transform", to_json(r.best_transform)},
          {"residual", r.best_residual},
          {"best_restart", r.best_restart},
          {"restarts", restarts}};
}

}  // namespace nift
