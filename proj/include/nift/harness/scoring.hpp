#pragma once

#include "nift/bvh.hpp"
#include "nift/harness/shapes.hpp"
#include "nift/ibs.hpp"

#include <numbers>

namespace nift {

// Fixed random points in the unit ball, scaled to the anchor's bounding
// sphere. The unit set depends only on (count, seed).
inline Points bps_points(const Geometry& geom, std::size_t count, std::uint64_t seed) {
  if (count == 0) throw Error("BPS needs at least one point");
  const Sphere s = bounding_sphere(geom);
  std::mt19937_64 rng(seed);
  Points out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(s.center + uniform_in_ball(rng, s.radius));
  return out;
}

// Max depth of sampled surface points of `a` inside closed `b`.
inline double penetration_depth(const Geometry& a, const Geometry& b, std::size_t samples = 2000,
                                std::uint64_t seed = 1) {
  return penetration_depth(a, RayAccelerator(b), samples, seed);
}

// Rotational symmetry of an object about an axis through its model origin;
// order 0 means continuous, 1 means none.
struct Symmetry {
  Vec3 axis = Vec3::UnitZ();
  int order = 1;

  static Symmetry none() { return {}; }
  static Symmetry continuous(const Vec3& axis = Vec3::UnitZ()) { return {axis.normalized(), 0}; }
  static Symmetry discrete(int n, const Vec3& axis = Vec3::UnitZ()) { return {axis.normalized(), n}; }
};

struct PoseError {
  double rotation_deg = 0.0;
  double translation = 0.0;
};

inline double rad_to_deg(double r) { return r * 180.0 / std::numbers::pi; }

// Poses T and T o S are equivalent for S in the symmetry group. S fixes the
// model origin, so translation error is unaffected.
inline PoseError pose_error(const RigidTransform& est, const RigidTransform& gt, const Symmetry& sym = {}) {
  PoseError e;
  e.translation = (est.translation - gt.translation).norm();
  const Mat3 q = est.rotation.transpose() * gt.rotation;
  double best_trace = q.trace();
  const Vec3& n = sym.axis;
  if (sym.order == 0) {
    // max_phi tr(Q R_n(phi)) = n'Qn + sqrt(a^2 + b^2) in closed form.
    const double nqn = n.dot(q * n);
    Mat3 nx;
    nx << 0, -n.z(), n.y(), n.z(), 0, -n.x(), -n.y(), n.x(), 0;
    const double a = q.trace() - nqn, b = (q * nx).trace();
    best_trace = nqn + std::hypot(a, b);
  } else {
    for (int k = 1; k < sym.order; ++k)
      best_trace = std::max(best_trace, (q * rotation_from_axis_angle(n * (2.0 * std::numbers::pi * k / sym.order))).trace());
  }
  e.rotation_deg = rad_to_deg(std::acos(std::clamp((best_trace - 1.0) / 2.0, -1.0, 1.0)));
  return e;
}

// Anchor pose of a two-finger rim grasp on a mug: fingers straddle the wall
// at azimuth `theta` (pi is opposite the handle), palm `clearance` above
// the rim. Returned in the mug's posed frame.
inline RigidTransform rim_grasp_pose(const ShapeSpec& mug, double theta = std::numbers::pi, double clearance = 0.15) {
  if (mug.kind != ShapeKind::mug) throw Error("rim grasps are defined for mugs");
  const MugFrame f = mug_frame(mug);
  const double r = 0.5 * (f.outer_radius + f.inner_radius);
  RigidTransform local{rotation_from_axis_angle(Vec3(0, 0, theta)),
                       Vec3(r * std::cos(theta), r * std::sin(theta), f.height + clearance)};
  return mug.pose * local;
}

// Rim grasp on a bowl at azimuth `theta`, same convention as for mugs.
inline RigidTransform bowl_rim_grasp_pose(const ShapeSpec& bowl, double theta = 0.0, double clearance = 0.15) {
  if (bowl.kind != ShapeKind::bowl) throw Error("bowl rim grasps are defined for bowls");
  const double r = bowl.scale * (bowl.param("radius") - 0.5 * bowl.param("wall"));
  const double h = bowl.scale * bowl.param("height");
  RigidTransform local{rotation_from_axis_angle(Vec3(0, 0, theta)),
                       Vec3(r * std::cos(theta), r * std::sin(theta), h + clearance)};
  return bowl.pose * local;
}

// Ground-truth grasp for the benchmark categories.
inline RigidTransform reference_grasp_pose(const ShapeSpec& s) {
  switch (s.kind) {
    case ShapeKind::mug: return rim_grasp_pose(s);
    case ShapeKind::bowl: return bowl_rim_grasp_pose(s);
    default: throw Error("no reference grasp for " + to_string(s.kind));
  }
}

// True when target surface samples lie in the closing region between the
// fingers of a gripper posed at `anchor_pose`.
inline bool grasp_engaged(const Geometry& target, const RigidTransform& anchor_pose, const ShapeSpec& gripper = {.kind = ShapeKind::gripper},
                          std::size_t samples = 4000, std::uint64_t seed = 5) {
  if (gripper.kind != ShapeKind::gripper) throw Error("grasp engagement needs a gripper spec");
  const double gap = gripper.scale * gripper.param("finger_gap"), len = gripper.scale * gripper.param("finger_length");
  const double depth = gripper.scale * gripper.param("finger_depth");
  const RigidTransform inv = (anchor_pose * gripper.pose).inverse();
  for (const auto& p : sample_surface(target, samples, seed)) {
    const Vec3 q = inv(p);
    if (std::abs(q.x()) < 0.5 * gap && std::abs(q.y()) < 0.5 * depth && q.z() > -len && q.z() < 0.0) return true;
  }
  return false;
}

// The gripper is invariant under a half turn about its z axis.
inline Symmetry gripper_symmetry() { return Symmetry::discrete(2); }

inline Symmetry shape_symmetry(ShapeKind k) {
  switch (k) {
    case ShapeKind::bowl:
    case ShapeKind::bottle: return Symmetry::continuous();
    case ShapeKind::gripper: return gripper_symmetry();
    default: return Symmetry::none();
  }
}

}  // namespace nift
