#pragma once

#include "nift/field.hpp"
#include "nift/ibs.hpp"
#include "nift/kdtree.hpp"

#include <json.hpp>

#include <fstream>

namespace nift {

// One demonstration: the anchor (e.g. a gripper) in its model frame, the
// source object, and the anchor's pose in the source frame.
struct DemoInteraction {
  Geometry anchor;
  Geometry source;
  RigidTransform anchor_pose;
};

// Query points live in the anchor frame. `anchor_pose_ref` places the anchor
// in the template frame, which is the (first) demo's source frame; stored
// descriptors were evaluated there. Points outside the field domain carry
// the clamped descriptor and their distance to the domain.
struct InteractionTemplate {
  Points points;
  Eigen::MatrixXd descriptors;  // dim x N
  std::vector<double> outside;
  RigidTransform anchor_pose_ref;
  std::string fingerprint;
  nlohmann::json config;

  std::size_t size() const { return points.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(descriptors.rows()); }
  Points template_points() const { return apply_transform(points, anchor_pose_ref); }

  void check() const {
    if (points.size() < 32) throw Error("template needs at least 32 points, has " + std::to_string(points.size()));
    if (descriptors.cols() != static_cast<Eigen::Index>(points.size()))
      throw Error("template has " + std::to_string(descriptors.cols()) + " descriptors for " +
                  std::to_string(points.size()) + " points");
    if (!descriptors.allFinite()) throw Error("template descriptors are not finite");
    if (outside.size() != points.size()) throw Error("template outside-distance count mismatch");
  }
};

struct TemplateConfig {
  IbsConfig ibs;
  std::size_t samples = 256;
  std::uint64_t seed = 0;
};

struct AggregateConfig {
  TemplateConfig base;
  int k = 0;                    // kNN size; 0 means the number of demos
  bool favor_dense = true;      // false inverts the density weight (ablation)
  double delta_fraction = 1e-4;  // of the scene diameter
};

inline nlohmann::json to_json(const RigidTransform& t) {
  nlohmann::json m = nlohmann::json::array();
  const Mat4 a = t.matrix();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m.push_back(a(r, c));
  return m;
}

inline RigidTransform transform_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 16) throw Error("transform must be 16 numbers (row-major 4x4)");
  Mat4 m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = j[static_cast<std::size_t>(4 * r + c)].get<double>();
  RigidTransform t = RigidTransform::from_matrix(m);
  if (!is_rotation(t.rotation, 1e-6)) throw Error("transform rotation block is not a rotation");
  t.rotation = orthonormalize(t.rotation);
  return t;
}

inline nlohmann::json config_json(const TemplateConfig& c) {
  return {{"grid_res", c.ibs.grid_res},
          {"equidistance_tol", c.ibs.equidistance_tol},
          {"truncation", c.ibs.truncation},
          {"importance_exponent", c.ibs.importance.exponent},
          {"importance_delta_fraction", c.ibs.importance.delta_fraction},
          {"samples", c.samples},
          {"seed", c.seed}};
}

// Descriptor with out-of-domain points clamped back onto the domain box.
inline Eigen::VectorXd clamped_descriptor(const DescriptorField& f, const Vec3& x) {
  return f.descriptor_at(clamp_to_domain(f, x));
}

// IBS of a demo, computed in the anchor frame so that moving a whole demo
// rigidly leaves it unchanged.
inline IbsPointSet demo_ibs(const DemoInteraction& demo, const IbsConfig& cfg) {
  return compute_ibs(demo.anchor, apply_transform(demo.source, demo.anchor_pose.inverse()), cfg);
}

inline InteractionTemplate build_template(const DemoInteraction& demo, const DescriptorField& field,
                                          const TemplateConfig& cfg = {}) {
  if (cfg.samples < 32) throw Error("template needs at least 32 samples");
  IbsPointSet ibs = demo_ibs(demo, cfg.ibs);
  if (ibs.size() < cfg.samples)
    throw Error("bisector has " + std::to_string(ibs.size()) + " usable points, " + std::to_string(cfg.samples) +
                " requested");
  IbsPointSet s = importance_sample(ibs, cfg.samples, cfg.ibs.importance, cfg.seed);
  InteractionTemplate t;
  t.points = s.points;
  t.anchor_pose_ref = demo.anchor_pose;
  t.fingerprint = field.fingerprint();
  t.config = config_json(cfg);
  t.descriptors.resize(static_cast<Eigen::Index>(field.dim()), static_cast<Eigen::Index>(t.size()));
  t.outside.resize(t.size());
  parallel_for(t.size(), [&](std::size_t i) {
    const Vec3 x = demo.anchor_pose(t.points[i]);
    t.descriptors.col(static_cast<Eigen::Index>(i)) = clamped_descriptor(field, x);
    t.outside[i] = outside_distance(field, x);
  });
  t.check();
  return t;
}

// w_i ~ 1 / (mean distance to k nearest other points + delta), normalized;
// `favor_dense = false` uses (meanKNN + delta) instead.
inline std::vector<double> density_weights(const Points& pts, int k, double delta, bool favor_dense = true) {
  if (k < 1) throw Error("kNN size must be at least 1");
  KdTree tree(pts);
  std::vector<double> w(pts.size());
  parallel_for(pts.size(), [&](std::size_t i) {
    double sum = 0.0;
    auto nn = tree.knn(pts[i], static_cast<std::size_t>(k), i);
    for (const auto& n : nn) sum += std::sqrt(n.sq_distance);
    const double mean = nn.empty() ? 0.0 : sum / double(nn.size());
    w[i] = favor_dense ? 1.0 / (mean + delta) : mean + delta;
  });
  double total = 0.0;
  for (double x : w) total += x;
  for (auto& x : w) x /= total;
  return w;
}

inline bool same_geometry(const Geometry& a, const Geometry& b) {
  return a.kind == b.kind && a.vertices == b.vertices && a.triangles == b.triangles &&
         a.splat_radius == b.splat_radius;
}

// Importance-sampled bisector points of every demo, in the common anchor frame.
struct DemoPool {
  Points points;
  std::vector<std::size_t> demo_of;
  double diameter = 0.0;
};

inline void check_demo_set(const std::vector<DemoInteraction>& demos, const std::vector<const DescriptorField*>& fields) {
  if (demos.empty()) throw Error("aggregation needs at least one demo");
  if (fields.size() != demos.size()) throw Error("one field per demo is required");
  for (std::size_t i = 1; i < demos.size(); ++i) {
    if (!same_geometry(demos[i].anchor, demos[0].anchor)) throw Error("demos use different anchor geometry");
    if (fields[i]->fingerprint() != fields[0]->fingerprint())
      throw Error("field fingerprint mismatch: " + fields[0]->fingerprint() + " vs " + fields[i]->fingerprint());
  }
}

inline DemoPool pool_demo_points(const std::vector<DemoInteraction>& demos,
                                 const std::vector<const DescriptorField*>& fields, const TemplateConfig& cfg) {
  check_demo_set(demos, fields);
  DemoPool pool;
  for (std::size_t d = 0; d < demos.size(); ++d) {
    IbsPointSet ibs = demo_ibs(demos[d], cfg.ibs);
    pool.diameter = std::max(pool.diameter, ibs.scene_diameter());
    const std::size_t n = std::min(cfg.samples, ibs.size());
    IbsPointSet s = importance_sample(ibs, n, cfg.ibs.importance, cfg.seed + 7919 * d);
    pool.points.insert(pool.points.end(), s.points.begin(), s.points.end());
    pool.demo_of.insert(pool.demo_of.end(), n, d);
  }
  return pool;
}

// Density-weighted resample of the pool; returns pool indices.
inline std::vector<std::size_t> resample_pool(const DemoPool& pool, std::size_t demos, const AggregateConfig& cfg,
                                              std::uint64_t seed) {
  const std::size_t samples = cfg.base.samples;
  if (pool.points.size() < samples)
    throw Error("demos yield " + std::to_string(pool.points.size()) + " points, " + std::to_string(samples) +
                " requested");
  const int k = cfg.k > 0 ? cfg.k : static_cast<int>(demos);
  std::vector<double> w = density_weights(pool.points, k, cfg.delta_fraction * pool.diameter, cfg.favor_dense);
  return weighted_sample_indices(w, samples, seed);
}

// Template over given anchor-frame points: each demo field is read at the
// point's position in that demo's source frame and the results averaged.
inline InteractionTemplate average_over_demos(Points points, const std::vector<DemoInteraction>& demos,
                                              const std::vector<const DescriptorField*>& fields) {
  check_demo_set(demos, fields);
  InteractionTemplate t;
  t.points = std::move(points);
  t.anchor_pose_ref = demos[0].anchor_pose;
  t.fingerprint = fields[0]->fingerprint();
  const Eigen::Index dim = static_cast<Eigen::Index>(fields[0]->dim());
  t.descriptors = Eigen::MatrixXd::Zero(dim, static_cast<Eigen::Index>(t.size()));
  t.outside.assign(t.size(), 0.0);
  parallel_for(t.size(), [&](std::size_t i) {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim);
    double out = 0.0;
    for (std::size_t d = 0; d < demos.size(); ++d) {
      const Vec3 x = demos[d].anchor_pose(t.points[i]);
      sum += clamped_descriptor(*fields[d], x);
      out += outside_distance(*fields[d], x);
    }
    t.descriptors.col(static_cast<Eigen::Index>(i)) = sum / double(demos.size());
    t.outside[i] = out / double(demos.size());
  });
  return t;
}

inline InteractionTemplate aggregate_templates(const std::vector<DemoInteraction>& demos,
                                               const std::vector<const DescriptorField*>& fields,
                                               const AggregateConfig& cfg = {}) {
  if (cfg.base.samples < 32) throw Error("template needs at least 32 samples");
  DemoPool pool = pool_demo_points(demos, fields, cfg.base);
  std::vector<std::size_t> keep = resample_pool(pool, demos.size(), cfg, cfg.base.seed);
  Points pts;
  for (std::size_t i : keep) pts.push_back(pool.points[i]);
  InteractionTemplate t = average_over_demos(std::move(pts), demos, fields);
  t.config = config_json(cfg.base);
  t.config["demos"] = demos.size();
  t.config["k"] = cfg.k > 0 ? cfg.k : static_cast<int>(demos.size());
  t.config["favor_dense"] = cfg.favor_dense;
  t.check();
  return t;
}

inline nlohmann::json to_json(const InteractionTemplate& t) {
  nlohmann::json pts = nlohmann::json::array(), desc = nlohmann::json::array();
  for (std::size_t i = 0; i < t.size(); ++i) {
    pts.push_back({t.points[i].x(), t.points[i].y(), t.points[i].z()});
    const auto col = t.descriptors.col(static_cast<Eigen::Index>(i));
    desc.push_back(std::vector<double>(col.data(), col.data() + col.size()));
  }
  return {{"format", "nift-template"},
          {"version", 1},
          {"fingerprint", t.fingerprint},
          {"anchor_pose_ref", to_json(t.anchor_pose_ref)},
          {"config", t.config},
          {"points", pts},
          {"outside", t.outside},
          {"descriptors", desc}};
}

inline InteractionTemplate template_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "nift-template") throw Error("not a template document");
  if (j.at("version") != 1) throw Error("unsupported template version");
  InteractionTemplate t;
  t.fingerprint = j.at("fingerprint");
  t.anchor_pose_ref = transform_from_json(j.at("anchor_pose_ref"));
  t.config = j.at("config");
  t.outside = j.at("outside").get<std::vector<double>>();
  const auto& pts = j.at("points");
  const auto& desc = j.at("descriptors");
  if (pts.size() != desc.size()) throw Error("template point and descriptor counts differ");
  const std::size_t dim = desc.empty() ? 0 : desc[0].size();
  t.descriptors.resize(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    auto p = pts[i].get<std::vector<double>>();
    auto d = desc[i].get<std::vector<double>>();
    if (p.size() != 3 || d.size() != dim) throw Error("malformed template entry " + std::to_string(i));
    t.points.emplace_back(p[0], p[1], p[2]);
    t.descriptors.col(static_cast<Eigen::Index>(i)) = Eigen::Map<Eigen::VectorXd>(d.data(), static_cast<Eigen::Index>(dim));
  }
  t.check();
  return t;
}

inline void save_template(const std::filesystem::path& path, const InteractionTemplate& t) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json(t).dump(1) << '\n';
}

inline InteractionTemplate load_template(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open template " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("template " + path.string() + ": " + e.what());
  }
  return template_from_json(j);
}

// Demo documents: {"anchor": path, "source": path, "anchor_pose": [16]}.
inline DemoInteraction load_demo(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open demo " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("demo " + path.string() + ": " + e.what());
  }
  auto rel = [&](const std::string& key) {
    std::filesystem::path p = j.at(key).get<std::string>();
    return p.is_absolute() ? p : path.parent_path() / p;
  };
  return {load_geometry(rel("anchor")), load_geometry(rel("source")), transform_from_json(j.at("anchor_pose"))};
}

}  // namespace nift
