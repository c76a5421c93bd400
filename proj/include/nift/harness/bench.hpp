#pragma once

#include "nift/harness/cpd.hpp"
#include "nift/harness/occupancy.hpp"
#include "nift/harness/scoring.hpp"
#include "nift/imitate.hpp"
#include "nift/io.hpp"

#include <cstdio>
#include <fstream>
#include <set>

namespace nift {

// Method ids: "<points>-<feature>" with points in {ibs, bps} and feature in
// {scf, nif, ndf}; "cpd" registers the first demo object onto the target;
// "control" imitates the first demo on its own object (one demo, ibs-scf).
inline const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> m = {"ibs-scf", "ibs-nif", "ibs-ndf", "bps-scf", "bps-nif",
                                             "bps-ndf", "cpd",     "control"};
  return m;
}

struct BenchThresholds {
  double penetration = 0.02;  // of target diameter
  double rotation_deg = 15.0;
  double translation = 0.10;  // of target diameter
};

struct SuiteConfig {
  std::uint64_t seed = 1;
  std::vector<std::string> categories = {"mug"};
  std::vector<std::string> regimes = {"upright", "arbitrary"};
  std::vector<std::string> methods = {"ibs-nif", "ibs-scf", "bps-nif", "bps-scf", "cpd", "control"};
  int demos = 10;
  int trials = 20;
  std::size_t template_samples = 64;
  std::size_t bps_points = 64;
  int ibs_grid = 32;
  AnalyticFieldConfig analytic{.scf = {.order = 5, .dir_count = 1000}, .lattice = 16};
  OptimizeConfig optimizer;
  CpdConfig cpd;
  std::size_t cpd_points = 400;
  double scale_lo = 0.8, scale_hi = 1.2;  // arbitrary regime
  double translation_radius = 0.25;       // arbitrary regime
  BenchThresholds thresholds;
  std::filesystem::path field;            // SCF regressor weights (nif)
  std::filesystem::path occupancy_field;  // occupancy weights (ndf)
  std::filesystem::path dump_failures;    // PLY per failed trial when set

  void check() const {
    if (demos < 1) throw Error("suite needs at least one demo");
    if (trials < 0) throw Error("trial count must be non-negative");
    for (const auto& c : categories) reference_grasp_pose(ShapeSpec{.kind = shape_kind_from_string(c)});
    for (const auto& r : regimes)
      if (r != "upright" && r != "arbitrary") throw Error("unknown regime: " + r);
    for (const auto& m : methods)
      if (std::find(known_methods().begin(), known_methods().end(), m) == known_methods().end())
        throw Error("unknown method: " + m);
    optimizer.check();
  }

  bool uses(const std::string& feature) const {
    for (const auto& m : methods)
      if (m.size() > 4 && m.substr(4) == feature) return true;
    return false;
  }
};

inline SuiteConfig suite_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  SuiteConfig s;
  auto path = [&](const char* key) -> std::filesystem::path {
    if (!j.contains(key)) return {};
    std::filesystem::path p = j.at(key).get<std::string>();
    return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
  };
  s.seed = j.value("seed", s.seed);
  s.categories = j.value("categories", s.categories);
  s.regimes = j.value("regimes", s.regimes);
  s.methods = j.value("methods", s.methods);
  s.demos = j.value("demos", s.demos);
  s.trials = j.value("trials", s.trials);
  s.template_samples = j.value("template_samples", s.template_samples);
  s.bps_points = j.value("bps_points", s.bps_points);
  s.ibs_grid = j.value("ibs_grid", s.ibs_grid);
  s.analytic.scf.order = j.value("scf_order", s.analytic.scf.order);
  s.analytic.scf.dir_count = j.value("scf_directions", s.analytic.scf.dir_count);
  s.analytic.lattice = j.value("lattice", s.analytic.lattice);
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    s.optimizer.restarts = o.value("restarts", s.optimizer.restarts);
    s.optimizer.max_iters = o.value("max_iters", s.optimizer.max_iters);
    s.optimizer.learning_rate = o.value("learning_rate", s.optimizer.learning_rate);
  }
  if (j.contains("thresholds")) {
    const auto& t = j.at("thresholds");
    s.thresholds.penetration = t.value("penetration", s.thresholds.penetration);
    s.thresholds.rotation_deg = t.value("rotation_deg", s.thresholds.rotation_deg);
    s.thresholds.translation = t.value("translation", s.thresholds.translation);
  }
  s.cpd_points = j.value("cpd_points", s.cpd_points);
  s.field = path("field");
  s.occupancy_field = path("occupancy_field");
  s.dump_failures = path("dump_failures");
  s.check();
  return s;
}

inline nlohmann::json to_json(const SuiteConfig& s) {
  return {{"seed", s.seed},
          {"categories", s.categories},
          {"regimes", s.regimes},
          {"methods", s.methods},
          {"demos", s.demos},
          {"trials", s.trials},
          {"template_samples", s.template_samples},
          {"bps_points", s.bps_points},
          {"ibs_grid", s.ibs_grid},
          {"scf_order", s.analytic.scf.order},
          {"scf_directions", s.analytic.scf.dir_count},
          {"lattice", s.analytic.lattice},
          {"optimizer",
           {{"restarts", s.optimizer.restarts},
            {"max_iters", s.optimizer.max_iters},
            {"learning_rate", s.optimizer.learning_rate}}},
          {"thresholds",
           {{"penetration", s.thresholds.penetration},
            {"rotation_deg", s.thresholds.rotation_deg},
            {"translation", s.thresholds.translation}}},
          {"cpd_points", s.cpd_points},
          {"field", s.field.string()},
          {"occupancy_field", s.occupancy_field.string()}};
}

struct TrialRecord {
  int index = 0;
  std::uint64_t seed = 0;
  double residual = 0.0;
  double penetration = 0.0;  // fraction of target diameter
  bool engaged = false;
  double rotation_deg = 0.0;
  double translation = 0.0;  // fraction of target diameter
  bool success = false;       // no penetration and the target sits between the fingers
  bool pose_success = false;  // success and close to the reference grasp
};

struct MethodReport {
  std::string category, regime, method;
  std::vector<TrialRecord> trials;

  double success_rate() const { return rate(&TrialRecord::success); }
  double pose_success_rate() const { return rate(&TrialRecord::pose_success); }

 private:
  double rate(bool TrialRecord::*flag) const {
    if (trials.empty()) return 0.0;
    double n = 0;
    for (const auto& t : trials) n += t.*flag;
    return n / double(trials.size());
  }
};

struct BenchReport {
  SuiteConfig suite;
  std::vector<MethodReport> rows;

  // Mean success over every row of a method.
  double aggregate_success(const std::string& method) const {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows)
      if (r.method == method)
        for (const auto& t : r.trials) sum += t.success, ++n;
    return n ? sum / double(n) : 0.0;
  }
};

namespace detail {

inline std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
  std::vector<std::uint32_t> words;
  for (auto p : parts) words.push_back(static_cast<std::uint32_t>(p)), words.push_back(static_cast<std::uint32_t>(p >> 32));
  std::seed_seq seq(words.begin(), words.end());
  std::array<std::uint32_t, 2> out;
  seq.generate(out.begin(), out.end());
  return (std::uint64_t(out[0]) << 32) | out[1];
}

struct FieldFactory {
  const SuiteConfig& suite;
  std::shared_ptr<const RegressorWeights> scf_weights, occupancy_weights;

  std::unique_ptr<DescriptorField> make(const std::string& feature, const Geometry& g) const {
    if (feature == "scf") return analytic_field(g, suite.analytic);
    if (feature == "nif") return learned_field(scf_weights, object_cloud(g, scf_weights->encoder, 0));
    if (feature == "ndf") return occupancy_stub_field(occupancy_weights, g);
    throw Error("unknown feature: " + feature);
  }
};

struct Scene {
  ShapeSpec spec;
  Geometry geom;
};

inline void dump_failure(const std::filesystem::path& dir, const std::string& name, const Geometry& target,
                         const Geometry& anchor) {
  std::filesystem::create_directories(dir);
  Geometry both = merge_meshes(target, anchor);
  std::vector<Rgb> colors(both.vertices.size(), Rgb{170, 170, 170});
  for (std::size_t i = target.vertices.size(); i < colors.size(); ++i) colors[i] = Rgb{220, 40, 40};
  write_ply(dir / (name + ".ply"), both.vertices, both.triangles, {.colors = &colors});
}

}  // namespace detail

inline TrialRecord score_trial(const Geometry& anchor, const RigidTransform& anchor_pose, const Geometry& target,
                               const RigidTransform& reference, const BenchThresholds& th) {
  TrialRecord r;
  const double diam = 2.0 * bounding_sphere(target).radius;
  r.penetration = penetration_depth(apply_transform(anchor, anchor_pose), target) / diam;
  r.engaged = grasp_engaged(target, anchor_pose);
  const PoseError e = pose_error(anchor_pose, reference, gripper_symmetry());
  r.rotation_deg = e.rotation_deg;
  r.translation = e.translation / diam;
  r.success = r.penetration < th.penetration && r.engaged;
  r.pose_success = r.success && r.rotation_deg < th.rotation_deg && r.translation < th.translation;
  return r;
}

inline BenchReport run_benchmark(const SuiteConfig& suite, std::ostream* log = nullptr) {
  suite.check();
  detail::FieldFactory fields{suite, nullptr, nullptr};
  if (suite.uses("nif")) {
    if (suite.field.empty() || !std::filesystem::exists(suite.field))
      throw Error("suite uses nif methods but the field artifact is missing: '" + suite.field.string() + "'");
    fields.scf_weights = std::make_shared<RegressorWeights>(load_weights(suite.field));
  }
  if (suite.uses("ndf")) {
    if (suite.occupancy_field.empty() || !std::filesystem::exists(suite.occupancy_field))
      throw Error("suite uses ndf methods but the occupancy artifact is missing: '" +
                  suite.occupancy_field.string() + "'");
    fields.occupancy_weights = std::make_shared<RegressorWeights>(load_weights(suite.occupancy_field));
  }

  BenchReport report;
  report.suite = suite;
  const ShapeSpec gripper_spec{.kind = ShapeKind::gripper};
  const Geometry gripper = gen_shape(gripper_spec);
  const AggregateConfig agg{.base = {.ibs = {.grid_res = suite.ibs_grid}, .samples = suite.template_samples,
                                     .seed = suite.seed}};

  for (std::size_t ci = 0; ci < suite.categories.size(); ++ci) {
    const ShapeKind kind = shape_kind_from_string(suite.categories[ci]);
    std::mt19937_64 demo_rng(detail::mix_seed({suite.seed, ci, 1}));
    std::vector<DemoInteraction> demos;
    std::vector<ShapeSpec> demo_specs;
    for (int d = 0; d < suite.demos; ++d) {
      ShapeSpec s = random_shape_spec(kind, demo_rng);
      demo_specs.push_back(s);
      demos.push_back({gripper, gen_shape(s), reference_grasp_pose(s)});
    }

    // Templates per method, shared by every regime and trial.
    std::map<std::string, InteractionTemplate> templates;
    for (const auto& m : suite.methods) {
      if (m == "cpd") continue;
      const std::string feature = m == "control" ? "scf" : m.substr(4);
      const std::size_t nd = m == "control" ? 1 : demos.size();
      std::vector<DemoInteraction> used(demos.begin(), demos.begin() + static_cast<std::ptrdiff_t>(nd));
      std::vector<std::unique_ptr<DescriptorField>> owned;
      std::vector<const DescriptorField*> ptrs;
      for (const auto& d : used) {
        owned.push_back(fields.make(feature, d.source));
        ptrs.push_back(owned.back().get());
      }
      if (m.starts_with("bps")) {
        InteractionTemplate t =
            average_over_demos(bps_points(gripper, suite.bps_points, suite.seed), used, ptrs);
        t.config = {{"points", "bps"}, {"count", suite.bps_points}, {"seed", suite.seed}, {"demos", nd}};
        t.check();
        templates.emplace(m, std::move(t));
      } else {
        templates.emplace(m, aggregate_templates(used, ptrs, agg));
      }
      if (log) *log << "template " << suite.categories[ci] << ' ' << m << ": " << templates.at(m).size() << " points\n";
    }

    for (std::size_t ri = 0; ri < suite.regimes.size(); ++ri) {
      const bool arbitrary = suite.regimes[ri] == "arbitrary";
      std::vector<MethodReport> rows;
      for (const auto& m : suite.methods) rows.push_back({suite.categories[ci], suite.regimes[ri], m, {}});

      for (int trial = 0; trial < suite.trials; ++trial) {
        const std::uint64_t seed = detail::mix_seed({suite.seed, ci, ri, static_cast<std::uint64_t>(trial), 2});
        std::mt19937_64 rng(seed);
        ShapeSpec held_out = random_shape_spec(kind, rng);
        RigidTransform placement;
        double scale = 1.0;
        if (arbitrary) {
          placement = {haar_random_rotation(rng), uniform_in_ball(rng, suite.translation_radius)};
          scale = std::uniform_real_distribution<double>(suite.scale_lo, suite.scale_hi)(rng);
        }
        std::map<std::string, detail::Scene> scenes;  // "target" and, for the control row, "self"
        auto posed = [&](ShapeSpec s) {
          s.pose = placement;
          s.scale = scale;
          return detail::Scene{s, gen_shape(s)};
        };
        scenes.emplace("target", posed(held_out));
        scenes.emplace("self", posed(demo_specs[0]));
        std::map<std::string, std::unique_ptr<DescriptorField>> target_fields;

        for (std::size_t mi = 0; mi < suite.methods.size(); ++mi) {
          const std::string& m = suite.methods[mi];
          const detail::Scene& scene = scenes.at(m == "control" ? "self" : "target");
          RigidTransform anchor_pose;
          double residual = 0.0;
          if (m == "cpd") {
            Points src = sample_surface(demos[0].source, suite.cpd_points, seed);
            Points dst = sample_surface(scene.geom, suite.cpd_points, seed + 1);
            CpdResult c = cpd_rigid_register(src, dst, suite.cpd);
            anchor_pose = c.transform * demos[0].anchor_pose;
            residual = c.sigma2;
          } else {
            const std::string feature = m == "control" ? "scf" : m.substr(4);
            const std::string key = (m == "control" ? "self:" : "target:") + feature;
            if (!target_fields.count(key)) target_fields.emplace(key, fields.make(feature, scene.geom));
            OptimizeConfig oc = suite.optimizer;
            oc.seed = seed;
            PoseResult r = optimize_pose(templates.at(m), *target_fields.at(key), scene.geom, oc);
            anchor_pose = r.anchor_transform;
            residual = r.best_residual;
          }
          TrialRecord rec = score_trial(gripper, anchor_pose, scene.geom, reference_grasp_pose(scene.spec), suite.thresholds);
          rec.index = trial;
          rec.seed = seed;
          rec.residual = residual;
          if (!rec.success && !suite.dump_failures.empty())
            detail::dump_failure(suite.dump_failures,
                                 suite.categories[ci] + "_" + suite.regimes[ri] + "_" + m + "_" + std::to_string(trial),
                                 scene.geom, apply_transform(gripper, anchor_pose));
          if (log)
            *log << suite.categories[ci] << ' ' << suite.regimes[ri] << ' ' << m << " trial " << trial
                 << (rec.success ? " ok" : " fail") << " pen " << rec.penetration << " rot " << rec.rotation_deg
                 << '\n';
          rows[mi].trials.push_back(rec);
        }
      }
      for (auto& r : rows) report.rows.push_back(std::move(r));
    }
  }
  return report;
}

inline nlohmann::json to_json(const BenchReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::json trials = nlohmann::json::array();
    for (const auto& t : row.trials)
      trials.push_back({{"index", t.index},
                        {"seed", t.seed},
                        {"residual", t.residual},
                        {"penetration", t.penetration},
                        {"engaged", t.engaged},
                        {"rotation_deg", t.rotation_deg},
                        {"translation", t.translation},
                        {"success", t.success},
                        {"pose_success", t.pose_success}});
    rows.push_back({{"category", row.category},
                    {"regime", row.regime},
                    {"method", row.method},
                    {"success_rate", row.success_rate()},
                    {"pose_success_rate", row.pose_success_rate()},
                    {"trials", trials}});
  }
  nlohmann::json methods = nlohmann::json::object();
  for (const auto& m : r.suite.methods) methods[m] = r.aggregate_success(m);
  return {{"format", "nift-bench"}, {"version", 1}, {"suite", to_json(r.suite)}, {"aggregate_success", methods},
          {"rows", rows}};
}

inline std::string to_csv(const BenchReport& r) {
  std::string out = "category,regime,method,trial,seed,residual,penetration,engaged,rotation_deg,translation,success,pose_success\n";
  char buf[512];
  for (const auto& row : r.rows)
    for (const auto& t : row.trials) {
      std::snprintf(buf, sizeof buf, "%s,%s,%s,%d,%llu,%.6f,%.6f,%d,%.4f,%.6f,%d,%d\n", row.category.c_str(),
                    row.regime.c_str(), row.method.c_str(), t.index, static_cast<unsigned long long>(t.seed),
                    t.residual, t.penetration, int(t.engaged), t.rotation_deg, t.translation, int(t.success),
                    int(t.pose_success));
      out += buf;
    }
  return out;
}

inline void write_report(const BenchReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "report.json") << to_json(r).dump(2) << '\n';
  std::ofstream csv(dir / "report.csv", std::ios::binary);
  csv << to_csv(r);
  if (!csv) throw Error("cannot write " + (dir / "report.csv").string());
}

}  // namespace nift
