// Acceptance run: one PASS/FAIL line per criterion, exit code 1 if any fails.
#include "nift/harness/bench.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>

using namespace nift;

namespace {

const std::filesystem::path kWork = NIFT_ACCEPT_DIR;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const char* name, const std::function<Outcome()>& body) {
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  failures += !o.pass;
  std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
  std::fflush(stdout);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Vec3 random_point_in(const Aabb& box, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return box.lo + Vec3(u(rng), u(rng), u(rng)).cwiseProduct(box.extent());
}

// Hollow sphere with inward-facing inner wall.
Geometry spherical_shell(double r_in, double r_out) {
  Geometry inner = icosphere(4, r_in);
  for (auto& t : inner.triangles) std::swap(t[1], t[2]);
  return merge_meshes(icosphere(4, r_out), inner);
}

double rel_linf(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).cwiseAbs().maxCoeff() / a.cwiseAbs().maxCoeff();
}

// Trained once and cached next to the binary; later criteria reuse it.
std::shared_ptr<RegressorWeights> scf_weights;
const std::filesystem::path kFieldPath = kWork / "desk_scale_field.nift";

Outcome train_or_load() {
  if (std::filesystem::exists(kFieldPath)) {
    scf_weights = std::make_shared<RegressorWeights>(load_weights(kFieldPath));
  } else {
    TrainingSet set = generate_training_set(desk_scale_sampler(), 100, 256, 1);
    scf_weights = std::make_shared<RegressorWeights>(train_field(set, desk_scale_train_config()));
    save_weights(kFieldPath, *scf_weights);
  }
  const TrainingMeta& m = scf_weights->meta;
  return {m.holdout_mean_r2 >= 0.7 && m.seconds < 600.0,
          fmt("held-out mean R2 %.3f over %zu examples, trained in %.0f s", m.holdout_mean_r2, m.holdout_examples,
              m.seconds)};
}

}  // namespace

int main() {
  std::filesystem::create_directories(kWork);

  report(1, "sh-gram", [] {
    auto t0 = std::chrono::steady_clock::now();
    DirectionSet d = make_direction_set(5000, DirectionScheme::fibonacci, 5);
    Eigen::MatrixXd w = d.basis.transpose() *
                        Eigen::Map<const Eigen::VectorXd>(d.weights.data(), d.size()).asDiagonal() * d.basis;
    const double err = (w - Eigen::MatrixXd::Identity(w.rows(), w.cols())).cwiseAbs().maxCoeff();
    const double secs = seconds_since(t0);
    return Outcome{err < 5e-3 && secs < 5.0, fmt("max |G - I| %.2e in %.2f s", err, secs)};
  });

  report(2, "scf-fixed-point", [] {
    Geometry sphere = icosphere(4, 1.0);
    if (sphere.vertices.size() != 2562) throw Error("unexpected sphere resolution");
    Eigen::VectorXd p = scf_at(sphere, Vec3::Zero()).powers;
    Eigen::VectorXd expect = Eigen::VectorXd::Zero(p.size());
    expect[0] = std::sqrt(4.0 * std::numbers::pi);
    const double err = (p - expect).cwiseAbs().maxCoeff();
    return Outcome{err < 1e-2, fmt("max entry error %.2e", err)};
  });

  report(3, "scf-rotation-invariance", [] {
    std::mt19937_64 rng(3);
    const std::vector<ShapeKind> kinds = {ShapeKind::mug, ShapeKind::bowl, ShapeKind::bottle, ShapeKind::rack};
    ScfEvaluator eval;
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      Geometry g = gen_shape(random_shape_spec(kinds[i % kinds.size()], rng));
      const Vec3 p = random_point_in(g.bounds().scaled(1.5), rng);
      const RigidTransform t{haar_random_rotation(rng), Vec3::Zero()};
      worst = std::max(worst, rel_linf(eval(RayAccelerator(g), p).powers,
                                       eval(RayAccelerator(apply_transform(g, t)), t(p)).powers));
    }
    return Outcome{worst < 0.02, fmt("worst relative change %.2e over 20 triples", worst)};
  });

  report(4, "scf-scale-invariance", [] {
    std::mt19937_64 rng(4);
    ScfEvaluator eval;
    double worst = 0.0;
    for (int i = 0; i < 5; ++i) {
      Geometry g = gen_shape(random_shape_spec(ShapeKind::mug, rng));
      const Vec3 p = random_point_in(g.bounds().scaled(1.5), rng);
      const Eigen::VectorXd base = eval(RayAccelerator(g), p).powers;
      for (double s : {0.5, 2.0}) worst = std::max(worst, rel_linf(base, eval(RayAccelerator(scaled(g, s)), s * p).powers));
    }
    return Outcome{worst < 1e-6, fmt("worst relative change %.2e", worst)};
  });

  report(5, "ibs", [] {
    auto t0 = std::chrono::steady_clock::now();
    RayAccelerator a(icosphere(4, 1.0, Vec3(-1.5, 0, 0))), b(icosphere(4, 1.0, Vec3(1.5, 0, 0)));
    IbsPointSet plane = compute_ibs(a, b, {.grid_res = 64});
    const double secs = seconds_since(t0);
    double plane_err = 0.0;
    for (const auto& p : plane.points) plane_err = std::max(plane_err, std::abs(p.x()));

    RayAccelerator inner(icosphere(4, 1.0)), shell(spherical_shell(3.0, 3.2));
    IbsPointSet mid = compute_ibs(inner, shell, {.grid_res = 64});
    double mid_err = 0.0;
    for (const auto& p : mid.points) mid_err = std::max(mid_err, std::abs(p.norm() - 2.0));

    std::size_t total = 0, ok = 0;
    auto audit = [&](const IbsPointSet& s, const RayAccelerator& x, const RayAccelerator& y) {
      for (const auto& p : s.points) {
        ++total;
        ok += relative_equidistance(x.nearest_distance_brute(p), y.nearest_distance_brute(p)) < 0.01;
      }
    };
    audit(plane, a, b);
    audit(mid, inner, shell);
    ShapeSpec mug{.kind = ShapeKind::mug};
    Geometry mug_geom = gen_shape(mug);
    RayAccelerator grip(apply_transform(gen_shape({.kind = ShapeKind::gripper}), rim_grasp_pose(mug))), cup(mug_geom);
    audit(compute_ibs(grip, cup, {.grid_res = 32}), grip, cup);

    const bool pass = plane_err < 1e-2 && mid_err < 2e-2 && ok == total && total > 0 && secs < 30.0;
    return Outcome{pass, fmt("plane %.1e, mid-radius %.1e, equidistant %zu/%zu, 64^3 in %.1f s", plane_err, mid_err, ok,
                             total, secs)};
  });

  // Criterion 7 runs first in wall-clock order so that 6 can check the trained network.
  Outcome trained;
  try {
    trained = train_or_load();
  } catch (const std::exception& e) {
    trained = {false, std::string("exception: ") + e.what()};
  }

  report(6, "learned-gradient", [] {
    if (!scf_weights) throw Error("no trained field");
    auto f = learned_field(scf_weights, object_cloud(gen_shape({.kind = ShapeKind::mug}), scf_weights->encoder, 0));
    std::mt19937_64 rng(6);
    const double h = 1e-5 * f->scene_diameter();
    int ok = 0;
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const Vec3 x = random_point_in(f->domain(), rng);
      Eigen::MatrixXd fd(3, f->dim());
      for (int a = 0; a < 3; ++a) {
        Vec3 e = Vec3::Zero();
        e[a] = h;
        fd.row(a) = ((f->descriptor_at(x + e) - f->descriptor_at(x - e)) / (2 * h)).transpose();
      }
      const double rel = (f->gradient_at(x) - fd).norm() / std::max(1e-12, fd.norm());
      worst = std::max(worst, rel);
      ok += rel < 1e-4;
    }
    return Outcome{ok == 100, fmt("%d/100 queries within 1e-4, worst %.1e", ok, worst)};
  });

  report(7, "field-training", [&] { return trained; });

  report(8, "self-imitation", [] {
    ShapeSpec mug{.kind = ShapeKind::mug};
    Geometry g = gen_shape(mug);
    const AnalyticFieldConfig fc{.scf = {.order = 5, .dir_count = 1000}, .lattice = 32};
    AnalyticField field(g, fc);
    DemoInteraction demo{gen_shape({.kind = ShapeKind::gripper}), g, rim_grasp_pose(mug)};
    InteractionTemplate t = build_template(demo, field, {.ibs = {.grid_res = 32}, .samples = 64, .seed = 1});
    const double diam = 2.0 * bounding_sphere(g).radius;
    const Symmetry sym = shape_symmetry(mug.kind);
    int ok = 0;
    for (int trial = 0; trial < 10; ++trial) {
      PoseResult r = optimize_pose(t, field, g, {.seed = static_cast<std::uint64_t>(trial)});
      PoseError e = pose_error(r.best_transform, {}, sym);
      ok += e.rotation_deg < 5.0 && e.translation < 0.02 * diam;
    }
    std::mt19937_64 rng(8);
    const RigidTransform applied{haar_random_rotation(rng), Vec3::Zero()};
    Geometry rotated = apply_transform(g, applied);
    AnalyticField rotated_field(rotated, fc);
    PoseResult rr = optimize_pose(t, rotated_field, rotated, {.seed = 0});
    const double rot_err = pose_error(rr.best_transform, applied, sym).rotation_deg;
    return Outcome{ok >= 9 && rot_err < 10.0,
                   fmt("identity recovered in %d/10 trials; rotated target off by %.1f deg", ok, rot_err)};
  });

  // Criteria 9 and 10 share one suite run.
  SuiteConfig suite;
  suite.seed = 1;
  suite.methods = {"ibs-nif", "ibs-scf"};
  suite.regimes = {"upright", "arbitrary"};
  suite.demos = 10;
  suite.trials = 20;
  suite.field = kFieldPath;
  std::optional<BenchReport> bench;
  std::string bench_error;
  try {
    if (!scf_weights) throw Error("no trained field");
    bench = run_benchmark(suite);
    write_report(*bench, kWork / "suite");
  } catch (const std::exception& e) {
    bench_error = e.what();
  }

  report(9, "cross-instance", [&] {
    if (!bench) throw Error(bench_error);
    const MethodReport* row = nullptr;
    for (const auto& r : bench->rows)
      if (r.method == "ibs-nif" && r.regime == "arbitrary") row = &r;
    if (!row || row->trials.size() != 20) throw Error("missing arbitrary ibs-nif row");
    // Rerunning a prefix of the suite must reproduce the same trials.
    SuiteConfig again = suite;
    again.methods = {"ibs-nif"};
    again.regimes = {"upright", "arbitrary"};
    again.trials = 3;
    BenchReport re = run_benchmark(again);
    bool reproducible = true;
    for (std::size_t i = 0; i < 3; ++i) {
      const TrialRecord &a = row->trials[i], &b = re.rows[1].trials[i];
      reproducible &= a.seed == b.seed && a.residual == b.residual && a.penetration == b.penetration;
    }
    const double rate = row->success_rate();
    return Outcome{rate >= 0.8 && reproducible,
                   fmt("success %.0f%% (pose %.0f%%) over 20 arbitrary mugs, reruns %s", 100 * rate,
                       100 * row->pose_success_rate(), reproducible ? "identical" : "differ")};
  });

  report(10, "method-ordering", [&] {
    if (!bench) throw Error(bench_error);
    const double nif = bench->aggregate_success("ibs-nif"), scf = bench->aggregate_success("ibs-scf");
    return Outcome{nif >= scf, fmt("ibs-nif %.2f vs ibs-scf %.2f", nif, scf)};
  });

  report(11, "cpd", [] {
    const Points src = sample_surface(gen_shape({.kind = ShapeKind::mug}), 300, 1);
    auto err = [&](const RigidTransform& g) {
      CpdResult r = cpd_rigid_register(src, apply_transform(src, g));
      return rad_to_deg(rotation_angle(r.transform.rotation.transpose() * g.rotation));
    };
    const double deg = std::numbers::pi / 180.0;
    const double id = err({});
    const double small = err({rotation_from_axis_angle(Vec3(1, 1, 0).normalized() * (20 * deg)), Vec3(0.1, -0.05, 0.2)});
    const double large = err({rotation_from_axis_angle(Vec3(1, 0, 0) * (170 * deg)), Vec3::Zero()});
    return Outcome{id < 0.5 && small < 0.5,
                   fmt("identity %.1e deg, 20 deg case %.2e deg, 170 deg fixture off by %.1f deg", id, small, large)};
  });

  report(12, "bench-determinism", [] {
    const nlohmann::json j = {{"seed", 11},
                              {"categories", {"mug"}},
                              {"regimes", {"upright", "arbitrary"}},
                              {"methods", {"ibs-scf", "bps-scf", "cpd", "control"}},
                              {"demos", 2},
                              {"trials", 2},
                              {"template_samples", 32},
                              {"bps_points", 32},
                              {"ibs_grid", 24},
                              {"scf_directions", 300},
                              {"lattice", 8},
                              {"optimizer", {{"restarts", 2}, {"max_iters", 40}}},
                              {"cpd_points", 150}};
    const auto suite_path = kWork / "determinism_suite.json";
    std::ofstream(suite_path) << j.dump(2);
    std::string csv[2];
    for (int k = 0; k < 2; ++k) {
      const auto out = kWork / ("determinism_" + std::to_string(k));
      std::filesystem::remove_all(out);
      const std::string cmd = std::string("\"") + NIFT_CLI + "\" bench --suite \"" + suite_path.string() +
                              "\" --seed 11 --out \"" + out.string() + "\" > /dev/null 2>&1";
      if (std::system(cmd.c_str()) != 0) throw Error("nift bench failed: " + cmd);
      csv[k] = slurp(out / "report.csv");
    }
    const bool same = !csv[0].empty() && csv[0] == csv[1];
    return Outcome{same, fmt("two runs, %zu CSV bytes, %s", csv[0].size(), same ? "identical" : "different")};
  });

  return failures == 0 ? 0 : 1;
}
