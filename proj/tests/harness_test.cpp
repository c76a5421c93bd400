#include "nift/harness/bench.hpp"

#include <gtest/gtest.h>

#include <numbers>
#include <sstream>

using namespace nift;

namespace {

Points mug_points(std::size_t n, std::uint64_t seed) { return sample_surface(gen_shape({.kind = ShapeKind::mug}), n, seed); }

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SuiteConfig tiny_suite() {
  SuiteConfig s;
  s.seed = 7;
  s.methods = {"ibs-scf", "bps-scf", "cpd", "control"};
  s.regimes = {"upright"};
  s.demos = 2;
  s.trials = 2;
  s.template_samples = 32;
  s.bps_points = 32;
  s.ibs_grid = 24;
  s.analytic = {.scf = {.order = 5, .dir_count = 300}, .lattice = 8};
  s.optimizer.restarts = 2;
  s.optimizer.max_iters = 40;
  s.cpd_points = 150;
  return s;
}

}  // namespace

TEST(BpsPoints, FixedUnitSetScaledToAnchor) {
  Geometry a = icosphere(2, 0.5), b = icosphere(2, 2.0, Vec3(1, 2, 3));
  Points pa = bps_points(a, 256, 3), pb = bps_points(b, 256, 3);
  ASSERT_EQ(pa.size(), 256u);
  const Sphere sa = bounding_sphere(a), sb = bounding_sphere(b);
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_LE((pa[i] - sa.center).norm(), sa.radius + 1e-12);
    EXPECT_LT(((pa[i] - sa.center) / sa.radius - (pb[i] - sb.center) / sb.radius).norm(), 1e-12);
  }
  EXPECT_NE(bps_points(a, 256, 4), pa);
  EXPECT_THROW(bps_points(a, 0, 1), Error);
}

TEST(PenetrationDepth, SphereFixtures) {
  Geometry a = icosphere(4, 1.0), far = icosphere(4, 1.0, Vec3(3, 0, 0)), near = icosphere(4, 1.0, Vec3(1.5, 0, 0));
  EXPECT_EQ(penetration_depth(a, far), 0.0);
  EXPECT_EQ(penetration_depth(far, a), 0.0);
  EXPECT_NEAR(penetration_depth(a, near), 0.5, 0.01);
  Geometry inner = icosphere(3, 0.3, Vec3(0.1, 0, 0));
  EXPECT_GE(penetration_depth(inner, a), 0.6 - 0.01);
}

TEST(PoseError, SymmetryQuotientMatchesBruteForce) {
  const RigidTransform gt{rotation_from_axis_angle(Vec3(0.2, 0.1, -0.3)), Vec3(1, 0, 0)};
  PoseError zero = pose_error(gt, gt);
  EXPECT_NEAR(zero.rotation_deg, 0.0, 1e-5);  // trace form resolves ~1e-8 rad
  EXPECT_EQ(zero.translation, 0.0);
  // Half turn about a continuous axis is free.
  const RigidTransform flipped = gt * rotation(rotation_from_axis_angle(Vec3(0, 0, std::numbers::pi)));
  EXPECT_NEAR(pose_error(flipped, gt, Symmetry::continuous()).rotation_deg, 0.0, 1e-5);
  EXPECT_NEAR(pose_error(flipped, gt).rotation_deg, 180.0, 1e-6);
  EXPECT_NEAR(pose_error(flipped, gt, Symmetry::discrete(2)).rotation_deg, 0.0, 1e-5);

  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const RigidTransform est{haar_random_rotation(rng), Vec3::Zero()};
    const RigidTransform ref{haar_random_rotation(rng), Vec3::Zero()};
    double brute = 1e9;
    for (int k = 0; k < 36000; ++k) {
      const Mat3 s = rotation_from_axis_angle(Vec3(0, 0, 2 * std::numbers::pi * k / 36000.0));
      brute = std::min(brute, rad_to_deg(rotation_angle(est.rotation.transpose() * ref.rotation * s.transpose())));
    }
    EXPECT_NEAR(pose_error(est, ref, Symmetry::continuous()).rotation_deg, brute, 0.02);
    double brute3 = 1e9;
    for (int k = 0; k < 3; ++k) {
      const Mat3 s = rotation_from_axis_angle(Vec3(0, 0, 2 * std::numbers::pi * k / 3.0));
      brute3 = std::min(brute3, rad_to_deg(rotation_angle(est.rotation.transpose() * ref.rotation * s.transpose())));
    }
    EXPECT_NEAR(pose_error(est, ref, Symmetry::discrete(3)).rotation_deg, brute3, 1e-6);
  }
}

TEST(Cpd, IdentityAndSmallRotationAreRecovered) {
  const Points src = mug_points(300, 1);
  CpdResult same = cpd_rigid_register(src, src);
  EXPECT_LT(rad_to_deg(rotation_angle(same.transform.rotation)), 1e-6);
  EXPECT_LT(same.transform.translation.norm(), 1e-6);

  const RigidTransform g{rotation_from_axis_angle(Vec3(1, 1, 0).normalized() * (20.0 * std::numbers::pi / 180)),
                         Vec3(0.1, -0.05, 0.2)};
  CpdResult r = cpd_rigid_register(src, apply_transform(src, g));
  EXPECT_TRUE(r.converged);
  EXPECT_LT(rad_to_deg(rotation_angle(r.transform.rotation.transpose() * g.rotation)), 0.5);
  EXPECT_LT((r.transform.translation - g.translation).norm(), 1e-3);
  EXPECT_THROW(cpd_rigid_register(Points(3, Vec3::Zero()), src), Error);
}

TEST(Cpd, LargeRotationFixtureIsRecorded) {
  // Without coarse alignment the EM settles in a wrong basin.
  const Points src = mug_points(300, 1);
  const RigidTransform g{rotation_from_axis_angle(Vec3(1, 0, 0) * (170.0 * std::numbers::pi / 180)), Vec3::Zero()};
  CpdResult r = cpd_rigid_register(src, apply_transform(src, g));
  EXPECT_TRUE(is_rotation(r.transform.rotation, 1e-9));
  EXPECT_GT(rad_to_deg(rotation_angle(r.transform.rotation.transpose() * g.rotation)), 20.0);
}

TEST(Occupancy, WatertightCheckAndTrainedStub) {
  EXPECT_TRUE(is_watertight(gen_shape({.kind = ShapeKind::mug})));
  EXPECT_TRUE(is_watertight(gen_shape({.kind = ShapeKind::gripper})));
  Geometry open = icosphere(2, 1.0);
  open.triangles.pop_back();
  EXPECT_FALSE(is_watertight(open));

  TrainConfig cfg = desk_scale_train_config();
  cfg.epochs = 30;
  auto w = std::make_shared<RegressorWeights>(train_occupancy_weights(30, 256, 3, cfg));
  EXPECT_GT(w->meta.holdout_accuracy, 0.5);
  ShapeSpec bottle{.kind = ShapeKind::bottle};
  Geometry g = gen_shape(bottle);
  auto f = occupancy_stub_field(w, g);
  std::size_t widths = 0;
  for (const auto& l : w->decoder.layers()) widths += static_cast<std::size_t>(l.b.size());
  EXPECT_EQ(f->dim(), widths);
  EXPECT_GT(sigmoid(f->predict(Vec3(0, 0, 0.3))[0]), 0.5);
  EXPECT_LT(sigmoid(f->predict(f->domain().hi - Vec3::Constant(0.01))[0]), 0.5);
  EXPECT_THROW(occupancy_stub_field(w, open), Error);
  auto scf = std::make_shared<RegressorWeights>(*w);
  scf->task = FieldTask::scf;
  EXPECT_THROW(occupancy_stub_field(scf, g), Error);
}

TEST(Scoring, ReferenceGraspIsCleanAndEngaged) {
  const Geometry gripper = gen_shape({.kind = ShapeKind::gripper});
  std::mt19937_64 rng(2);
  for (ShapeKind k : {ShapeKind::mug, ShapeKind::bowl}) {
    for (int i = 0; i < 3; ++i) {
      ShapeSpec s = random_shape_spec(k, rng);
      s.pose = {haar_random_rotation(rng), Vec3(0.1, 0.2, 0.3)};
      const Geometry g = gen_shape(s);
      const RigidTransform ref = reference_grasp_pose(s);
      TrialRecord r = score_trial(gripper, ref, g, ref, {});
      EXPECT_TRUE(r.success) << to_string(k) << " " << i << " pen " << r.penetration;
      EXPECT_TRUE(r.pose_success);
      // Lifted well clear of the rim: no contact, no grasp.
      TrialRecord lifted = score_trial(gripper, s.pose * translation(Vec3(0, 0, 2.0)) * s.pose.inverse() * ref, g, ref, {});
      EXPECT_FALSE(lifted.engaged);
      EXPECT_FALSE(lifted.success);
    }
  }
  EXPECT_THROW(reference_grasp_pose({.kind = ShapeKind::rack}), Error);
}

TEST(Benchmark, EmptySuiteHasValidSchema) {
  SuiteConfig s = tiny_suite();
  s.trials = 0;
  BenchReport r = run_benchmark(s);
  nlohmann::json j = to_json(r);
  EXPECT_EQ(j["format"], "nift-bench");
  EXPECT_EQ(j["rows"].size(), s.methods.size());
  for (const auto& row : j["rows"]) EXPECT_TRUE(row["trials"].empty());
  EXPECT_EQ(to_csv(r).find('\n'), to_csv(r).size() - 1);
}

TEST(Benchmark, DeterministicCsvAndControlRow) {
  SuiteConfig s = tiny_suite();
  BenchReport a = run_benchmark(s), b = run_benchmark(s);
  EXPECT_EQ(to_csv(a), to_csv(b));
  ASSERT_EQ(a.rows.size(), 4u);
  for (const auto& row : a.rows) {
    ASSERT_EQ(row.trials.size(), 2u);
    for (const auto& t : row.trials) EXPECT_NE(t.seed, 0u);
  }
  EXPECT_EQ(a.rows[3].method, "control");
  EXPECT_DOUBLE_EQ(a.rows[3].success_rate(), 1.0);

  auto dir = std::filesystem::path(NIFT_TEST_TMP) / "bench";
  write_report(a, dir);
  EXPECT_EQ(slurp(dir / "report.csv"), to_csv(a));
  nlohmann::json j = nlohmann::json::parse(slurp(dir / "report.json"));
  EXPECT_EQ(j["rows"][0]["trials"].size(), 2u);
}

TEST(Benchmark, SuiteParsingAndMissingArtifacts) {
  nlohmann::json j = {{"seed", 3}, {"methods", {"ibs-nif"}}, {"trials", 1}, {"field", "missing.nift"}};
  SuiteConfig s = suite_from_json(j, "/nonexistent");
  EXPECT_EQ(s.seed, 3u);
  EXPECT_EQ(s.field, std::filesystem::path("/nonexistent/missing.nift"));
  EXPECT_THROW(run_benchmark(s), Error);
  EXPECT_THROW(suite_from_json({{"methods", {"magic"}}}), Error);
  EXPECT_THROW(suite_from_json({{"regimes", {"sideways"}}}), Error);
  EXPECT_THROW(suite_from_json({{"categories", {"rack"}}}), Error);
}
