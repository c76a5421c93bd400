#include "nift/harness/scoring.hpp"
#include "nift/imitate.hpp"

#include <gtest/gtest.h>

using namespace nift;

namespace {

const AnalyticFieldConfig kSphereField{.scf = {.order = 5, .dir_count = 600}, .lattice = 12};
const TemplateConfig kTemplate{.ibs = {.grid_res = 24}, .samples = 48, .seed = 2};

DemoInteraction sphere_demo() {
  return {gen_shape({.kind = ShapeKind::gripper}), icosphere(3, 0.5), translation(Vec3(0, 0, 0.8))};
}

DemoInteraction mug_demo() {
  ShapeSpec mug{.kind = ShapeKind::mug};
  return {gen_shape({.kind = ShapeKind::gripper}), gen_shape(mug), rim_grasp_pose(mug)};
}

std::shared_ptr<RegressorWeights> random_weights(std::uint64_t seed) {
  auto w = std::make_shared<RegressorWeights>();
  const int d = w->encoder.input_dim();
  w->decoder = Mlp(d, {32, 32, 6}, Activation::tanh, seed);
  w->input_mean = Eigen::VectorXd::Zero(d);
  w->input_std = Eigen::VectorXd::Ones(d);
  return w;
}

}  // namespace

TEST(Adam, FirstStepMovesByLearningRate) {
  AdamState s(3);
  Eigen::VectorXd p = Eigen::VectorXd::Zero(3), g(3);
  g << 2.0, -0.5, 1e3;
  Eigen::VectorXd next = adam_step(s, p, g, 1e-2);
  EXPECT_NEAR(next[0], -1e-2, 1e-9);
  EXPECT_NEAR(next[1], 1e-2, 1e-9);
  EXPECT_NEAR(next[2], -1e-2, 1e-9);

  AdamState z(2);
  Eigen::VectorXd q(2);
  q << 0.3, -0.7;
  EXPECT_EQ(adam_step(z, q, Eigen::VectorXd::Zero(2), 1e-2), q);
  EXPECT_THROW(adam_step(z, q, Eigen::VectorXd::Zero(3), 1e-2), Error);
}

TEST(Adam, MatchesScalarReferenceOnQuadratic) {
  // f(x, y) = 3x^2 + 0.5y^2 - xy, reference written with plain scalars.
  auto grad = [](double x, double y) { return std::array<double, 2>{6 * x - y, y - x}; };
  double rx = 1.0, ry = -2.0, m[2] = {0, 0}, v[2] = {0, 0};
  AdamState s(2);
  Eigen::VectorXd p(2);
  p << 1.0, -2.0;
  for (int t = 1; t <= 100; ++t) {
    auto g = grad(rx, ry);
    double* r[2] = {&rx, &ry};
    for (int k = 0; k < 2; ++k) {
      m[k] = 0.9 * m[k] + 0.1 * g[k];
      v[k] = 0.999 * v[k] + 0.001 * g[k] * g[k];
      const double mh = m[k] / (1 - std::pow(0.9, t)), vh = v[k] / (1 - std::pow(0.999, t));
      *r[k] -= 0.05 * mh / (std::sqrt(vh) + 1e-8);
    }
    auto ge = grad(p[0], p[1]);
    p = adam_step(s, p, Eigen::Vector2d(ge[0], ge[1]), 0.05);
    ASSERT_NEAR(p[0], rx, 1e-12);
    ASSERT_NEAR(p[1], ry, 1e-12);
  }
}

TEST(Objective, SelfResidualIsZeroAndGradientVanishes) {
  DemoInteraction demo = sphere_demo();
  AnalyticField field(demo.source, kSphereField);
  InteractionTemplate t = build_template(demo, field, kTemplate);
  EXPECT_LT(objective(t, field, {}), 1e-6);
  Eigen::Matrix<double, 6, 1> g;
  objective_gradient(t, field, {}, centroid(t.template_points()), &g);
  EXPECT_LT(g.norm(), 1e-9);
}

TEST(Objective, InvariantToPointOrder) {
  DemoInteraction demo = sphere_demo();
  AnalyticField field(demo.source, kSphereField);
  InteractionTemplate t = build_template(demo, field, kTemplate);
  const RigidTransform pose{rotation_from_axis_angle(Vec3(0.1, -0.2, 0.05)), Vec3(0.02, 0.03, -0.01)};
  InteractionTemplate r = t;
  const std::size_t n = t.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = n - 1 - i;
    r.points[i] = t.points[j];
    r.outside[i] = t.outside[j];
    r.descriptors.col(static_cast<Eigen::Index>(i)) = t.descriptors.col(static_cast<Eigen::Index>(j));
  }
  EXPECT_NEAR(objective(t, field, pose), objective(r, field, pose), 1e-9);
}

TEST(Objective, SinglePointArithmetic) {
  AnalyticField field(icosphere(2, 0.5), {.scf = {.order = 2, .dir_count = 200}});
  const Vec3 y(0.1, 0.2, 0.3);
  Eigen::VectorXd f = field.descriptor_at(y), d(3);
  d << f[0] + 0.5, f[1] - 0.25, f[2];
  EXPECT_NEAR(point_residual(field, d, 0.0, 10.0, y, nullptr), 0.75, 1e-12);
  // Outside the domain the clamped descriptor is compared and the distance
  // mismatch is charged per unit.
  const Aabb& box = field.domain();
  const Vec3 out = Vec3(box.hi.x() + 0.2, 0.0, 0.0);
  const Vec3 at = clamp_to_box(box, out);
  Eigen::VectorXd fa = field.descriptor_at(at);
  EXPECT_NEAR(point_residual(field, fa, 0.05, 10.0, out, nullptr), 10.0 * ((out - at).norm() - 0.05), 1e-9);
}

TEST(ObjectiveGradient, MatchesFiniteDifferencesWithLearnedField) {
  DemoInteraction demo = sphere_demo();
  auto w = random_weights(5);
  LearnedField field(w, object_cloud(demo.source, w->encoder, 0));
  InteractionTemplate t = build_template(demo, field, kTemplate);
  const Vec3 pivot = centroid(t.template_points());
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    PoseState s{rotation_from_axis_angle(uniform_in_ball(rng, 0.5)), uniform_in_ball(rng, 0.1)};
    Eigen::Matrix<double, 6, 1> g;
    objective_gradient(t, field, s, pivot, &g);
    const Eigen::Matrix<double, 6, 1> fd = objective_gradient_fd(t, field, s, pivot);
    EXPECT_LT((g - fd).norm(), 1e-3 * std::max(1.0, fd.norm())) << "trial " << trial;
  }
}

TEST(OptimizePose, PureTranslationToyRecoversOffset) {
  DemoInteraction demo = sphere_demo();
  AnalyticField field(demo.source, kSphereField);
  InteractionTemplate t = build_template(demo, field, kTemplate);
  const Vec3 pivot = centroid(t.template_points());
  PoseState init{Mat3::Identity(), Vec3(0.06, -0.04, 0.05)};
  RestartResult r = run_restart(t, field, pivot, init, {.max_iters = 500});
  EXPECT_FALSE(r.diverged);
  EXPECT_LT(r.best_transform.translation.norm(), 0.02);
  for (std::size_t i = 1; i < r.best_trace.size(); ++i) EXPECT_LE(r.best_trace[i], r.best_trace[i - 1]);
  EXPECT_LT(r.best_residual, 0.1 * r.trace.front());
}

TEST(OptimizePose, DeterministicAndTranslationEquivariant) {
  DemoInteraction demo = mug_demo();
  const AnalyticFieldConfig fc{.scf = {.order = 5, .dir_count = 400}, .lattice = 10};
  AnalyticField field(demo.source, fc);
  InteractionTemplate t = build_template(demo, field, kTemplate);
  const OptimizeConfig cfg{.restarts = 3, .max_iters = 60, .seed = 9};
  PoseResult a = optimize_pose(t, field, demo.source, cfg), b = optimize_pose(t, field, demo.source, cfg);
  EXPECT_EQ(a.best_transform.matrix(), b.best_transform.matrix());
  ASSERT_EQ(a.restarts.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a.restarts[i].trace, b.restarts[i].trace);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& r : a.restarts) best = std::min(best, r.best_residual);
  EXPECT_EQ(a.best_residual, best);
  EXPECT_LT((a.anchor_transform.matrix() - (a.best_transform * t.anchor_pose_ref).matrix()).cwiseAbs().maxCoeff(), 1e-12);

  // Shifting the target shifts every restart's trajectory.
  const Vec3 v(0.25, -0.5, 0.125);
  Geometry moved = apply_transform(demo.source, translation(v));
  AnalyticField moved_field(moved, fc);
  PoseResult c = optimize_pose(t, moved_field, moved, cfg);
  EXPECT_EQ(c.best_restart, a.best_restart);
  const RigidTransform expect = translation(v) * a.best_transform;
  EXPECT_LT((c.best_transform.matrix() - expect.matrix()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(OptimizePose, RejectsFingerprintMismatchAndBadConfig) {
  DemoInteraction demo = sphere_demo();
  AnalyticField field(demo.source, kSphereField);
  InteractionTemplate t = build_template(demo, field, kTemplate);
  AnalyticField other(demo.source, {.scf = {.order = 5, .dir_count = 500}, .lattice = 12});
  try {
    optimize_pose(t, other, demo.source);
    FAIL() << "expected fingerprint mismatch";
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(field.fingerprint()), std::string::npos);
    EXPECT_NE(msg.find(other.fingerprint()), std::string::npos);
  }
  EXPECT_THROW(optimize_pose(t, field, demo.source, {.restarts = 0}), Error);
  EXPECT_THROW(optimize_pose(t, field, demo.source, {.max_iters = 0}), Error);
  EXPECT_THROW(optimize_pose(t, field, demo.source, {.learning_rate = 0.0}), Error);
}

TEST(OptimizePose, SingleRestartCanStallInLocalMinimum) {
  // Recorded fixture: on the rim grasp, restart 0 of seed 0 settles in a
  // far worse basin than the best of ten.
  DemoInteraction demo = mug_demo();
  AnalyticField field(demo.source, {.scf = {.order = 5, .dir_count = 1000}, .lattice = 16});
  InteractionTemplate t = build_template(demo, field, {.ibs = {.grid_res = 32}, .samples = 64, .seed = 1});
  PoseResult ten = optimize_pose(t, field, demo.source, {.seed = 0});
  PoseResult one = optimize_pose(t, field, demo.source, {.restarts = 1, .seed = 0});
  EXPECT_GT(one.best_residual, 10.0 * ten.best_residual);
}

TEST(PoseJson, CarriesMatrixAndTraces) {
  DemoInteraction demo = sphere_demo();
  AnalyticField field(demo.source, kSphereField);
  InteractionTemplate t = build_template(demo, field, kTemplate);
  PoseResult r = optimize_pose(t, field, demo.source, {.restarts = 2, .max_iters = 20, .seed = 1});
  nlohmann::json j = to_json(r);
  EXPECT_EQ(j["matrix"].size(), 16u);
  EXPECT_EQ(j["restarts"].size(), 2u);
  EXPECT_EQ(j["restarts"][0]["trace"].size(), static_cast<std::size_t>(r.restarts[0].iterations));
  EXPECT_DOUBLE_EQ(j["residual"].get<double>(), r.best_residual);
}
