#include "nift/field.hpp"
#include "nift/harness/shapes.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace nift;

namespace {

std::shared_ptr<RegressorWeights> random_weights(std::uint64_t seed, Activation act = Activation::tanh) {
  auto w = std::make_shared<RegressorWeights>();
  const int d = w->encoder.input_dim();
  w->decoder = Mlp(d, {64, 64, 32, 6}, act, seed);
  std::mt19937_64 rng(seed + 1);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  w->input_mean = Eigen::VectorXd::NullaryExpr(d, [&] { return u(rng); });
  w->input_std = Eigen::VectorXd::NullaryExpr(d, [&] { return 1.0 + u(rng); });
  for (auto& l : w->decoder.layers()) l.b = Eigen::VectorXd::NullaryExpr(l.b.size(), [&] { return 0.2 * u(rng); });
  return w;
}

Points mug_cloud(std::uint64_t seed = 0) {
  return object_cloud(gen_shape({.kind = ShapeKind::mug}), EncoderConfig{}, seed);
}

Points random_queries(const Aabb& box, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  Points out;
  for (int i = 0; i < n; ++i) out.push_back(box.lo + Vec3(u(rng), u(rng), u(rng)).cwiseProduct(box.extent()));
  return out;
}

Eigen::MatrixXd central_difference(const DescriptorField& f, const Vec3& x, double h) {
  Eigen::MatrixXd j(3, f.dim());
  for (int a = 0; a < 3; ++a) {
    Vec3 e = Vec3::Zero();
    e[a] = h;
    j.row(a) = ((f.descriptor_at(x + e) - f.descriptor_at(x - e)) / (2 * h)).transpose();
  }
  return j;
}

}  // namespace

TEST(AnalyticField, SphereCentreIsConstantSignal) {
  AnalyticField f(icosphere(4, 1.0), {.scf = {.order = 5, .dir_count = 2000}});
  EXPECT_EQ(f.dim(), 6u);
  EXPECT_EQ(f.backend(), "analytic");
  Eigen::VectorXd d = f.descriptor_at(Vec3::Zero());
  EXPECT_NEAR(d[0], std::sqrt(4 * M_PI), 1e-2);
  for (int l = 1; l <= 5; ++l) EXPECT_LT(d[l], 2e-2);
  EXPECT_EQ(d, f.descriptor_at(Vec3::Zero()));
}

TEST(AnalyticField, FingerprintNamesConfiguration) {
  AnalyticFieldConfig a{.scf = {.order = 5, .dir_count = 1000}}, b = a;
  b.scf.order = 4;
  EXPECT_NE(a.fingerprint(), b.fingerprint());
  b = a;
  b.lattice = 8;
  EXPECT_NE(a.fingerprint(), b.fingerprint());
}

TEST(AnalyticField, LatticeMatchesNodesAndHasExactGradient) {
  Geometry mug = gen_shape({.kind = ShapeKind::mug});
  AnalyticFieldConfig cfg{.scf = {.order = 4, .dir_count = 800}, .lattice = 6};
  AnalyticField cached(mug, cfg), direct(mug, {.scf = cfg.scf});
  const Aabb& box = cached.domain();
  const Vec3 node = box.lo + box.extent().cwiseProduct(Vec3(1, 2, 3) / 5.0);
  EXPECT_LT((cached.descriptor_at(node) - direct.descriptor_at(node)).cwiseAbs().maxCoeff(), 1e-10);
  for (const auto& x : random_queries(box, 10, 4)) {
    Eigen::MatrixXd g = cached.gradient_at(x), fd = central_difference(cached, x, 1e-6);
    EXPECT_LT((g - fd).cwiseAbs().maxCoeff(), 1e-5 * std::max(1.0, g.cwiseAbs().maxCoeff()));
  }
  EXPECT_THROW(cached.gradient_at(box.hi + Vec3::Ones()), Error);
  EXPECT_THROW(AnalyticField(mug, {.lattice = 1}), Error);
}

TEST(AnalyticField, DirectGradientFollowsDistance) {
  // Near a sphere, moving away lowers the low-order power of F.
  AnalyticField f(icosphere(4, 1.0), {.scf = {.order = 3, .dir_count = 1000}});
  Eigen::MatrixXd g = f.gradient_at(Vec3(1.2, 0, 0));
  EXPECT_EQ(g.rows(), 3);
  EXPECT_EQ(g.cols(), 4);
  EXPECT_TRUE(g.allFinite());
}

TEST(Encoder, DimensionsAndRotationEquivariance) {
  EncoderConfig cfg;
  EXPECT_EQ(cfg.query_dim(), 25);
  EXPECT_EQ(cfg.object_dim(), 32);
  Points cloud = mug_cloud();
  std::mt19937_64 rng(2);
  RigidTransform t{haar_random_rotation(rng), Vec3(0.4, -1.0, 0.3)};
  ShapeEmbedding a = encode_shape(cloud, cfg), b = encode_shape(apply_transform(cloud, t), cfg);
  EXPECT_LT((a.object_features - b.object_features).cwiseAbs().maxCoeff(), 1e-10);
  Eigen::VectorXd qa(25), qb(25);
  const Vec3 x(0.2, 0.1, 0.9);
  query_features(a, x, qa);
  query_features(b, t(x), qb);
  EXPECT_LT((qa - qb).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_THROW(encode_shape(Points(3, Vec3::Zero()), cfg), Error);
}

TEST(LearnedField, DimensionsFollowFlags) {
  auto w = random_weights(1);
  Points cloud = mug_cloud();
  EXPECT_EQ(LearnedField(w, cloud).dim(), 166u);
  EXPECT_EQ(LearnedField(w, cloud, {.include_output = false}).dim(), 160u);
  LearnedField pre(w, cloud, {.pre_activation = true});
  EXPECT_EQ(pre.dim(), 166u);
  EXPECT_NE(pre.fingerprint(), LearnedField(w, cloud).fingerprint());
}

TEST(LearnedField, ReverseGradientMatchesCentralDifference) {
  auto w = random_weights(3);
  LearnedField f(w, mug_cloud());
  const double h = 1e-5 * f.scene_diameter();
  int worst_ok = 0;
  for (const auto& x : random_queries(f.domain(), 100, 5)) {
    Eigen::MatrixXd g = f.gradient_at(x), fd = central_difference(f, x, h);
    const double rel = (g - fd).norm() / std::max(1e-12, fd.norm());
    worst_ok += rel < 1e-4;
  }
  EXPECT_EQ(worst_ok, 100);
}

TEST(LearnedField, ReverseAndForwardJacobiansAgree) {
  auto w = random_weights(4, Activation::softplus);
  Points cloud = mug_cloud();
  for (LearnedFieldOptions opt : {LearnedFieldOptions{}, LearnedFieldOptions{.include_output = false},
                                  LearnedFieldOptions{.pre_activation = true}}) {
    LearnedField f(w, cloud, opt);
    for (const auto& x : random_queries(f.domain(), 10, 6)) {
      Eigen::MatrixXd r = f.gradient_at(x), fw = f.gradient_forward_at(x);
      EXPECT_LT((r - fw).cwiseAbs().maxCoeff(), 1e-10 * std::max(1.0, r.cwiseAbs().maxCoeff()));
    }
  }
}

TEST(LearnedField, L1GradientIsVectorJacobianProduct) {
  auto w = random_weights(5);
  LearnedField f(w, mug_cloud(), {.pre_activation = true});
  const auto xs = random_queries(f.domain(), 2, 7);
  Eigen::VectorXd target = f.descriptor_at(xs[1]);
  Vec3 g;
  double v = f.l1_to(xs[0], target, &g);
  Eigen::VectorXd diff = f.descriptor_at(xs[0]) - target;
  EXPECT_NEAR(v, diff.cwiseAbs().sum(), 1e-12);
  Vec3 expect = f.gradient_at(xs[0]) * diff.unaryExpr([](double d) { return double((d > 0) - (d < 0)); });
  EXPECT_LT((g - expect).norm(), 1e-10 * std::max(1.0, expect.norm()));
  // sign(0) = 0: zero residual gives zero gradient.
  EXPECT_DOUBLE_EQ(f.l1_to(xs[1], target, &g), 0.0);
  EXPECT_EQ(g, Vec3::Zero());
}

TEST(LearnedField, ToyDecoderByHand) {
  // One hidden tanh unit reading |q|^2, one linear output.
  auto w = std::make_shared<RegressorWeights>();
  const int d = w->encoder.input_dim();
  w->input_mean = Eigen::VectorXd::Zero(d);
  w->input_std = Eigen::VectorXd::Ones(d);
  w->scf.order = 0;
  DenseLayer l1{Eigen::MatrixXd::Zero(1, d), Eigen::VectorXd::Constant(1, 0.1)};
  l1.w(0, 0) = 0.5;
  DenseLayer l2{Eigen::MatrixXd::Constant(1, 1, 2.0), Eigen::VectorXd::Constant(1, -1.0)};
  w->decoder = Mlp({l1, l2}, Activation::tanh);
  Points cloud = mug_cloud();
  LearnedField f(w, cloud);
  const Vec3 x(0.1, 0.2, 0.3);
  const double q2 = ((x - f.embedding().center) / f.embedding().scale).squaredNorm();
  const double a = std::tanh(0.5 * q2 + 0.1);
  Eigen::VectorXd desc = f.descriptor_at(x);
  ASSERT_EQ(desc.size(), 2);
  EXPECT_NEAR(desc[0], a, 1e-14);
  EXPECT_NEAR(desc[1], 2 * a - 1, 1e-14);
  // d desc0/dx = (1 - a^2) * 0.5 * 2 q / s.
  const Vec3 grad = (1 - a * a) * (x - f.embedding().center) / (f.embedding().scale * f.embedding().scale);
  EXPECT_LT((f.gradient_at(x).col(0) - grad).norm(), 1e-12);
}

TEST(Weights, SaveLoadRoundTrip) {
  auto w = random_weights(6);
  w->meta.epochs = 3;
  w->meta.loss_curve = {0.3, 0.2, 0.1};
  w->meta.holdout_r2 = {0.9, 0.8, 0.7, 0.6, 0.5, 0.4};
  auto path = std::filesystem::path(NIFT_TEST_TMP) / "w.nift";
  save_weights(path, *w);
  auto back = std::make_shared<RegressorWeights>(load_weights(path));
  EXPECT_EQ(back->hash(), w->hash());
  EXPECT_EQ(back->meta.loss_curve, w->meta.loss_curve);
  EXPECT_EQ(back->scf.dir_count, w->scf.dir_count);
  Points cloud = mug_cloud();
  LearnedField a(w, cloud), b(back, cloud);
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  EXPECT_EQ(a.descriptor_at(Vec3(0.1, 0, 0.5)), b.descriptor_at(Vec3(0.1, 0, 0.5)));

  auto bad = std::filesystem::path(NIFT_TEST_TMP) / "bad.nift";
  std::ofstream(bad) << "not weights";
  EXPECT_THROW(load_weights(bad), Error);
  // Truncated payload.
  std::filesystem::copy_file(path, bad, std::filesystem::copy_options::overwrite_existing);
  std::filesystem::resize_file(bad, std::filesystem::file_size(path) - 8);
  EXPECT_THROW(load_weights(bad), Error);
}

TEST(LearnedField, DescriptorIsRotationInvariant) {
  auto w = random_weights(7);
  Points cloud = mug_cloud();
  std::mt19937_64 rng(8);
  RigidTransform t{haar_random_rotation(rng), Vec3(1, 2, -1)};
  LearnedField a(w, cloud), b(w, apply_transform(cloud, t));
  for (const auto& x : random_queries(a.domain(), 20, 9))
    EXPECT_LT((a.descriptor_at(x) - b.descriptor_at(t(x))).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Heatmap, SelfMatchIsMinimalAndZero) {
  Geometry mug = gen_shape({.kind = ShapeKind::mug});
  AnalyticField f(mug, {.scf = {.order = 4, .dir_count = 600}, .lattice = 8});
  GridSpec grid{f.domain(), 8};
  const Vec3 x = grid.box.lo + grid.box.extent().cwiseProduct(Vec3(2, 3, 5) / 7.0);
  auto path = std::filesystem::path(NIFT_TEST_TMP) / "heat.ply";
  Heatmap h = export_heatmap(f, x, f, grid, path);
  EXPECT_EQ(h.points.size(), 512u);
  EXPECT_LT((h.points[h.argmin()] - x).norm(), 1e-9);
  EXPECT_LT(h.values[h.argmin()], 1e-9);
  EXPECT_EQ(h.colors[h.argmin()].b, 255);
  RawGeometry raw = read_raw_geometry(path, MeshFormat::ply);
  EXPECT_EQ(raw.vertices.size(), 512u);
  EXPECT_EQ(raw.vertex_scalars.at("difference").size(), 512u);
}

TEST(Heatmap, ConstantFieldIsBlue) {
  std::vector<Rgb> c = blue_red_ramp({2.0, 2.0, 2.0});
  for (const auto& px : c) {
    EXPECT_EQ(px.r, 0);
    EXPECT_EQ(px.b, 255);
  }
  c = blue_red_ramp({0.0, 1.0});
  EXPECT_EQ(c[1].r, 255);
  EXPECT_EQ(c[1].b, 0);
}

TEST(Heatmap, RimQueryLocalizesOnAnotherMug) {
  ShapeSpec a{.kind = ShapeKind::mug}, b{.kind = ShapeKind::mug};
  b.params["radius"] = shape_param_ranges(ShapeKind::mug).at("radius").hi;
  const MugFrame fa = mug_frame(a), fb = mug_frame(b);
  const AnalyticFieldConfig cfg{.scf = {.order = 5, .dir_count = 1000}};
  AnalyticField field_a(gen_shape(a), cfg), field_b(gen_shape(b), cfg);
  const Vec3 x(0.5 * (fa.outer_radius + fa.inner_radius), 0, fa.height + 0.02);
  Heatmap h = export_heatmap(field_a, x, field_b, {field_b.domain(), 20});
  const Vec3 best = h.points[h.argmin()];
  // Distance to the rim circle of the target mug.
  const double rim_r = 0.5 * (fb.outer_radius + fb.inner_radius);
  const double radial = std::hypot(best.x(), best.y()) - rim_r;
  const double dist = std::hypot(radial, best.z() - fb.height);
  EXPECT_LT(dist, 0.05 * 2 * bounding_sphere(gen_shape(b)).radius);
}
