#include "nift/bvh.hpp"
#include "nift/harness/shapes.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace nift;

TEST(GenShape, DefaultMugIsGenusOneManifold) {
  Geometry mug = gen_shape({.kind = ShapeKind::mug});
  EdgeStats e = edge_stats(mug);
  EXPECT_EQ(e.boundary, 0u);
  EXPECT_EQ(e.non_manifold, 0u);
  EXPECT_EQ(euler_characteristic(mug), 0);
  EXPECT_GT(signed_volume(mug), 0.0);
}

TEST(GenShape, RandomMugsStayManifold) {
  std::mt19937_64 rng(77);
  for (int i = 0; i < 20; ++i) {
    ShapeSpec s = random_shape_spec(ShapeKind::mug, rng);
    Geometry mug = gen_shape(s);
    EdgeStats e = edge_stats(mug);
    EXPECT_EQ(e.boundary, 0u);
    EXPECT_EQ(e.non_manifold, 0u);
    EXPECT_EQ(euler_characteristic(mug), 0);
  }
}

TEST(GenShape, GenusZeroKinds) {
  for (ShapeKind k : {ShapeKind::bowl, ShapeKind::bottle}) {
    Geometry g = gen_shape({.kind = k});
    EdgeStats e = edge_stats(g);
    EXPECT_EQ(e.boundary, 0u) << to_string(k);
    EXPECT_EQ(e.non_manifold, 0u) << to_string(k);
    EXPECT_EQ(euler_characteristic(g), 2) << to_string(k);
    EXPECT_GT(signed_volume(g), 0.0) << to_string(k);
  }
  // Rack and gripper are unions of closed boxes.
  EXPECT_EQ(euler_characteristic(gen_shape({.kind = ShapeKind::rack})), 6);
  EXPECT_EQ(euler_characteristic(gen_shape({.kind = ShapeKind::gripper})), 6);
}

TEST(GenShape, ScaleDoublesPairwiseDistances) {
  Geometry a = gen_shape({.kind = ShapeKind::mug});
  Geometry b = gen_shape({.kind = ShapeKind::mug, .scale = 2.0});
  ASSERT_EQ(a.vertices.size(), b.vertices.size());
  for (std::size_t i = 0; i < a.vertices.size(); i += 37)
    for (std::size_t j = i + 1; j < a.vertices.size(); j += 53)
      EXPECT_NEAR((b.vertices[i] - b.vertices[j]).norm(), 2.0 * (a.vertices[i] - a.vertices[j]).norm(), 1e-12);
}

TEST(GenShape, DeterministicAndValidated) {
  std::mt19937_64 rng(5);
  ShapeSpec s = random_shape_spec(ShapeKind::bottle, rng);
  Geometry a = gen_shape(s), b = gen_shape(s);
  EXPECT_EQ(a.vertices, b.vertices);
  EXPECT_EQ(a.triangles, b.triangles);
  ShapeSpec bad{.kind = ShapeKind::mug, .params = {{"radius", 5.0}}};
  EXPECT_THROW(gen_shape(bad), Error);
  ShapeSpec unknown{.kind = ShapeKind::mug, .params = {{"spout", 1.0}}};
  EXPECT_THROW(gen_shape(unknown), Error);
}

TEST(GenShape, MugInteriorIsHollowAndWallIsSolid) {
  ShapeSpec s{.kind = ShapeKind::mug};
  RayAccelerator accel(gen_shape(s));
  const double r = s.param("radius"), w = s.param("wall"), h = s.param("height");
  EXPECT_FALSE(accel.inside(Vec3(0, 0, 0.5 * h)));
  EXPECT_TRUE(accel.inside(Vec3(-(r - 0.5 * w), 0, 0.5 * h)));
  EXPECT_TRUE(accel.inside(Vec3(0, 0, 0.5 * s.param("bottom"))));
  // Handle tube at its outermost point.
  const double zc = 0.5 * (s.param("handle_low") + s.param("handle_high")) * h;
  EXPECT_TRUE(accel.inside(Vec3(r + s.param("handle_reach"), 0, zc)));
}
