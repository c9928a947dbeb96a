#include <gtest/gtest.h>

#include <random>

#include "bimanual/errors.hpp"
#include "bimanual/geometry.hpp"
#include "oracles.hpp"

using namespace bimanual;

namespace {

AABB3 box(Vec3 lo, Vec3 hi) { return {lo, hi}; }

RelationConfig cfg_with(double tol, double gap) {
  RelationConfig c;
  c.contact_tolerance = tol;
  c.dir_gap = gap;
  return c;
}

}  // namespace

TEST(Centroid, Midpoints) {
  EXPECT_EQ(centroid(box({0, 0, 0}, {2, 4, 6})), (Vec3{1, 2, 3}));
  EXPECT_EQ(centroid(box({-10, -10, -10}, {10, 10, 10})), (Vec3{0, 0, 0}));
  EXPECT_EQ(centroid(box({5, 5, 5}, {5, 5, 5})), (Vec3{5, 5, 5}));
}

TEST(AABB, Validity) {
  EXPECT_TRUE(box({0, 0, 0}, {0, 0, 0}).valid());
  EXPECT_FALSE(box({1, 0, 0}, {0, 0, 0}).valid());
  EXPECT_FALSE(box({0, 0, 0}, {NAN, 1, 1}).valid());
}

TEST(StaticRelations, IdenticalBoxes) {
  const AABB3 a = box({0, 0, 0}, {50, 50, 50});
  EXPECT_EQ(evaluate_static_relations(a, a, RelationConfig{}),
            (RelationSet{Relation::contact, Relation::inside, Relation::surround}));
}

TEST(StaticRelations, StackedAlongDepthTouching) {
  // Shared z-face: contact only, since the boxes are not separated by more
  // than dir_gap on any axis.
  const AABB3 a = box({0, 0, 100}, {50, 50, 150});
  const AABB3 b = box({0, 0, 0}, {50, 50, 100});
  const RelationSet rs = evaluate_static_relations(a, b, cfg_with(2, 10));
  EXPECT_EQ(rs, oracle::static_relations(a, b, 2, 10));
  EXPECT_EQ(rs, RelationSet{Relation::contact});
}

TEST(StaticRelations, StackedVerticallyWithGap) {
  const AABB3 a = box({0, 120, 0}, {50, 170, 50});
  const AABB3 b = box({0, 0, 0}, {50, 100, 50});
  EXPECT_EQ(evaluate_static_relations(a, b, cfg_with(2, 10)), RelationSet{Relation::above});
  EXPECT_EQ(evaluate_static_relations(b, a, cfg_with(2, 10)), RelationSet{Relation::below});
}

TEST(StaticRelations, RightOf) {
  const AABB3 a = box({200, 0, 0}, {250, 50, 50});
  const AABB3 b = box({0, 0, 0}, {50, 50, 50});
  EXPECT_EQ(evaluate_static_relations(a, b, cfg_with(10, 10)), RelationSet{Relation::right});
  EXPECT_EQ(evaluate_static_relations(b, a, cfg_with(10, 10)), RelationSet{Relation::left});
}

TEST(StaticRelations, FrontIsSmallerDepth) {
  const AABB3 near = box({0, 0, 0}, {50, 50, 50});
  const AABB3 far = box({0, 0, 100}, {50, 50, 150});
  EXPECT_TRUE(evaluate_static_relations(near, far, RelationConfig{}).contains(Relation::front));
  EXPECT_TRUE(evaluate_static_relations(far, near, RelationConfig{}).contains(Relation::behind));
}

TEST(StaticRelations, DiagonalOffsetHasNoDirection) {
  const AABB3 a = box({0, 0, 0}, {10, 10, 10});
  const AABB3 b = box({100, 100, 100}, {110, 110, 110});
  EXPECT_TRUE(evaluate_static_relations(a, b, RelationConfig{}).empty());
}

TEST(StaticRelations, ContactToleranceBoundary) {
  const AABB3 a = box({0, 0, 0}, {10, 10, 10});
  EXPECT_TRUE(in_contact(a, box({20, 0, 0}, {30, 10, 10}), 10.0));
  EXPECT_FALSE(in_contact(a, box({20.5, 0, 0}, {30, 10, 10}), 10.0));
}

TEST(StaticRelations, AgreesWithIntervalOracle) {
  std::mt19937_64 rng(11);
  const double tols[] = {0.0, 2.0, 10.0};
  const double gaps[] = {0.0, 10.0};
  for (int i = 0; i < 5000; ++i) {
    const AABB3 a = oracle::grid_box(rng), b = oracle::grid_box(rng);
    for (double tol : tols)
      for (double gap : gaps)
        ASSERT_EQ(evaluate_static_relations(a, b, cfg_with(tol, gap)), oracle::static_relations(a, b, tol, gap))
            << "pair " << i << " tol " << tol << " gap " << gap;
  }
}

TEST(StaticRelations, SymmetryDualities) {
  std::mt19937_64 rng(3);
  const std::pair<Relation, Relation> duals[] = {{Relation::above, Relation::below},
                                                 {Relation::left, Relation::right},
                                                 {Relation::front, Relation::behind},
                                                 {Relation::inside, Relation::surround},
                                                 {Relation::contact, Relation::contact}};
  for (int i = 0; i < 20000; ++i) {
    const AABB3 a = oracle::grid_box(rng), b = oracle::grid_box(rng);
    const RelationSet ab = evaluate_static_relations(a, b, RelationConfig{});
    const RelationSet ba = evaluate_static_relations(b, a, RelationConfig{});
    for (auto [x, y] : duals) ASSERT_EQ(ab.contains(x), ba.contains(y));
  }
}

TEST(StaticRelations, MutualExclusionFuzz) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-500, 500), len(0, 300);
  for (int i = 0; i < 100000; ++i) {
    AABB3 a, b;
    for (int k = 0; k < 3; ++k) {
      a.min[k] = u(rng);
      a.max[k] = a.min[k] + len(rng);
      b.min[k] = u(rng);
      b.max[k] = b.min[k] + len(rng);
    }
    const RelationSet rs = evaluate_static_relations(a, b, RelationConfig{});
    ASSERT_TRUE(rs.mutually_consistent()) << rs.to_string();
    if (!(a == b)) ASSERT_FALSE(rs.contains(Relation::inside) && rs.contains(Relation::surround));
  }
}

TEST(StaticRelations, TranslationInvariance) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> shift(-1000, 1000);
  for (int i = 0; i < 5000; ++i) {
    const AABB3 a = oracle::grid_box(rng), b = oracle::grid_box(rng);
    const Vec3 t{5.0 * shift(rng), 5.0 * shift(rng), 5.0 * shift(rng)};
    ASSERT_EQ(evaluate_static_relations(a, b, RelationConfig{}),
              evaluate_static_relations(translated(a, t), translated(b, t), RelationConfig{}));
  }
}

TEST(DynamicRelations, CanonicalMotions) {
  for (const auto& m : oracle::canonical_motions()) {
    EXPECT_EQ(evaluate_dynamic_relations(m.a, m.b, 1.0 / 30, RelationConfig{}), m.expected) << m.name;
  }
}

TEST(DynamicRelations, TranslationInvariance) {
  const Vec3 t{123, -45, 678};
  for (const auto& m : oracle::canonical_motions()) {
    std::vector<AABB3> a, b;
    for (const AABB3& x : m.a) a.push_back(translated(x, t));
    for (const AABB3& x : m.b) b.push_back(translated(x, t));
    EXPECT_EQ(evaluate_dynamic_relations(a, b, 1.0 / 30, RelationConfig{}), m.expected) << m.name;
  }
}

TEST(DynamicRelations, ApproachWorkedExample) {
  // b approaching at 200 mm/s over 10 frames: distance falls by 60 mm.
  std::vector<AABB3> a, b;
  for (int t = 0; t < 11; ++t) {
    a.push_back(oracle::cube_at(0, 0, 0, 50));
    b.push_back(oracle::cube_at(500 - 200.0 * t / 30, 0, 0, 50));
  }
  RelationConfig c;
  c.dyn_window = 11;
  EXPECT_EQ(evaluate_dynamic_relations(a, b, 1.0 / 30, c), RelationSet{Relation::getting_close});
}

TEST(DynamicRelations, ShortHistoryUsesPrefix) {
  const auto motions = oracle::canonical_motions();
  const auto& approach = motions[2];
  std::vector<AABB3> a(approach.a.begin(), approach.a.begin() + 4);
  std::vector<AABB3> b(approach.b.begin(), approach.b.begin() + 4);
  EXPECT_EQ(evaluate_dynamic_relations(a, b, 1.0 / 30, RelationConfig{}),
            RelationSet{Relation::getting_close});
}

TEST(DynamicRelations, Errors) {
  std::vector<AABB3> one{oracle::cube_at(0, 0, 0, 1)};
  std::vector<AABB3> two{oracle::cube_at(0, 0, 0, 1), oracle::cube_at(0, 0, 0, 1)};
  EXPECT_THROW(evaluate_dynamic_relations(one, one, 0.1, RelationConfig{}), InvalidArgument);
  EXPECT_THROW(evaluate_dynamic_relations(one, two, 0.1, RelationConfig{}), InvalidArgument);
}

TEST(DynamicRelations, DistanceClassesExclusiveAndExhaustive) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-400, 400), v(-300, 300);
  const RelationSet distance{Relation::getting_close, Relation::moving_apart, Relation::stable};
  for (int i = 0; i < 2000; ++i) {
    std::vector<AABB3> a, b;
    const Vec3 pa{u(rng), u(rng), u(rng)}, pb{u(rng) + 1000, u(rng), u(rng)};
    const Vec3 va{v(rng), v(rng), v(rng)}, vb{v(rng), v(rng), v(rng)};
    for (int t = 0; t < 8; ++t) {
      const double s = t / 30.0;
      a.push_back(oracle::cube_at(pa[0] + va[0] * s, pa[1] + va[1] * s, pa[2] + va[2] * s, 40));
      b.push_back(oracle::cube_at(pb[0] + vb[0] * s, pb[1] + vb[1] * s, pb[2] + vb[2] * s, 40));
    }
    const RelationSet rs = evaluate_dynamic_relations(a, b, 1.0 / 30, RelationConfig{});
    ASSERT_EQ((rs & distance).size(), 1) << rs.to_string();
    ASSERT_TRUE(rs.mutually_consistent());
  }
}

TEST(RelationConfig, Validation) {
  RelationConfig c;
  c.dyn_window = 1;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = RelationConfig{};
  c.eps_dist = -1;
  EXPECT_THROW(c.validate(), InvalidArgument);
}
