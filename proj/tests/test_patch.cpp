#include <gtest/gtest.h>

#include <algorithm>

#include "dglr/dglr.hpp"

using namespace dglr;
using namespace dglr::patch;

namespace {

std::vector<double> random_plane(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1, 1);
  return v;
}

}  // namespace

TEST(PlanPatches, OneEightyByOneEighty) {
  const auto plan = plan_patches(180, 180);
  EXPECT_EQ(plan.row_anchors, (std::vector<std::size_t>{0, 22, 44, 66, 88, 110, 132, 154}));
  EXPECT_EQ(plan.col_anchors, plan.row_anchors);
  EXPECT_EQ(plan.count(), 64u);
  EXPECT_EQ(plan.anchors.back().row + plan.side, 180u);
  EXPECT_EQ(plan.pixels_per_patch(), 676u);
  EXPECT_GE(*std::min_element(plan.coverage.begin(), plan.coverage.end()), 1u);
  EXPECT_EQ(*std::max_element(plan.coverage.begin(), plan.coverage.end()), 4u);
}

TEST(PlanPatches, ClampedFinalAnchor) {
  EXPECT_EQ(plan_patches(100, 100).row_anchors,
            (std::vector<std::size_t>{0, 22, 44, 66, 74}));
  const auto one = plan_patches(26, 26);
  EXPECT_EQ(one.count(), 1u);
  for (auto c : one.coverage) EXPECT_EQ(c, 1u);
}

TEST(PlanPatches, AnchorsUniqueAndSorted) {
  const auto plan = plan_patches(64, 90, 8, 6);
  for (std::size_t k = 1; k < plan.count(); ++k) {
    const auto& a = plan.anchors[k - 1];
    const auto& b = plan.anchors[k];
    EXPECT_TRUE(a.row < b.row || (a.row == b.row && a.col < b.col));
  }
}

TEST(PlanPatches, Errors) {
  EXPECT_THROW(plan_patches(20, 40), SizingError);
  EXPECT_THROW(plan_patches(40, 25), SizingError);
  EXPECT_THROW(plan_patches(40, 40, 8, 9), ConfigError);
  EXPECT_THROW(plan_patches(40, 40, 0, 1), ConfigError);
}

TEST(Patches, ExtractShapesAndConstant) {
  const auto plan = plan_patches(100, 60);
  const std::vector<double> plane(6000, 0.3);
  const auto ps = extract_patches(plane, plan);
  EXPECT_EQ(ps.count, plan.count());
  EXPECT_EQ(ps.pixels, 676u);
  for (double v : ps.values) EXPECT_EQ(v, 0.3);
  EXPECT_THROW(extract_patches(std::vector<double>(10), plan), ConfigError);
}

TEST(Patches, RoundTripExact) {
  Rng rng(41);
  for (auto [h, w] : {std::pair{180, 180}, {100, 100}, {64, 72}, {26, 26}}) {
    const auto plan = plan_patches(h, w);
    const auto plane = random_plane(rng, h * w);
    EXPECT_EQ(aggregate_patches(extract_patches(plane, plan), plan), plane);
  }
}

TEST(Patches, MeanOfOverlaps) {
  // Two patches over a 26x27 image overlap everywhere except the edge columns.
  const auto plan = plan_patches(26, 27);
  ASSERT_EQ(plan.count(), 2u);
  PatchSet ps{2, 676, std::vector<double>(2 * 676)};
  std::fill(ps.values.begin(), ps.values.begin() + 676, 1.0);
  std::fill(ps.values.begin() + 676, ps.values.end(), 4.0);
  const auto plane = aggregate_patches(ps, plan);
  EXPECT_EQ(plane[0], 1.0);
  EXPECT_EQ(plane[1], 2.5);
  EXPECT_EQ(plane[26], 4.0);
}

TEST(Patches, AggregateAdjoint) {
  Rng rng(42);
  const auto plan = plan_patches(64, 50, 26, 22);
  PatchSet p{plan.count(), plan.pixels_per_patch(), {}};
  p.values = random_plane(rng, p.count * p.pixels);
  const auto g = random_plane(rng, 64 * 50);
  const auto ap = aggregate_patches(p, plan);
  const auto atg = aggregate_backward(g, plan);
  EXPECT_NEAR(dot(ap, g), dot(p.values, atg.values), 1e-10);

  const auto x = random_plane(rng, 64 * 50);
  const auto ex = extract_patches(x, plan);
  EXPECT_NEAR(dot(ex.values, p.values), dot(x, scatter_add_patches(p, plan)), 1e-10);
}

TEST(Patches, Linearity) {
  Rng rng(43);
  const auto plan = plan_patches(60, 60, 8, 6);
  PatchSet p{plan.count(), plan.pixels_per_patch(), {}}, q = p, r = p;
  p.values = random_plane(rng, p.count * p.pixels);
  q.values = random_plane(rng, p.count * p.pixels);
  r.values.resize(p.values.size());
  for (std::size_t i = 0; i < r.values.size(); ++i) r.values[i] = 0.3 * p.values[i] - 2 * q.values[i];
  const auto ap = aggregate_patches(p, plan), aq = aggregate_patches(q, plan),
             ar = aggregate_patches(r, plan);
  for (std::size_t i = 0; i < ar.size(); ++i) EXPECT_NEAR(ar[i], 0.3 * ap[i] - 2 * aq[i], 1e-12);
}

TEST(Patches, CountMismatch) {
  const auto plan = plan_patches(40, 40);
  PatchSet p{1, 676, std::vector<double>(676)};
  EXPECT_THROW(aggregate_patches(p, plan), ConfigError);
}
