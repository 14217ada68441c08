#include <gtest/gtest.h>

#include <cmath>

#include "tspt/baselines.hpp"
#include "tspt/rng.hpp"
#include "tspt/tsp.hpp"

using tspt::Instance;
using tspt::Tour;

namespace {

Instance unit_square() {
  return Instance::of({{0, 0}, {0, 1}, {1, 1}, {1, 0}});
}

}  // namespace

TEST(BruteForce, UnitSquare) {
  auto report = tspt::brute_force(unit_square());
  EXPECT_NEAR(report.tour.length, 4.0, 1e-12);
  EXPECT_TRUE(report.optimal);
}

TEST(BruteForce, CollinearPoints) {
  Instance line = Instance::of({{0, 0}, {0.5, 0}, {1, 0}});
  auto report = tspt::brute_force(line);
  EXPECT_NEAR(report.tour.length, 2.0, 1e-12);
}

TEST(BruteForce, GuardsLargeInstances) {
  auto inst = tspt::generate(11, 1, 1)[0];
  EXPECT_THROW(tspt::brute_force(inst), std::invalid_argument);
}

TEST(HeldKarp, UnitSquare) {
  auto report = tspt::held_karp(unit_square());
  EXPECT_NEAR(report.tour.length, 4.0, 1e-12);
  EXPECT_TRUE(report.optimal);
}

TEST(HeldKarp, RegularHexagon) {
  std::vector<tspt::Vec2> pts;
  for (int k = 0; k < 6; ++k) {
    const double a = 2.0 * M_PI * k / 6.0;
    pts.push_back({std::cos(a), std::sin(a)});
  }
  auto report = tspt::held_karp(Instance::of(pts));
  EXPECT_NEAR(report.tour.length, 6.0, 1e-9);  // 6 unit sides
}

TEST(HeldKarp, MatchesBruteForce) {
  auto inst = tspt::generate(9, 1, 42)[0];
  auto hk = tspt::held_karp(inst);
  auto bf = tspt::brute_force(inst);
  EXPECT_NEAR(hk.tour.length, bf.tour.length, 1e-9);
}

TEST(HeldKarp, AgreesWithBruteForceOnSmallBatch) {
  for (int n = 4; n <= 8; ++n) {
    auto instances = tspt::generate(n, 40, 1000 + n);
    for (const auto& inst : instances) {
      EXPECT_NEAR(tspt::held_karp(inst).tour.length,
                  tspt::brute_force(inst).tour.length, 1e-9);
    }
  }
}

TEST(HeldKarp, RelabelInvariant) {
  tspt::Rng rng(55);
  auto inst = tspt::generate(10, 1, 55)[0];
  const double base = tspt::held_karp(inst).tour.length;
  // relabel cities with a fixed permutation
  std::vector<int> perm{7, 2, 9, 0, 4, 6, 1, 8, 5, 3};
  std::vector<tspt::Vec2> coords(10);
  for (int i = 0; i < 10; ++i) coords[perm[i]] = inst.coords[i];
  EXPECT_NEAR(tspt::held_karp(Instance::of(coords)).tour.length, base, 1e-9);
}

TEST(HeldKarp, GuardsLargeInstances) {
  auto inst = tspt::generate(19, 1, 2)[0];
  EXPECT_THROW(tspt::held_karp(inst), std::invalid_argument);
}

TEST(Insertion, TriangleIsPerimeter) {
  auto inst = tspt::generate(3, 1, 9)[0];
  const double perimeter = tspt::tour_length(inst, {0, 1, 2});
  EXPECT_NEAR(tspt::nearest_insertion(inst).tour.length, perimeter, 1e-12);
  EXPECT_NEAR(tspt::farthest_insertion(inst).tour.length, perimeter, 1e-12);
}

TEST(Insertion, FarthestOptimalOnConvexPosition) {
  // regular hexagon: hull order is the unique optimum
  std::vector<tspt::Vec2> pts;
  for (int k = 0; k < 6; ++k) {
    const double a = 2.0 * M_PI * k / 6.0;
    pts.push_back({0.5 + 0.4 * std::cos(a), 0.5 + 0.4 * std::sin(a)});
  }
  Instance inst = Instance::of(pts);
  auto fi = tspt::farthest_insertion(inst);
  auto hk = tspt::held_karp(inst);
  EXPECT_NEAR(fi.tour.length, hk.tour.length, 1e-9);
}

TEST(Insertion, ValidToursAboveOptimum) {
  auto instances = tspt::generate(12, 25, 77);
  for (const auto& inst : instances) {
    const double opt = tspt::held_karp(inst).tour.length;
    auto ni = tspt::nearest_insertion(inst);
    auto fi = tspt::farthest_insertion(inst);
    EXPECT_GE(ni.tour.length, opt - 1e-9);
    EXPECT_GE(fi.tour.length, opt - 1e-9);
  }
}

TEST(Insertion, FarthestBeatsNearestOnAverage) {
  auto instances = tspt::generate(12, 200, 4242);
  double near_gap = 0, far_gap = 0;
  for (const auto& inst : instances) {
    const double opt = tspt::held_karp(inst).tour.length;
    near_gap += tspt::gap(tspt::nearest_insertion(inst).tour.length, opt);
    far_gap += tspt::gap(tspt::farthest_insertion(inst).tour.length, opt);
  }
  EXPECT_LT(far_gap, near_gap);
}

TEST(TwoOpt, UncrossesSquare) {
  Instance sq = unit_square();
  Tour crossing = Tour::of(sq, {0, 2, 1, 3});
  EXPECT_NEAR(crossing.length, 2.0 + 2.0 * std::sqrt(2.0), 1e-12);
  auto report = tspt::two_opt(sq, crossing);
  EXPECT_NEAR(report.tour.length, 4.0, 1e-12);
}

TEST(TwoOpt, OptimalStartUnchanged) {
  auto instances = tspt::generate(9, 10, 31);
  for (const auto& inst : instances) {
    auto opt = tspt::held_karp(inst);
    auto refined = tspt::two_opt(inst, opt.tour);
    EXPECT_NEAR(refined.tour.length, opt.tour.length, 1e-12);
    EXPECT_EQ(refined.tour.order, opt.tour.order);
  }
}

TEST(TwoOpt, FixpointHasNoImprovingExchange) {
  tspt::Rng rng(62);
  auto instances = tspt::generate(12, 30, 62);
  for (const auto& inst : instances) {
    std::vector<int> order(12);
    for (int i = 0; i < 12; ++i) order[i] = i;
    for (int i = 11; i > 0; --i)
      std::swap(order[i], order[rng.below(i + 1)]);
    Tour start = Tour::of(inst, order);
    auto report = tspt::two_opt(inst, start);
    EXPECT_LE(report.tour.length, start.length + 1e-12);
    EXPECT_FALSE(tspt::has_improving_two_opt(inst, report.tour.order));
  }
}

TEST(TwoOpt, Idempotent) {
  auto instances = tspt::generate(10, 10, 63);
  for (const auto& inst : instances) {
    Tour start = Tour::of(inst, {3, 1, 4, 0, 9, 2, 8, 7, 5, 6});
    auto once = tspt::two_opt(inst, start);
    auto twice = tspt::two_opt(inst, once.tour);
    EXPECT_EQ(once.tour.order, twice.tour.order);
  }
}

TEST(TwoOpt, BestImprovementAlsoReachesFixpoint) {
  auto inst = tspt::generate(12, 1, 64)[0];
  Tour start = Tour::of(inst, {0, 11, 3, 7, 1, 9, 5, 2, 10, 4, 8, 6});
  auto report =
      tspt::two_opt(inst, start, tspt::TwoOptPolicy::BestImprovement);
  EXPECT_FALSE(tspt::has_improving_two_opt(inst, report.tour.order));
  EXPECT_LE(report.tour.length, start.length + 1e-12);
}

TEST(Gap, Examples) {
  EXPECT_DOUBLE_EQ(tspt::gap(5.689, 5.689), 0.0);
  EXPECT_NEAR(tspt::gap(7.00, 5.689), 23.04, 0.005);
  EXPECT_THROW(tspt::gap(1.0, 0.0), std::invalid_argument);
  EXPECT_THROW(tspt::gap(1.0, -2.0), std::invalid_argument);
}
