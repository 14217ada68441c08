#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "tspt/tsp.hpp"

using tspt::Instance;
using tspt::Tour;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

Instance unit_square() {
  return Instance::of({{0, 0}, {0, 1}, {1, 1}, {1, 0}});
}

}  // namespace

TEST(Generate, DeterministicGivenSeed) {
  auto a = tspt::generate(5, 2, 7);
  auto b = tspt::generate(5, 2, 7);
  ASSERT_EQ(a.size(), 2u);
  for (std::size_t k = 0; k < 2; ++k)
    for (int i = 0; i < 5; ++i) {
      EXPECT_EQ(a[k].coords[i][0], b[k].coords[i][0]);
      EXPECT_EQ(a[k].coords[i][1], b[k].coords[i][1]);
    }
}

TEST(Generate, UniformMean) {
  auto instances = tspt::generate(100, 100, 2024);  // 10^4 points
  double mx = 0, my = 0;
  for (const auto& inst : instances)
    for (const auto& c : inst.coords) {
      mx += c[0];
      my += c[1];
    }
  mx /= 10000;
  my /= 10000;
  EXPECT_NEAR(mx, 0.5, 0.02);
  EXPECT_NEAR(my, 0.5, 0.02);
}

TEST(Generate, RejectsTinyInstances) {
  EXPECT_THROW(tspt::generate(2, 1, 0), std::invalid_argument);
}

TEST(TourLength, UnitSquare) {
  Instance sq = unit_square();
  EXPECT_NEAR(tspt::tour_length(sq, {0, 1, 2, 3}), 4.0, 1e-12);
}

TEST(TourLength, CrossingSquare) {
  Instance sq = unit_square();
  EXPECT_NEAR(tspt::tour_length(sq, {0, 2, 1, 3}), 2.0 + 2.0 * std::sqrt(2.0),
              1e-12);
}

TEST(TourLength, RotationAndReversalInvariant) {
  auto inst = tspt::generate(7, 1, 5)[0];
  std::vector<int> order{3, 1, 6, 0, 2, 5, 4};
  const double base = tspt::tour_length(inst, order);
  std::vector<int> rotated(order.begin() + 2, order.end());
  rotated.insert(rotated.end(), order.begin(), order.begin() + 2);
  EXPECT_NEAR(tspt::tour_length(inst, rotated), base, 1e-9);
  std::vector<int> reversed(order.rbegin(), order.rend());
  EXPECT_NEAR(tspt::tour_length(inst, reversed), base, 1e-9);
}

TEST(TourLength, TrianglePerimeterForAnyPermutation) {
  auto inst = tspt::generate(3, 1, 8)[0];
  const double base = tspt::tour_length(inst, {0, 1, 2});
  EXPECT_NEAR(tspt::tour_length(inst, {1, 0, 2}), base, 1e-12);
  EXPECT_NEAR(tspt::tour_length(inst, {2, 1, 0}), base, 1e-12);
}

TEST(TourLength, RejectsNonPermutations) {
  Instance sq = unit_square();
  try {
    tspt::tour_length(sq, {0, 1, 1, 3});
    FAIL() << "expected error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("1"), std::string::npos);
  }
  EXPECT_THROW(tspt::tour_length(sq, {0, 1, 2, 7}), std::invalid_argument);
  EXPECT_THROW(tspt::tour_length(sq, {0, 1, 2}), std::invalid_argument);
}

TEST(InstanceIo, RoundTrip) {
  auto instances = tspt::generate(6, 100, 99);
  auto path = temp_file("tspt_roundtrip.txt");
  tspt::write_instances(instances, path.string());
  auto back = tspt::read_instances(path.string());
  ASSERT_EQ(back.size(), instances.size());
  for (std::size_t k = 0; k < instances.size(); ++k)
    for (int i = 0; i < 6; ++i) {
      EXPECT_EQ(back[k].coords[i][0], instances[k].coords[i][0]);
      EXPECT_EQ(back[k].coords[i][1], instances[k].coords[i][1]);
    }
  std::filesystem::remove(path);
}

TEST(InstanceIo, MissingCoordinateLineReportsLineNumber) {
  auto path = temp_file("tspt_truncated.txt");
  {
    std::ofstream out(path);
    out << "TSPSET v1 1 4\n0.1 0.2\n0.3 0.4\n0.5 0.6\n";
  }
  try {
    tspt::read_instances(path.string());
    FAIL() << "expected parse error";
  } catch (const tspt::ParseError& e) {
    EXPECT_EQ(e.line, 5);
  }
  std::filesystem::remove(path);
}

TEST(InstanceIo, EmptyFile) {
  auto path = temp_file("tspt_empty.txt");
  { std::ofstream out(path); }
  try {
    tspt::read_instances(path.string());
    FAIL() << "expected parse error";
  } catch (const tspt::ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("no instances"), std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST(InstanceIo, MalformedCoordinateLine) {
  auto path = temp_file("tspt_malformed.txt");
  {
    std::ofstream out(path);
    out << "TSPSET v1 1 3\n0.1 0.2\nnope nope\n0.5 0.6\n";
  }
  try {
    tspt::read_instances(path.string());
    FAIL() << "expected parse error";
  } catch (const tspt::ParseError& e) {
    EXPECT_EQ(e.line, 3);
  }
  std::filesystem::remove(path);
}

TEST(TourIo, RoundTrip) {
  auto inst = tspt::generate(5, 1, 3)[0];
  std::vector<Tour> tours{Tour::of(inst, {0, 1, 2, 3, 4}),
                          Tour::of(inst, {4, 2, 0, 1, 3})};
  auto path = temp_file("tspt_tours.txt");
  tspt::write_tours(tours, path.string());
  auto back = tspt::read_tours(path.string());
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_EQ(back[k].order, tours[k].order);
    EXPECT_EQ(back[k].length, tours[k].length);
  }
  std::filesystem::remove(path);
}
