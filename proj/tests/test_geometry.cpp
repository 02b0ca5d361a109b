#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lytnet/geometry.hpp"

using namespace lytnet;

namespace {

struct Correspondence {
  Point2 image;
  Point2 ground;
};

// Calibration points on the base image and their bird's-eye positions.
const Correspondence kCalibration[] = {
    {{1671, 1440}, {1671, 212}},
    {{2361, 1440}, {2361, 212}},
    {{4032, 2171}, {2361, 2812}},
    {{0, 2171}, {1671, 2812}},
};

}  // namespace

TEST(Homography, CalibrationPointsForward) {
  const auto h = Homography::birdseye_default();
  for (const auto& c : kCalibration) {
    const auto p = apply_homography(h, c.image);
    EXPECT_NEAR(p.x, c.ground.x, 0.5);
    EXPECT_NEAR(p.y, c.ground.y, 0.5);
  }
}

TEST(Homography, CalibrationPointsInverse) {
  const auto inv = Homography::birdseye_default().inverse();
  for (const auto& c : kCalibration) {
    const auto p = apply_homography(inv, c.ground);
    EXPECT_NEAR(p.x, c.image.x, 0.5);
    EXPECT_NEAR(p.y, c.image.y, 0.5);
  }
}

TEST(Homography, IdentityLeavesPointsUnchanged) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-5000, 5000);
  for (int i = 0; i < 100; ++i) {
    const Point2 p{u(rng), u(rng)};
    const auto q = apply_homography(Homography::identity(), p);
    EXPECT_EQ(q.x, p.x);
    EXPECT_EQ(q.y, p.y);
  }
}

TEST(Homography, SingularAndHorizonRejected) {
  EXPECT_THROW(Homography(Homography::Matrix{1, 2, 3, 2, 4, 6, 0, 0, 1}), GeometryError);
  // the default map sends y = 1/7.75749810e-4 to infinity
  const double horizon = 1.0 / 7.75749810e-4;
  EXPECT_THROW(apply_homography(Homography::birdseye_default(), {100, horizon}),
               GeometryError);
}

TEST(Angle, BaseMidlineIsStraightAhead) {
  const double a = birdseye_angle({2016, 2171}, {2016, 1440},
                                  Homography::birdseye_default());
  EXPECT_NEAR(a, 0.0, 0.5);
}

TEST(Angle, SignConventionAndSwap) {
  EXPECT_NEAR(birdseye_angle({0, 10}, {10, 0}, Homography::identity()), 45.0, 1e-12);
  EXPECT_NEAR(birdseye_angle({10, 10}, {0, 0}, Homography::identity()), -45.0, 1e-12);
  EXPECT_NEAR(direction_angle({0, 0}, {0, 10}), 180.0, 1e-12);
  // swapping start and end turns the direction by 180 degrees
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-100, 100);
  for (int i = 0; i < 50; ++i) {
    const Point2 a{u(rng), u(rng)}, b{u(rng), u(rng)};
    double diff = direction_angle(a, b) - direction_angle(b, a);
    diff = std::fmod(diff + 360.0, 360.0);
    EXPECT_NEAR(diff, 180.0, 1e-9);
  }
  EXPECT_THROW(birdseye_angle({5, 5}, {5, 5}, Homography::identity()), GeometryError);
}

TEST(Angle, InvariantToScalingAboutMidpoint) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-100, 100), s(0.1, 10);
  for (int i = 0; i < 50; ++i) {
    const Point2 a{u(rng), u(rng)}, b{u(rng), u(rng)};
    const double k = s(rng);
    const Point2 m{(a.x + b.x) / 2, (a.y + b.y) / 2};
    const Point2 a2{m.x + k * (a.x - m.x), m.y + k * (a.y - m.y)};
    const Point2 b2{m.x + k * (b.x - m.x), m.y + k * (b.y - m.y)};
    EXPECT_NEAR(direction_angle(a, b), direction_angle(a2, b2), 1e-9);
  }
}

TEST(XIntercept, Examples) {
  EXPECT_DOUBLE_EQ(x_intercept({5, 1}, {5, 3}), 5.0);
  EXPECT_DOUBLE_EQ(x_intercept({0, 2}, {2, 4}), -2.0);
  EXPECT_DOUBLE_EQ(x_intercept({1, 0}, {7, 3}), 1.0);
  EXPECT_THROW(x_intercept({1, 2}, {3, 2}), GeometryError);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-100, 100);
  for (int i = 0; i < 50; ++i) {
    const Point2 a{u(rng), u(rng)}, b{u(rng), u(rng)};
    EXPECT_NEAR(x_intercept(a, b), x_intercept(b, a),
                1e-9 * std::max(1.0, std::abs(x_intercept(a, b))));
  }
}

TEST(Homography, ParseText) {
  const auto h = parse_homography("1, 0, 5\n0 1 -3\n0,0,1");
  const auto p = apply_homography(h, {1, 1});
  EXPECT_EQ(p.x, 6.0);
  EXPECT_EQ(p.y, -2.0);
  EXPECT_THROW(parse_homography("1 2 3"), std::invalid_argument);
  EXPECT_THROW(parse_homography("1 0 0 0 1 0 0 0 1 4"), std::invalid_argument);
}
