#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <random>

#include "lytnet/guidance.hpp"

using namespace lytnet;

namespace {

using Probs = std::array<double, kNumClasses>;

Probs pure(std::size_t cls) {
  Probs p{};
  p[cls] = 1.0;
  return p;
}

// Centered, straight midline in normalized coordinates of the base image.
const Endpoints kStraight{2016.0 / 4032, 2171.0 / 3024, 2016.0 / 4032, 1440.0 / 3024};

LightMode merged_mode(std::size_t cls) {
  switch (cls) {
    case 0: return LightMode::red;
    case 1: return LightMode::green;
    case 2:
    case 3: return LightMode::countdown;
    default: return LightMode::none;
  }
}

GuidanceOutput feed(GuidanceState& s, const Probs& p, const Endpoints& e = kStraight) {
  return s.push_frame(std::span<const double>(p), e);
}

}  // namespace

TEST(Guidance, UnanimousRedAnnouncesOnFifthFrame) {
  GuidanceState s;
  for (int i = 0; i < 4; ++i) {
    const auto out = feed(s, pure(0));
    EXPECT_EQ(out.light, LightMode::uncertain) << "warm-up frame " << i;
    EXPECT_FALSE(out.announce);
  }
  const auto fifth = feed(s, pure(0));
  EXPECT_EQ(fifth.light, LightMode::red);
  EXPECT_TRUE(fifth.announce);
  for (int i = 0; i < 20; ++i) {
    const auto out = feed(s, pure(0));
    EXPECT_EQ(out.light, LightMode::red);
    EXPECT_FALSE(out.announce);
  }
}

TEST(Guidance, FourOfFiveIsUncertain) {
  GuidanceState s;
  for (int i = 0; i < 4; ++i) feed(s, pure(0));
  const auto out = feed(s, pure(1));
  EXPECT_DOUBLE_EQ(out.averaged[0], 0.8);
  EXPECT_EQ(out.light, LightMode::uncertain);
  EXPECT_FALSE(out.announce);
}

TEST(Guidance, CountdownMassesMerge) {
  GuidanceState s;
  const Probs p{0.05, 0.05, 0.45, 0.40, 0.05};
  GuidanceOutput out;
  for (int i = 0; i < 5; ++i) out = feed(s, p);
  EXPECT_EQ(out.light, LightMode::countdown);
  EXPECT_TRUE(out.announce);
  EXPECT_NEAR(out.averaged[2], 0.45, 1e-12);  // sub-modes kept apart in the output
  EXPECT_NEAR(out.averaged[3], 0.40, 1e-12);
}

// Every window of five pure frames drawn from two classes: the decision is
// a mode only when all five frames agree on it (or both classes are
// countdown sub-modes), otherwise Uncertain.
TEST(Guidance, ExhaustivePurePatternsForEveryClassPair) {
  for (std::size_t a = 0; a < kNumClasses; ++a)
    for (std::size_t b = 0; b < kNumClasses; ++b) {
      if (a == b) continue;
      for (unsigned mask = 0; mask < 32; ++mask) {
        GuidanceState s;
        GuidanceOutput out;
        std::array<std::size_t, kNumClasses> mass{};
        for (int f = 0; f < 5; ++f) {
          const std::size_t cls = (mask >> f) & 1u ? b : a;
          ++mass[static_cast<std::size_t>(merged_mode(cls))];
          out = feed(s, pure(cls));
          if (f < 4) {
            EXPECT_EQ(out.light, LightMode::uncertain);
          }
        }
        LightMode expected = LightMode::uncertain;
        for (std::size_t m = 0; m < 4; ++m)
          if (mass[m] == 5) expected = static_cast<LightMode>(m);
        EXPECT_EQ(out.light, expected) << a << "/" << b << " mask " << mask;
        EXPECT_EQ(out.announce, expected != LightMode::uncertain);
      }
    }
}

TEST(Guidance, SingleAberrantFrameNeverChangesAnnouncedMode) {
  GuidanceState s;
  for (int i = 0; i < 5; ++i) feed(s, pure(1));
  ASSERT_EQ(s.last_announced(), LightMode::green);
  for (std::size_t other : {0u, 2u, 3u, 4u}) {
    for (int pos = 0; pos < 5; ++pos) {
      for (int i = 0; i < 5; ++i) {
        const auto out = feed(s, i == pos ? pure(other) : pure(1));
        EXPECT_FALSE(out.announce && out.light != LightMode::green);
        EXPECT_FALSE(out.announce);
      }
      EXPECT_EQ(s.last_announced(), LightMode::green);
    }
  }
}

TEST(Guidance, AnnouncesEachChangeOnce) {
  GuidanceState s;
  int announcements = 0;
  for (std::size_t cls : {0u, 1u, 4u, 0u}) {
    for (int i = 0; i < 8; ++i) announcements += feed(s, pure(cls)).announce;
  }
  EXPECT_EQ(announcements, 4);
}

TEST(Guidance, PermutationInvariance) {
  std::mt19937_64 rng(12);
  std::gamma_distribution<double> g(0.3, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Probs> frames(5);
    for (auto& p : frames) {
      double total = 0;
      for (auto& v : p) total += v = g(rng) + 1e-12;
      for (auto& v : p) v /= total;
    }
    GuidanceState s1;
    GuidanceOutput base;
    for (const auto& p : frames) base = feed(s1, p);
    for (int k = 0; k < 5; ++k) {
      std::shuffle(frames.begin(), frames.end(), rng);
      GuidanceState s2;
      GuidanceOutput out;
      for (const auto& p : frames) out = feed(s2, p);
      EXPECT_EQ(out.light, base.light);
      for (std::size_t c = 0; c < kNumClasses; ++c)
        EXPECT_EQ(out.averaged[c], base.averaged[c]);
    }
  }
}

TEST(Guidance, RejectsMalformedProbabilities) {
  GuidanceState s;
  const std::vector<double> short_vec{0.5, 0.5};
  EXPECT_THROW(s.push_frame(short_vec, kStraight), GuidanceError);
  const Probs not_normalized{0.5, 0.5, 0.5, 0.0, 0.0};
  EXPECT_THROW(feed(s, not_normalized), GuidanceError);
  const Probs negative{1.2, -0.2, 0, 0, 0};
  EXPECT_THROW(feed(s, negative), GuidanceError);
  EXPECT_EQ(s.buffered(), 0u);
}

TEST(Guidance, SteeringFromAveragedMidline) {
  GuidanceState s;
  const auto out = feed(s, pure(4));
  ASSERT_TRUE(out.angle_deg.has_value());
  EXPECT_NEAR(*out.angle_deg, 0.0, 0.5);
  EXPECT_EQ(out.orientation, Orientation::aligned);
  EXPECT_EQ(out.position, Position::centered);
  // a midline tilted to the right in the bird's-eye frame
  const Endpoints tilted{1800.0 / 4032, 2171.0 / 3024, 2600.0 / 4032, 1440.0 / 3024};
  GuidanceState t;
  const auto right = feed(t, pure(4), tilted);
  EXPECT_GT(*right.angle_deg, 10.0);
  EXPECT_EQ(right.orientation, Orientation::rotate_right);
}

TEST(Orientation, Thresholds) {
  EXPECT_EQ(decide_orientation(-15), Orientation::rotate_left);
  EXPECT_EQ(decide_orientation(0), Orientation::aligned);
  EXPECT_EQ(decide_orientation(10), Orientation::aligned);
  EXPECT_EQ(decide_orientation(-10), Orientation::aligned);
  EXPECT_EQ(decide_orientation(10.001), Orientation::rotate_right);
}

TEST(Position, Bands) {
  EXPECT_EQ(decide_position(460, 768), Position::move_left);
  EXPECT_EQ(decide_position(383.5, 768), Position::centered);
  EXPECT_EQ(decide_position(300, 768), Position::move_right);
  // the three bands partition the line: boundaries belong to Centered
  const double hi = 383.5 + 0.085 * 768, lo = 383.5 - 0.085 * 768;
  EXPECT_EQ(decide_position(hi, 768), Position::centered);
  EXPECT_EQ(decide_position(lo, 768), Position::centered);
  EXPECT_EQ(decide_position(std::nextafter(hi, 1e9), 768), Position::move_left);
  EXPECT_EQ(decide_position(std::nextafter(lo, -1e9), 768), Position::move_right);
  EXPECT_THROW(decide_position(1, 0), std::invalid_argument);
}

TEST(Replay, RoundTripIsValueIdentical) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 50; ++i) {
    ReplayFrame f;
    for (auto& v : f.probs) v = u(rng);
    f.endpoints = {u(rng), u(rng), u(rng), u(rng)};
    EXPECT_EQ(parse_replay_frame(to_json(f).dump(), 1), f);
  }
  EXPECT_THROW(parse_replay_frame(R"({"probs":[1,0,0,0]})", 4), GuidanceError);
  EXPECT_THROW(parse_replay_frame("{", 4), GuidanceError);
}
