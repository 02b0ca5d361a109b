#include <gtest/gtest.h>

#include <bit>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

#include "lytnet/dataset.hpp"
#include "lytnet/guidance.hpp"
#include "lytnet/network.hpp"
#include "lytnet/weights_io.hpp"

using namespace lytnet;

namespace {

std::string bytes_of(const Parameters<float>& p) {
  std::ostringstream os(std::ios::binary);
  write_weights(os, to_stored(p));
  return os.str();
}

std::uint32_t le32(const std::string& s, std::size_t at) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(s[at])) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(s[at + 1])) << 8 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(s[at + 2])) << 16 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(s[at + 3])) << 24;
}

}  // namespace

TEST(Weights, HeaderLayout) {
  Parameters<float> p;
  p.add("w", ParamKind::conv_weight, Tensor<float>({2, 1}, {1.0f, -2.5f}));
  const auto s = bytes_of(p);
  ASSERT_EQ(s.size(), 4u + 4 + 4 + 4 + 1 + 4 + 8 + 8);
  EXPECT_EQ(s.substr(0, 4), "LYTW");
  EXPECT_EQ(le32(s, 4), 1u);          // version
  EXPECT_EQ(le32(s, 8), 1u);          // count
  EXPECT_EQ(le32(s, 12), 1u);         // name length
  EXPECT_EQ(s[16], 'w');
  EXPECT_EQ(le32(s, 17), 2u);         // rank
  EXPECT_EQ(le32(s, 21), 2u);
  EXPECT_EQ(le32(s, 25), 1u);
  EXPECT_EQ(le32(s, 29), std::bit_cast<std::uint32_t>(1.0f));
  EXPECT_EQ(le32(s, 33), std::bit_cast<std::uint32_t>(-2.5f));
}

TEST(Weights, NetworkRoundTripIsBitIdentical) {
  NetworkConfig cfg;
  cfg.width_multiplier = 0.5;
  cfg.input_height = cfg.input_width = 64;
  const auto net = build_lytnet(cfg, 11);
  const auto path = (std::filesystem::temp_directory_path() / "lytnet_rt.lytw").string();
  save_weights(path, net.parameters());

  auto fresh = build_lytnet(cfg, 12);
  ASSERT_FALSE(fresh.parameters() == net.parameters());
  load_weights(path, fresh.parameters());
  for (std::size_t i = 0; i < net.parameters().size(); ++i) {
    const auto& a = net.parameters()[i].value;
    const auto& b = fresh.parameters()[i].value;
    for (std::size_t j = 0; j < a.size(); ++j)
      ASSERT_EQ(std::bit_cast<std::uint32_t>(a[j]), std::bit_cast<std::uint32_t>(b[j]));
  }
  std::ifstream is(path, std::ios::binary);
  const std::string on_disk{std::istreambuf_iterator<char>(is), {}};
  EXPECT_EQ(on_disk, bytes_of(fresh.parameters()));

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(0, 1);
  Tensor<float> x({1, 3, 64, 64});
  for (auto& v : x.data()) v = u(rng);
  EXPECT_TRUE(net.infer(x).logits == fresh.infer(x).logits);
  std::filesystem::remove(path);
}

TEST(Weights, CorruptFilesRejected) {
  Parameters<float> p;
  p.add("w", ParamKind::conv_weight, Tensor<float>({3}, {1, 2, 3}));
  auto s = bytes_of(p);
  auto expect_bad = [](const std::string& bytes) {
    std::istringstream is(bytes, std::ios::binary);
    try {
      read_weights(is);
      ADD_FAILURE() << "accepted corrupt file";
    } catch (const WeightsFormatError& e) {
      EXPECT_NE(std::string(e.what()).find("bad weights file"), std::string::npos);
    }
  };
  auto bad_magic = s;
  bad_magic[0] = 'X';
  expect_bad(bad_magic);
  expect_bad(s.substr(0, s.size() - 1));
  auto bad_version = s;
  bad_version[4] = 2;
  expect_bad(bad_version);

  Parameters<float> other;
  other.add("w", ParamKind::conv_weight, Tensor<float>({4}));
  std::istringstream is(s, std::ios::binary);
  EXPECT_THROW(assign_stored(other, read_weights(is)), WeightsFormatError);
}

TEST(Manifest, JsonlRoundTripPreservesDoubles) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<ManifestRecord> recs;
  for (int i = 0; i < 40; ++i) {
    const double y2 = u(rng) * 0.5;
    recs.push_back({"img_" + std::to_string(i) + ".ppm",
                    static_cast<LightClass>(i % kNumClasses),
                    {u(rng), y2 + 0.5, u(rng), y2},
                    i % 4 != 0});
  }
  std::stringstream ss;
  write_manifest(ss, recs);
  EXPECT_EQ(read_manifest(ss), recs);
}

TEST(Replay, JsonlRoundTripPreservesDoubles) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 40; ++i) {
    ReplayFrame f;
    for (auto& v : f.probs) v = u(rng);
    f.endpoints = {u(rng), u(rng), u(rng), u(rng)};
    const auto back = parse_replay_frame(to_json(f).dump(), i + 1);
    for (std::size_t c = 0; c < kNumClasses; ++c)
      EXPECT_EQ(std::bit_cast<std::uint64_t>(back.probs[c]),
                std::bit_cast<std::uint64_t>(f.probs[c]));
    EXPECT_EQ(back, f);
  }
}
