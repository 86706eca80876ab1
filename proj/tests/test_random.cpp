#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "sawsps/random.hpp"

using namespace sawsps;

// Known-answer vectors for Philox4x32-10 (Random123 kat_vectors).
TEST(Philox, KnownAnswerZero) {
  const auto out = Philox4x32::generate({0, 0, 0, 0}, {0, 0});
  EXPECT_EQ(out, (Philox4x32::Block{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
}

TEST(Philox, KnownAnswerAllOnes) {
  const auto out = Philox4x32::generate({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                                        {0xffffffffu, 0xffffffffu});
  EXPECT_EQ(out, (Philox4x32::Block{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
}

TEST(Philox, KnownAnswerPiDigits) {
  const auto out = Philox4x32::generate({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                                        {0xa4093822u, 0x299f31d0u});
  EXPECT_EQ(out, (Philox4x32::Block{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(Philox, StreamIsPureFunctionOfSeedAndIndex) {
  Rng a = make_rng(42, StreamDomain::kTrajectory, 7);
  Rng b = make_rng(42, StreamDomain::kTrajectory, 7);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a(), b());
}

TEST(Philox, DomainsAndIndicesGiveDistinctStreams) {
  std::set<std::uint32_t> firsts;
  for (auto d : {StreamDomain::kTrajectory, StreamDomain::kDevice, StreamDomain::kDetector, StreamDomain::kLayout,
                 StreamDomain::kAnalysis}) {
    for (std::uint64_t i = 0; i < 20; ++i) {
      Rng r = make_rng(1, d, i);
      firsts.insert(r());
    }
  }
  EXPECT_EQ(firsts.size(), 100u);
}

TEST(Philox, DiscardMatchesDrawing) {
  Rng a = make_rng(3, StreamDomain::kDevice, 0);
  Rng b = a;
  for (int i = 0; i < 13; ++i) a();
  b.discard(13);
  EXPECT_EQ(a(), b());
}

TEST(Sampling, UniformStaysInHalfOpenInterval) {
  Rng r = make_rng(5, StreamDomain::kAnalysis, 0);
  double sum = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = uniform01(r);
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / n, 0.5, 3.0 * std::sqrt(1.0 / 12.0 / n));
}

TEST(Sampling, ExponentialMean) {
  Rng r = make_rng(6, StreamDomain::kAnalysis, 0);
  const int n = 200000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += sample_exponential(1.5, r);
  EXPECT_NEAR(sum / n, 1.5, 3.0 * 1.5 / std::sqrt(n));
}

TEST(Sampling, BernoulliEdges) {
  Rng r = make_rng(7, StreamDomain::kAnalysis, 0);
  for (int i = 0; i < 100; ++i) {
    EXPECT_FALSE(bernoulli(0.0, r));
    EXPECT_TRUE(bernoulli(1.0, r));
  }
}

TEST(Sampling, NormalWithZeroSigmaIsExact) {
  Rng r = make_rng(8, StreamDomain::kAnalysis, 0);
  EXPECT_EQ(sample_normal(2.5, 0.0, r), 2.5);
}
