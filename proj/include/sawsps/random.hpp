#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>

namespace sawsps {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
///
/// The 64-bit key selects the family (master seed), the upper 64 bits of the
/// counter select a substream, and the lower 64 bits count blocks within it.
/// Every substream is therefore a pure function of (key, stream id), which is
/// what makes parallel trajectory scheduling irrelevant to the results.
class Philox4x32 {
 public:
  using result_type = std::uint32_t;
  using Block = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  Philox4x32(std::uint64_t key, std::uint64_t stream)
      : key_{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)},
        stream_(stream) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    if (index_ == 4) {
      buffer_ = generate({static_cast<std::uint32_t>(block_),
                          static_cast<std::uint32_t>(block_ >> 32),
                          static_cast<std::uint32_t>(stream_),
                          static_cast<std::uint32_t>(stream_ >> 32)},
                         key_);
      ++block_;
      index_ = 0;
    }
    return buffer_[index_++];
  }

  void discard(unsigned long long n) {
    for (; n > 0; --n) (*this)();
  }

  /// Ten-round bijection of one counter block under a key.
  static Block generate(Block ctr, Key key) {
    constexpr std::uint32_t kMul0 = 0xD2511F53u;
    constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
      }
      const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
      ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
             static_cast<std::uint32_t>(p1),
             static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
             static_cast<std::uint32_t>(p0)};
    }
    return ctr;
  }

 private:
  Key key_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  Block buffer_{};
  int index_ = 4;
};

using Rng = Philox4x32;

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Tags keep substreams of unrelated consumers (trajectories, device runs,
/// detector noise, ...) from ever sharing a key.
enum class StreamDomain : std::uint64_t {
  kTrajectory = 1,
  kDevice = 2,
  kDetector = 3,
  kLayout = 4,
  kAnalysis = 5,
};

inline Rng make_rng(std::uint64_t master_seed, StreamDomain domain, std::uint64_t index) {
  return Rng(splitmix64(master_seed ^ splitmix64(static_cast<std::uint64_t>(domain))), index);
}

inline double uniform01(Rng& rng) {
  // 53 random bits; never returns 1.
  const std::uint64_t hi = rng();
  const std::uint64_t lo = rng();
  return static_cast<double>(((hi << 32) | lo) >> 11) * 0x1.0p-53;
}

inline unsigned sample_poisson(double mean, Rng& rng) {
  if (mean <= 0.0) return 0;
  std::poisson_distribution<unsigned> dist(mean);
  return dist(rng);
}

inline double sample_exponential(double mean, Rng& rng) {
  return -mean * std::log1p(-uniform01(rng));
}

inline double sample_normal(double mean, double sigma, Rng& rng) {
  if (sigma <= 0.0) return mean;
  std::normal_distribution<double> dist(mean, sigma);
  return dist(rng);
}

inline bool bernoulli(double p, Rng& rng) {
  if (p <= 0.0) return false;
  if (p >= 1.0) return true;
  return uniform01(rng) < p;
}

}  // namespace sawsps
