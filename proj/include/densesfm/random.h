#pragma once

#include <cstdint>

namespace densesfm {

std::uint64_t SplitMix64(std::uint64_t& state);

// xoshiro256** seeded through splitmix64. Streams for distinct entities are
// derived from (seed, stream, substream) so generation order does not matter.
// Only integer arithmetic and IEEE-exact operations are used, so sequences are
// identical on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  static Rng Stream(std::uint64_t seed, std::uint64_t stream, std::uint64_t substream = 0);

  std::uint64_t Next();
  // [0, 1) with 53 random bits.
  double Uniform();
  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }
  // Uniform integer in [0, n), n > 0.
  std::uint64_t Below(std::uint64_t n);
  // Irwin-Hall(12) approximation of a standard normal: sum of 12 uniforms
  // minus 6. Mean 0, variance 1, support [-6, 6].
  double Normal();

 private:
  std::uint64_t s_[4];
};

}  // namespace densesfm
