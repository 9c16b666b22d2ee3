#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace xfer {

/// Seedable xoshiro256** generator whose state is expanded from a 64-bit seed
/// with splitmix64. Every distribution below is implemented here rather than
/// through <random> so that streams are bit-identical across standard libraries.
///
///   seed expansion: s[i] = splitmix64(x) for i = 0..3, x starting at the seed
///   uniform():      (next() >> 11) * 2^-53, in [0, 1)
///   normal():       Box-Muller on two uniforms, one value per call
///   uniform_int(n): Lemire rejection on next()
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next();
  double uniform();
  double uniform(double lo, double hi);
  double normal();
  double normal(double mean, double stddev);
  std::uint64_t uniform_int(std::uint64_t n);
  /// Draws an index from an unnormalised discrete distribution.
  std::size_t categorical(std::span<const double> weights);

  /// Independent child stream; the parent advances by one draw.
  Rng split();

 private:
  std::array<std::uint64_t, 4> state_{};
};

std::uint64_t splitmix64(std::uint64_t& x);

}  // namespace xfer
