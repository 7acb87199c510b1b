#pragma once

#include <cstdint>
#include <limits>
#include <vector>

namespace smckq {

/// SplitMix64 generator. The state advances by a fixed odd increment, so a
/// stream is fully described by its 64-bit state and child streams can be
/// split off deterministically by hashing (parent seed, index).
///
/// Satisfies UniformRandomBitGenerator; the sampling helpers below are
/// implemented here rather than through <random> distributions so that
/// output is identical across standard library implementations.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0) noexcept : state_(seed) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    return mix(z);
  }

  /// Independent child stream keyed by `index`; does not advance this stream.
  Rng split(std::uint64_t index) const noexcept { return Rng(derive_seed(state_, index)); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1); never returns 0, so log(u) is finite.
  double uniform_open() noexcept {
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal draw (Marsaglia polar method, no cached spare).
  double normal() noexcept;

  /// Uniform integer in [0, n). Requires n > 0.
  std::uint64_t below(std::uint64_t n) noexcept;

  /// `k` distinct indices from [0, n) in draw order (partial Fisher-Yates).
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

  static std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  static std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept {
    return mix(mix(seed ^ 0x6A09E667F3BCC909ULL) + mix(index + 0xA54FF53A5F1D36F1ULL));
  }

 private:
  std::uint64_t state_;
};

}  // namespace smckq
