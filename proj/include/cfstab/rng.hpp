#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <vector>

namespace cfstab {

// SplitMix64 finalizer. Used to expand seeds and to derive independent
// stream seeds from (seed, stream-id) tuples.
std::uint64_t splitmix64(std::uint64_t& state);
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// xoshiro256** 1.0 (Blackman & Vigna). All randomness in the project comes
// from this generator; every conversion to floating point below is written
// out explicitly so streams are identical across standard libraries.
class Xoshiro256 {
 public:
  using result_type = std::uint64_t;
  static constexpr const char* kName = "xoshiro256**-1.0/splitmix64";

  explicit Xoshiro256(std::uint64_t seed);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()();

  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer on [0, n), unbiased (rejection sampling).
  std::uint64_t below(std::uint64_t n);
  // Standard normal via the Box-Muller transform.
  double normal();

 private:
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Fisher-Yates permutation of 0..n-1.
std::vector<std::size_t> permutation(std::size_t n, Xoshiro256& rng);

}  // namespace cfstab
