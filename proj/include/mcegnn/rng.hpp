#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace mcegnn {

// Named streams so independent consumers (data generation, parameter init,
// batch shuffling, ...) never share a random sequence even under one seed.
namespace rng_streams {
inline constexpr std::uint64_t kTensor = 1;
inline constexpr std::uint64_t kParamInit = 2;
inline constexpr std::uint64_t kDataGen = 3;
inline constexpr std::uint64_t kShuffle = 4;
inline constexpr std::uint64_t kHarness = 5;
}  // namespace rng_streams

// SplitMix64: the state walks a Weyl sequence (increments of the 64-bit
// golden-ratio constant) and each output applies a bijective finalizer to the
// counter. Counter-based, so seeding is O(1) and (seed, stream) pairs give
// decorrelated sequences with identical bytes on every run.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream) {
    state_ = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
    state_ = mix(state_);
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix(state_);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the second sample of each pair is cached.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    // u1 in (0, 1] so the log is finite.
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
  }

  // Bounded draw in [0, n) via the 128-bit multiply-shift reduction.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below requires n > 0");
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t state_ = 0;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace mcegnn
