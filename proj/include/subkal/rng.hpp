#pragma once

#include <cmath>
#include <cstdint>

namespace subkal {

// SplitMix64 finalizer; bijective on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent seed from (seed, a, b). Used to split one run seed
// into per-step / per-purpose streams.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a,
                                    std::uint64_t b = 0) noexcept {
  return mix64(mix64(seed ^ 0x6a09e667f3bcc909ULL) + 0x9e3779b97f4a7c15ULL * (a + 1) +
               0xc2b2ae3d27d4eb4fULL * (b + 1));
}

// Counter-based generator: every draw is a pure function of (seed, stream,
// index). Parallel consumers indexed deterministically produce identical
// values regardless of evaluation order or thread count.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
      : key_(mix64(mix64(seed) ^ (0xda3e39cb94b95bdbULL * (stream + 1)))) {}

  std::uint64_t bits(std::uint64_t index) const noexcept {
    return mix64(key_ ^ (index * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL));
  }

  // Uniform in the open interval (0, 1).
  double uniform(std::uint64_t index) const noexcept {
    return (static_cast<double>(bits(index) >> 11) + 0.5) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller on draws (2*index, 2*index + 1).
  double normal(std::uint64_t index) const noexcept {
    const double u1 = uniform(2 * index);
    const double u2 = uniform(2 * index + 1);
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(6.28318530717958647692528676655900577 * u2);
  }

 private:
  std::uint64_t key_;
};

}  // namespace subkal
