#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace tgrl {

// mt19937_64 is fully specified by the standard; the helpers below avoid the
// implementation-defined std:: distributions so runs are reproducible across
// standard libraries.
using Rng = std::mt19937_64;

// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives a child seed from a parent seed and a stream index.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) {
  return mix64(mix64(parent) ^ (index * 0xd1b54a32d192ed03ULL + 0x8cb92ba72f3d8dd7ULL));
}

// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n), n > 0 (Lemire multiply-shift with rejection).
inline int uniform_int(Rng& rng, int n) {
  const auto range = static_cast<std::uint64_t>(n);
  const std::uint64_t threshold = (0 - range) % range;
  for (;;) {
    const std::uint64_t x = rng();
    const unsigned __int128 m = static_cast<unsigned __int128>(x) * range;
    if (static_cast<std::uint64_t>(m) >= threshold) {
      return static_cast<int>(m >> 64);
    }
  }
}

// Inverse-CDF draw from normalized probabilities. Zero-probability entries
// are never returned.
inline int sample_categorical(Rng& rng, std::span<const double> probs) {
  const double u = uniform01(rng);
  double acc = 0.0;
  int last_positive = -1;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last_positive = static_cast<int>(i);
    acc += probs[i];
    if (u < acc) return last_positive;
  }
  return last_positive;
}

}  // namespace tgrl
