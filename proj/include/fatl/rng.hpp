#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

// Counter-based randomness. Every draw is a pure function of (seed, counter),
// so per-patient draws can be made in any order (or in parallel) and still
// match a serial run bit for bit.

namespace fatl {

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

// SplitMix64 finalizer (Steele, Lea & Flood mixing constants).
inline std::uint64_t splitmix64(std::uint64_t x) {
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Value at position `index` of the SplitMix64 stream seeded with `seed`.
// Pure random access: counter_value(s, i) never depends on other indices.
inline std::uint64_t counter_value(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(seed + (index + 1) * kGolden);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Deterministic sub-seed for a named purpose ("site_a", "split", ...).
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
  return splitmix64(seed ^ fnv1a64(label));
}

inline std::uint64_t mix_seeds(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ (b + kGolden + (a << 6) + (a >> 2)));
}

// Uniform in [0, 1), 53-bit resolution.
inline double to_unit(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

// Uniform in (0, 1]; safe as a log() argument.
inline double to_unit_positive(std::uint64_t bits) {
  return static_cast<double>((bits >> 11) + 1) * 0x1.0p-53;
}

// Standard normal from two counter draws (Box-Muller, cosine branch).
inline double counter_normal(std::uint64_t seed, std::uint64_t index_u1, std::uint64_t index_u2) {
  const double u1 = to_unit_positive(counter_value(seed, index_u1));
  const double u2 = to_unit(counter_value(seed, index_u2));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

}  // namespace fatl
