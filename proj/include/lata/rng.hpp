#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace lata {

// Counter-based randomness: every draw is a pure function of
// (seed, stream name, element index), so evaluation order is irrelevant.

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

class CounterRng {
 public:
  constexpr CounterRng(std::uint64_t seed, std::string_view stream)
      : key_(splitmix64(splitmix64(seed) ^ fnv1a64(stream))) {}

  constexpr std::uint64_t bits(std::uint64_t index) const {
    return splitmix64(key_ ^ splitmix64(index * 0xd1b54a32d192ed03ull + 0x8cb92ba72f3d8dd7ull));
  }

  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform(std::uint64_t index) const {
    return static_cast<double>(bits(index) >> 11) * 0x1p-53;
  }

  // Standard normal via Box-Muller on two sub-counters.
  double normal(std::uint64_t index) const {
    const double u1 = (static_cast<double>(bits(2 * index) >> 11) + 1.0) * 0x1p-53;  // (0, 1]
    const double u2 = uniform(2 * index + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  std::uint64_t key_;
};

}  // namespace lata
