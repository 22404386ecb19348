#pragma once

// Deterministic random source. xoshiro256** seeded through splitmix64, with a
// named-stream deriver so every component of a run draws from its own
// reproducible stream of a single master seed. We roll our own distributions
// because libstdc++ does not pin <random> distribution algorithms across
// versions, and run outputs must be byte-stable.

#include <cmath>
#include <cstdint>
#include <string_view>

namespace maskdiff {

namespace detail {

inline uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ull;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

} // namespace detail

class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& word : s_) word = detail::splitmix64(x);
  }

  uint64_t next() {
    uint64_t result = detail::rotl(s_[1] * 5, 7) * 9;
    uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = detail::rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 significant bits.
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). Multiply-shift; bias is O(n / 2^64).
  int uniform_int(int n) {
    auto wide = static_cast<unsigned __int128>(next());
    return static_cast<int>((wide * static_cast<unsigned __int128>(n)) >> 64);
  }

  // Standard normal via Box-Muller. Uses two uniforms per call.
  double normal() {
    double u1 = 1.0 - uniform01(); // (0, 1]
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  // Independent stream keyed by (master, name, index). FNV-1a over the name,
  // then splitmix to decorrelate nearby indices.
  static uint64_t derive(uint64_t master, std::string_view stream, uint64_t index = 0) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (char c : stream) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ull;
    }
    uint64_t x = master ^ h;
    detail::splitmix64(x);
    x ^= index * 0x9e3779b97f4a7c15ull;
    return detail::splitmix64(x);
  }

 private:
  uint64_t s_[4];
};

} // namespace maskdiff
