#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace dsva {

// splitmix64 step; the workhorse behind all seeding in the project.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

// Derive an independent stream seed from a base seed and a tag.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t s = seed ^ (0x9E3779B97F4A7C15ull + tag * 0xD1B54A32D192ED03ull);
  splitmix64(s);
  return s;
}

// Deterministic RNG used everywhere instead of std:: distributions, so that
// identical seeds give identical bits regardless of standard library.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed) {
    // decorrelate trivially related seeds
    splitmix64(state_);
  }

  std::uint64_t next_u64() { return splitmix64(state_); }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // integer in [0, n)
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  // standard normal via Box-Muller (one value per call, cache the pair)
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double two_pi = 6.283185307179586476925286766559;
    spare_ = r * std::sin(two_pi * u2);
    has_spare_ = true;
    return r * std::cos(two_pi * u2);
  }

private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace dsva
