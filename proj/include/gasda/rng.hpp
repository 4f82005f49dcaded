#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace gasda {

// SplitMix64 (Steele, Lea, Flood 2014): a Weyl counter advanced by the golden
// gamma 0x9E3779B97F4A7C15, finalized by the variant-13 64-bit mixer. Every
// random stream in the project derives from this generator, and normal
// variates come from Box-Muller, so results do not depend on the standard
// library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return mix(state_);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Multiply-shift keeps it branch free; the bias
  // is below 2^-32 for every n used here.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Child seed for an independent stream keyed by (seed, tag, index).
  static std::uint64_t derive(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0) {
    // FNV-1a over the tag, then two mixing rounds.
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const char ch : tag) {
      h ^= static_cast<unsigned char>(ch);
      h *= 0x100000001B3ULL;
    }
    return mix(mix(seed ^ h) + index * 0x9E3779B97F4A7C15ULL);
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace gasda
