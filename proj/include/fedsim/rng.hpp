#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <utility>
#include <vector>

namespace fedsim {

inline constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

// Finalizer of the splitmix64 generator.
inline uint64_t mix64(uint64_t x) {
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Counter-based 64-bit generator: output i is mix64(seed + (i+1)*golden), a
// pure function of (seed, i). Identical streams on every platform/process.
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() { return mix64(state_ += kGolden); }

  // [0, 1)
  double next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  double gaussian() {
    double u1 = 1.0 - next_unit();  // (0, 1]
    double u2 = next_unit();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  // Unbiased integer in [0, bound) via rejection.
  uint64_t next_below(uint64_t bound) {
    uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return r % bound;
    }
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
};

// Minibatch shuffle seed for (client, round): seed XOR a 64-bit mix of both,
// so every transport derives the same local-training trajectory.
inline uint64_t round_shuffle_seed(uint64_t seed, uint32_t client_id,
                                   uint32_t round) {
  return seed ^ mix64((static_cast<uint64_t>(client_id) << 32) | round);
}

// Per-client initial weights under the INDEPENDENT init policy.
inline uint64_t independent_init_seed(uint64_t seed, uint32_t client_id) {
  return mix64(seed ^ (0x1D1D5EEDULL + client_id));
}

}  // namespace fedsim
