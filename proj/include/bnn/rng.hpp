#pragma once

#include <cmath>
#include <cstdint>

namespace bnn::rng {

// splitmix64 finalizer. Bijective on 64-bit words.
inline std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ull;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

// Counter-based word: (seed, stream, index) fully determines the output,
// so any element of any stream can be generated independently of the rest.
inline std::uint64_t word_at(std::uint64_t seed, std::uint64_t stream,
                             std::uint64_t index) {
  std::uint64_t z = mix64(seed + kGolden * (stream + 1));
  return mix64(z + kGolden * (index + 1));
}

// Uniform double in [0,1) with 53 random bits.
inline double unit_double(std::uint64_t word) {
  return static_cast<double>(word >> 11) * 0x1.0p-53;
}

// Derive an independent sub-seed for a named purpose (mask drawing, weight
// init, shuffling, ...) so streams never collide across uses.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t purpose) {
  return mix64(root ^ mix64(purpose + kGolden));
}

// Sequential convenience wrapper over the counter core. Stateful only in
// its counter; two Streams with equal (seed, stream) produce equal output
// on any platform.
class Stream {
 public:
  Stream(std::uint64_t seed, std::uint64_t stream)
      : seed_(seed), stream_(stream) {}

  std::uint64_t next() { return word_at(seed_, stream_, counter_++); }

  double next_double() { return unit_double(next()); }

  // Uniform in [-1, 1).
  double next_signed_unit() { return 2.0 * next_double() - 1.0; }

  // Unbiased integer in [0, n) by rejection.
  std::uint64_t next_below(std::uint64_t n) {
    const std::uint64_t limit = n * ((~std::uint64_t{0}) / n);
    std::uint64_t w;
    do {
      w = next();
    } while (w >= limit);
    return w % n;
  }

  // Standard normal via Box-Muller; caches the second deviate.
  double next_normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1, u2;
    do {
      u1 = next_double();
    } while (u1 <= 0.0);
    u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.28318530717958647692 * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1], v[next_below(i)]);
  }

 private:
  std::uint64_t seed_, stream_;
  std::uint64_t counter_ = 0;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace bnn::rng
