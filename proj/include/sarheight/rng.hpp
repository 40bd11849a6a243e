#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace sarheight {

/// splitmix64 finalizer; the mixing primitive behind all stream derivation.
inline uint64_t mix64(uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// FNV-1a over a string, for named substream tags.
inline uint64_t stream_tag(std::string_view name) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

/// Seedable splitmix64 generator. Substreams are derived by hashing
/// (seed, index), never by sequence position, so per-entity streams stay
/// stable under parallel evaluation order.
class Rng {
public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  /// Unbiased integer in [0, n). n must be > 0.
  uint64_t next_below(uint64_t n) {
    // rejection sampling on the top bits
    uint64_t threshold = (0ULL - n) % n;
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  /// Standard normal via Box-Muller; draws two uniforms per call, no caching,
  /// so the stream layout is position-independent.
  double normal() {
    double u1 = next_double();
    double u2 = next_double();
    // u1 == 0 would take log(0)
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi_ * u2);
  }

  /// Exponential with mean 1.
  double exponential() {
    double u = next_double();
    return -std::log1p(-u);
  }

  double lognormal(double mu, double sigma) { return std::exp(mu + sigma * normal()); }

  /// Derived generator for (this stream's seed, index).
  Rng substream(uint64_t index) const { return Rng(mix64(state_ ^ mix64(index))); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  static constexpr double kTwoPi_ = 6.283185307179586476925286766559;
  uint64_t state_;
};

/// Named substream of a root seed, e.g. derive(seed, stream_tag("speckle")).
inline Rng derive(uint64_t seed, uint64_t tag) { return Rng(mix64(seed ^ mix64(tag))); }

}  // namespace sarheight
