#pragma once

#include <cmath>
#include <cstdint>

namespace raydepth {

// Counter-based random stream (splitmix64). The entire sequence is a pure
// function of the seed, so identical seeds reproduce identical draws across
// runs, and independent substreams can be forked for per-sample work without
// sharing mutable state.
class RngStream {
 public:
  RngStream() : state_(0x9E3779B97F4A7C15ull) {}
  explicit RngStream(std::uint64_t seed) : state_(mix(seed ^ 0x5851F42D4C957F2Dull)) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    return mix(state_);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n); n must be > 0.
  std::uint64_t uniform_int(std::uint64_t n) {
    // Rejection-free multiply-shift; bias is negligible for n << 2^64 and,
    // more importantly, the mapping is platform-stable.
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Standard normal via Box-Muller. Two uniforms per draw, no cached state.
  double normal() {
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Independent stream derived from this stream's seed and an index.
  // Forking does not advance this stream.
  RngStream substream(std::uint64_t index) const {
    RngStream s;
    s.state_ = mix(state_ ^ mix(index * 0xD2B74407B1CE6E93ull + 0x8CB92BA72F3D8DD7ull));
    return s;
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t state_;
};

}  // namespace raydepth
