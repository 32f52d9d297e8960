#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

namespace nbode {

/// Deterministic xoshiro256** generator with splitmix64 seeding.
///
/// The standard library distributions are implementation-defined, so every
/// random draw in this project goes through this class to keep datasets and
/// training runs reproducible across toolchains. Independent streams are
/// derived from (seed, stream) so per-trajectory generation can run in any
/// order, or in parallel, and still produce identical output.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : Rng(seed, 0) {}

  Rng(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t a = seed;
    std::uint64_t b = stream;
    for (auto& word : state_) {
      word = splitmix(a) ^ splitmix(b);
    }
    if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) {
      state_[0] = 0x9e3779b97f4a7c15ULL;
    }
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1) with 53 bits of entropy.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller. Two uniforms are consumed per call and
  /// no spare is cached, so the stream position is a pure function of the
  /// call count.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi() * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Uniformly random direction on the unit sphere in 3-D.
  std::array<double, 3> unit3() {
    for (;;) {
      std::array<double, 3> v{normal(), normal(), normal()};
      const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
      if (n > 1e-12) {
        return {v[0] / n, v[1] / n, v[2] / n};
      }
    }
  }

  /// Unbiased-enough index in [0, n) (Lemire multiply-shift).
  std::size_t uniform_index(std::size_t n) {
    return static_cast<std::size_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  template <class T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::swap(values[i - 1], values[uniform_index(i)]);
    }
  }

 private:
  static constexpr double two_pi() { return 6.283185307179586476925286766559; }

  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  static std::uint64_t splitmix(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::array<std::uint64_t, 4> state_{};
};

}  // namespace nbode
