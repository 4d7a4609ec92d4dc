#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <vector>

namespace invnets::rng {

// xoshiro256** with splitmix64 seeding. Hand-rolled so that streams are
// splittable by index and sequences are byte-identical across standard
// libraries (std::normal_distribution is not portable).

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class Stream {
 public:
  explicit Stream(std::uint64_t seed, std::uint64_t stream_id = 0) {
    std::uint64_t s = seed ^ (0xA0761D6478BD642FULL * (stream_id + 1));
    for (auto& word : state_) word = splitmix64(s);
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

  /// Uniform on [0, 1).
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Integer uniform on [0, n).
  std::uint64_t below(std::uint64_t n) {
    // modulo bias is < 2^-53 for the n used here; fine at desk scale
    return next_u64() % n;
  }

  /// Standard normal via Box-Muller (no cached spare, fully stream-local).
  double normal() {
    double u1 = 1.0 - uniform01();  // (0, 1]
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  /// Circularly-symmetric complex normal with E|z|^2 = 1.
  std::complex<double> circular_normal() {
    return {normal() * M_SQRT1_2, normal() * M_SQRT1_2};
  }

  /// Uniform direction on the unit sphere in R^dim.
  std::vector<double> sphere(std::size_t dim) {
    std::vector<double> v(dim);
    double norm2 = 0.0;
    do {
      norm2 = 0.0;
      for (auto& x : v) {
        x = normal();
        norm2 += x * x;
      }
    } while (norm2 == 0.0);
    double inv = 1.0 / std::sqrt(norm2);
    for (auto& x : v) x *= inv;
    return v;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t state_[4];
};

/// Derives an independent stream for a (seed, cell) pair.
inline Stream split(std::uint64_t seed, std::uint64_t cell) { return Stream(seed, cell + 1); }

}  // namespace invnets::rng
