#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string_view>

namespace fwl {

// Counter-based generator so that (master_seed, purpose, index) always maps
// to the same stream, independent of platform and call order.
class RngStream {
 public:
  explicit RngStream(std::uint64_t state) : state_(state) {}

  std::uint64_t next_u64() {
    // splitmix64
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1) with 53 bits of resolution
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // standard normal via Box-Muller (no libc distribution, those differ
  // between standard library implementations)
  double next_normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  // integer in [0, n)
  std::uint64_t next_below(std::uint64_t n) {
    // rejection sampling to avoid modulo bias
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = next_normal();
    return m;
  }

 private:
  std::uint64_t state_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

// Root generator: derives independent substreams from a master seed,
// a purpose label and an index.
class Rng {
 public:
  explicit Rng(std::uint64_t master_seed) : master_seed_(master_seed) {}

  std::uint64_t master_seed() const { return master_seed_; }

  RngStream stream(std::string_view purpose, std::uint64_t index = 0) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a over the label
    for (char c : purpose) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    std::uint64_t s = mix(master_seed_ ^ mix(h) ^ mix(index * 0x9e3779b97f4a7c15ULL + 1));
    return RngStream(s);
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t master_seed_;
};

}  // namespace fwl
