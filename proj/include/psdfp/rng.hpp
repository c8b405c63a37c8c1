#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "psdfp/common.hpp"

namespace psdfp {

inline std::uint64_t splitmix64_step(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Small deterministic generator. The stream is fully specified by the seed,
/// independent of platform or standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {
    // Decorrelate trivially related seeds.
    splitmix64_step(state_);
  }

  /// Counter-based stream: draws depend only on (seed, stream index).
  static Rng stream(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t s = seed;
    std::uint64_t a = splitmix64_step(s);
    std::uint64_t t = index ^ 0x6a09e667f3bcc908ull;
    std::uint64_t b = splitmix64_step(t);
    return Rng(a ^ (b + 0x9e3779b97f4a7c15ull * (index + 1)));
  }

  std::uint64_t next_u64() { return splitmix64_step(state_); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int n) {  // in [0, n)
    return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
  }

  /// Standard normal via Box-Muller (pairs cached).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double exponential() {
    double u = uniform();
    while (u <= 0.0) u = uniform();
    return -std::log(u);
  }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Scrambled Halton sequence for low-discrepancy node sets. Digit permutations
// are seeded Fisher-Yates shuffles, fixed per axis, so point sets are
// reproducible for a given seed.

class ScrambledHalton {
 public:
  ScrambledHalton(int dim, std::uint64_t seed) : dim_(dim) {
    static const int primes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37};
    if (dim < 1 || dim > static_cast<int>(sizeof(primes) / sizeof(int)))
      throw std::invalid_argument("ScrambledHalton: unsupported dimension");
    Rng rng(seed ^ 0x5851f42d4c957f2dull);
    for (int a = 0; a < dim; ++a) {
      int b = primes[a];
      std::vector<int> perm(b);
      for (int i = 0; i < b; ++i) perm[i] = i;
      for (int i = b - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(i + 1)]);
      // Keep 0 -> 0 so the radical inverse stays in [0,1).
      for (int i = 0; i < b; ++i)
        if (perm[i] == 0) {
          std::swap(perm[i], perm[0]);
          break;
        }
      bases_.push_back(b);
      perms_.push_back(std::move(perm));
    }
  }

  /// Point k (k >= 0) in the unit cube.
  VectorXd point(std::int64_t k) const {
    VectorXd z(dim_);
    for (int a = 0; a < dim_; ++a) {
      const int b = bases_[a];
      const auto& perm = perms_[a];
      double inv = 1.0 / b, f = inv, v = 0.0;
      std::int64_t n = k + 1;  // skip the origin
      while (n > 0) {
        v += f * perm[static_cast<int>(n % b)];
        n /= b;
        f *= inv;
      }
      z[a] = v;
    }
    return z;
  }

  /// Points 0..n-1 mapped into a box.
  MatrixXd points_in_box(std::int64_t n, const Box& box) const {
    if (box.dim() != dim_) throw std::invalid_argument("ScrambledHalton: box dimension mismatch");
    MatrixXd out(n, dim_);
    for (std::int64_t k = 0; k < n; ++k) {
      VectorXd u = point(k);
      for (int a = 0; a < dim_; ++a) out(k, a) = box.lower[a] + box.width(a) * u[a];
    }
    return out;
  }

 private:
  int dim_;
  std::vector<int> bases_;
  std::vector<std::vector<int>> perms_;
};

}  // namespace psdfp
