#pragma once

#include <array>
#include <cstdint>

namespace starvae {

/// xoshiro256** seeded through splitmix64.
///
/// Every stochastic stage of the pipeline draws from this generator so
/// that results are reproducible across platforms and standard libraries
/// (std::normal_distribution and friends are implementation-defined).
///
/// Derived draws:
///   uniform()   = (next() >> 11) * 2^-53            in [0, 1)
///   normal()    = sqrt(-2 ln(1 - u1)) * cos(2 pi u2) one value per two draws
///   below(n)    = Lemire multiply-shift with rejection, in [0, n)
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next();
  double uniform();
  double uniform(double lo, double hi);
  double normal();
  std::uint64_t below(std::uint64_t n);

  const std::array<std::uint64_t, 4>& state() const { return s_; }

 private:
  std::array<std::uint64_t, 4> s_{};
};

/// One step of splitmix64; advances `state` and returns the mixed output.
std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace starvae
