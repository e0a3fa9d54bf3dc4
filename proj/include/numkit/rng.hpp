#pragma once

#include <cstdint>

namespace numkit {

/// splitmix64 stream. Hand-rolled so that identical seeds give identical
/// sequences on every platform and toolchain (std:: distributions do not
/// guarantee that).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {}

  std::uint64_t next_u64();

  /// Uniform in [0,1), 53-bit resolution.
  double uniform();
  double uniform(double lo, double hi);

  /// Uniform integer in [lo, hi], inclusive, rejection-sampled (no modulo bias).
  int uniform_int(int lo, int hi);

  /// Standard normal via Box-Muller; each call consumes exactly two uniforms.
  double normal();
  double normal(double mean, double stddev);

  /// Independent child stream derived from the construction seed and a salt.
  /// Does not depend on how much of this stream has been consumed.
  Rng fork(std::uint64_t salt) const;

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
};

/// One splitmix64 mixing step; handy for hashing (seed, step) pairs.
std::uint64_t mix64(std::uint64_t x);

}  // namespace numkit
