#pragma once

#include <cstdint>
#include <random>

namespace geotdm {

// Deterministic random source with hand-rolled distributions.
// std::normal_distribution and friends are implementation-defined, so all
// mappings from raw bits to samples are done here; a given seed produces the
// same stream on every conforming platform.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();
  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  // Standard normal via Box-Muller; one spare value is cached.
  double normal();
  // Uniform integer in [lo, hi], both inclusive, rejection-sampled.
  int64_t uniform_int(int64_t lo, int64_t hi);
  bool bernoulli(double p);
  // Independent substream; fork(i) depends only on (seed, i).
  Rng fork(uint64_t stream) const;

  uint64_t seed() const { return seed_; }

 private:
  std::mt19937_64 gen_;
  uint64_t seed_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// splitmix64 step; advances state and returns the next value.
uint64_t splitmix64(uint64_t& state);

}  // namespace geotdm
