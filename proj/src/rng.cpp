#include "geotdm/rng.hpp"

#include <cmath>

namespace geotdm {

uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

Rng::Rng(uint64_t seed) : gen_(seed), seed_(seed) {}

uint64_t Rng::next_u64() { return gen_(); }

double Rng::uniform() {
  // Top 53 bits give a uniform double in [0, 1).
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // u1 in (0, 1] so the log is finite.
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
  uint64_t bound = static_cast<uint64_t>(hi - lo) + 1;
  if (bound == 0) return static_cast<int64_t>(next_u64());
  uint64_t rem = (UINT64_MAX % bound + 1) % bound;
  uint64_t x;
  do {
    x = next_u64();
  } while (rem != 0 && x >= UINT64_MAX - rem + 1);
  return lo + static_cast<int64_t>(x % bound);
}

bool Rng::bernoulli(double p) { return uniform() < p; }

Rng Rng::fork(uint64_t stream) const {
  uint64_t state = seed_ ^ (stream * 0x9e3779b97f4a7c15ull + 0xd1b54a32d192ed03ull);
  uint64_t s = splitmix64(state);
  s ^= splitmix64(state);
  return Rng(s);
}

}  // namespace geotdm
