#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace covobf {

// Seeded RNG with hand-rolled distributions. std::mt19937_64 is fully
// specified by the standard, but the std distributions are not; rolling
// our own keeps every sampled value reproducible across toolchains.
class Rng {
 public:
  explicit Rng(uint64_t seed) : root_seed_(seed), engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // [0, 1) with 53 bits of mantissa.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller.
  double normal();

  // Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi);

  // Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Independent child stream. Does not consume state, so the set of
  // streams a seed produces is fixed regardless of sampling order.
  Rng fork(uint64_t stream) const;

  uint64_t root_seed() const { return root_seed_; }

 private:
  uint64_t root_seed_;
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

uint64_t splitmix64(uint64_t x);

}  // namespace covobf
