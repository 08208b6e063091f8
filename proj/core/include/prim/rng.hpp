#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace prim {

// Deterministic RNG wrapper. All sampling algorithms are spelled out here
// instead of relying on std:: distributions, so that a given seed produces
// the same stream on every standard library implementation.
class Rng {
 public:
  explicit Rng(uint64_t seed) : base_seed_(seed), eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection sampling, no modulo bias.
  int64_t uniform_int(int64_t n) {
    const uint64_t bound = static_cast<uint64_t>(n);
    const uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      uint64_t x = next_u64();
      if (x >= threshold) return static_cast<int64_t>(x % bound);
    }
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Fisher-Yates, descending index convention.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(static_cast<int64_t>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Independent child stream for a named purpose (split, negatives, ...).
  Rng fork(std::string_view label) const {
    uint64_t h = 1469598103934665603ull;  // FNV-1a offset basis
    auto mix = [&h](uint64_t x) {
      for (int i = 0; i < 8; ++i) {
        h ^= (x >> (8 * i)) & 0xff;
        h *= 1099511628211ull;
      }
    };
    mix(base_seed_);
    for (char c : label) {
      h ^= static_cast<uint64_t>(static_cast<unsigned char>(c));
      h *= 1099511628211ull;
    }
    return Rng(h);
  }

  uint64_t base_seed() const { return base_seed_; }

 private:
  uint64_t base_seed_;
  std::mt19937_64 eng_;
};

}  // namespace prim
