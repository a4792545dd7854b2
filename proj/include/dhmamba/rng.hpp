#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dhm {

// Seedable generator, splittable by purpose label so that masks, phantoms,
// and weight init draw from independent streams.
class Rng {
 public:
  explicit Rng(uint64_t seed) : root_(seed), eng_(mix(seed)) {}
  Rng(uint64_t seed, std::string_view purpose) : Rng(seed ^ fnv1a(purpose)) {}

  Rng split(std::string_view purpose) const { return Rng(root_, purpose); }

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(eng_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(eng_);
  }
  bool bernoulli(double p) { return std::bernoulli_distribution(p)(eng_); }
  // inclusive range
  int64_t uniform_int(int64_t lo, int64_t hi) {
    return std::uniform_int_distribution<int64_t>(lo, hi)(eng_);
  }

  std::mt19937_64& engine() { return eng_; }

  static uint64_t fnv1a(std::string_view s) {
    uint64_t h = 1469598103934665603ull;
    for (char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    return h;
  }

 private:
  // splitmix64 finalizer, decorrelates nearby seeds
  static uint64_t mix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  uint64_t root_ = 0;
  std::mt19937_64 eng_;
};

}  // namespace dhm
