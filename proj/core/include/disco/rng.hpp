#pragma once

#include <cstdint>
#include <random>

namespace disco {

// splitmix64 finalizer; good avalanche, used to derive independent streams
// from (root seed, stream counter) so parallel scheduling cannot perturb
// which random numbers an instance sees.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t stream_seed(std::uint64_t root, std::uint64_t stream) {
  return mix64(root ^ mix64(stream));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  // Independent stream #id derived from a root seed by counter.
  static Rng stream(std::uint64_t root, std::uint64_t id) {
    return Rng(stream_seed(root, id));
  }

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(eng_);
  }
  // Inclusive bounds.
  long long uniform_int(long long lo, long long hi) {
    return std::uniform_int_distribution<long long>(lo, hi)(eng_);
  }
  double normal(double mu, double sigma) {
    return std::normal_distribution<double>(mu, sigma)(eng_);
  }
  std::uint64_t bits() { return eng_(); }

  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

}  // namespace disco
