#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace ttalab {

// Seeded random stream. The engine is std::mt19937_64, whose output sequence
// is fixed by the standard; the real-valued transforms below are written out
// by hand because the standard distributions are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; consumes two draws per call.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Uniform integer in [0, n) without modulo bias.
  std::size_t index(std::size_t n);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

  // k distinct values from [0, n), in draw order. DomainError when k > n.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

  // Stream seed for sub-task `index` of a run seeded with `master`
  // (splitmix64 finaliser over both words).
  static std::uint64_t derive(std::uint64_t master, std::uint64_t index);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace ttalab
