#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace aid {

/// SplitMix64 finalizer. Used as a keyed counter-based generator: the same
/// (seed, counter) always maps to the same 64 bits on every platform.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t hash_key(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

/// Maps 64 random bits to a double in the open interval (0, 1).
double to_unit_open(std::uint64_t bits);

/// Two independent standard normals from two keyed uniforms (Box-Muller).
std::pair<double, double> keyed_normal_pair(std::uint64_t seed, std::uint64_t counter);

/// Sequential generator over std::mt19937_64. The conversions to reals and
/// ranged integers are done here rather than through <random> distributions
/// so streams are identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform() { return to_unit_open(engine_()); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Uniform integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace aid
