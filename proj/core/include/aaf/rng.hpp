#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace aaf {

/// The single source of randomness in the library.
///
/// Engine: std::mt19937_64 (MT19937-64, a fixed published algorithm whose
/// output sequence is mandated by the C++ standard). Conversions to reals are
/// done here rather than through <random> distributions, whose algorithms are
/// implementation-defined:
///   uniform()  = (next() >> 11) * 2^-53            in [0, 1)
///   normal()   = Box-Muller on two uniform() draws, cosine branch only
///   below(n)   = next() % n                        (n is tiny, bias negligible)
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(next() % n); }

 private:
  std::mt19937_64 engine_;
};

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Folds a list of integers into one seed; order-sensitive.
std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace aaf
