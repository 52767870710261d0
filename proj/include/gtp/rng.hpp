#pragma once

#include <cstdint>
#include <random>

#include "gtp/types.hpp"

namespace gtp {

// Portable pseudo-random source. The engine is std::mt19937_64 seeded with
// the raw 64-bit seed, whose output sequence is fixed by the C++ standard.
// Derived quantities avoid <random> distributions (implementation-defined):
//   uniform()  = (u64 >> 11) * 2^-53, in [0, 1)
//   below(n)   = rejection sampling on the top bits, unbiased
//   normal()   = Box-Muller on two uniforms, the sine output cached for the
//                next call
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t below(std::uint64_t n);
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// SplitMix64 finalizer over (seed, stream); used to give each timestep or
// sub-task its own independent stream.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

// Partial Fisher-Yates over [0, n); returns k distinct indices in draw order.
IndexList sample_without_replacement(Rng& rng, Index n, Index k);

Matrix gaussian_matrix(Rng& rng, Index rows, Index cols);

}  // namespace gtp
