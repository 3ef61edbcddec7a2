#pragma once

#include <cstdint>
#include <random>

namespace msam {

// Portable seeded random source.
//
// Bits come from std::mt19937_64, whose algorithm and constants are fixed by
// the C++ standard, so a seed yields the same 64-bit stream on every
// platform. The real-valued draws are implemented here instead of with the
// <random> distributions, whose algorithms are implementation-defined:
//
//   uniform() = (next() >> 11) * 2^-53                  in [0, 1)
//   normal()  = sqrt(-2 ln(1 - u1)) * cos(2 pi u2)      Box-Muller, one draw
//                                                       per pair (no caching)
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform();
  double normal();
  // Uniform integer in [0, n) by rejection sampling.
  std::uint64_t below(std::uint64_t n);

 private:
  std::mt19937_64 engine_;
};

}  // namespace msam
