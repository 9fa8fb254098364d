#pragma once

#include <cstdint>
#include <vector>

#include "pdemorph/errors.hpp"

namespace pdemorph {

/// Radical-inverse of `i` in the given prime base, in [0,1).
double radical_inverse(unsigned base, std::uint64_t i);

/// Deterministic low-discrepancy point source (Halton sequence, one prime
/// base per dimension). The seed only shifts the start index, so two samplers
/// with the same (dim, seed) produce identical streams.
class HaltonSampler {
 public:
  HaltonSampler(std::size_t dim, unsigned seed);

  /// Next point in [0,1)^dim.
  std::vector<double> next01();

  /// Next point mapped into the box [lo_i, hi_i]^dim.
  std::vector<double> next_box(const std::vector<double>& lo,
                               const std::vector<double>& hi);

 private:
  std::size_t dim_;
  std::uint64_t index_;
};

}  // namespace pdemorph
