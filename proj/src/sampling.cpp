#include "pdemorph/sampling.hpp"

#include <array>
#include <string>

namespace pdemorph {

namespace {
constexpr std::array<unsigned, 12> kPrimes = {2,  3,  5,  7,  11, 13,
                                              17, 19, 23, 29, 31, 37};
}

double radical_inverse(unsigned base, std::uint64_t i) {
  double inv_base = 1.0 / base;
  double f = inv_base;
  double r = 0.0;
  while (i > 0) {
    r += f * static_cast<double>(i % base);
    i /= base;
    f *= inv_base;
  }
  return r;
}

HaltonSampler::HaltonSampler(std::size_t dim, unsigned seed) : dim_(dim) {
  if (dim == 0 || dim > kPrimes.size()) {
    throw DomainError("sampler dimension " + std::to_string(dim) +
                      " out of range [1, " + std::to_string(kPrimes.size()) +
                      "]");
  }
  // Skip the correlated head of the sequence; the seed picks a stream offset.
  index_ = 32 + static_cast<std::uint64_t>(seed) * 7919;
}

std::vector<double> HaltonSampler::next01() {
  std::vector<double> p(dim_);
  for (std::size_t d = 0; d < dim_; ++d) {
    p[d] = radical_inverse(kPrimes[d], index_);
  }
  ++index_;
  return p;
}

std::vector<double> HaltonSampler::next_box(const std::vector<double>& lo,
                                            const std::vector<double>& hi) {
  if (lo.size() != dim_ || hi.size() != dim_) {
    throw DomainError("sampler box dimension mismatch");
  }
  std::vector<double> p = next01();
  for (std::size_t d = 0; d < dim_; ++d) {
    p[d] = lo[d] + p[d] * (hi[d] - lo[d]);
  }
  return p;
}

}  // namespace pdemorph
