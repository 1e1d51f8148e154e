#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "ems/error.hpp"

namespace ems {

/// Zero-based index of the lower nearest-rank q-quantile in a sorted sample of size n.
inline std::size_t nearest_rank_index(double q, std::size_t n) {
  if (n == 0) throw Error(Errc::EmptySelection, "quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw Error(Errc::ValidationError, "quantile level outside [0, 1]");
  // guard against q*n landing a hair above an integer
  const double rank = std::ceil(q * static_cast<double>(n) - 1e-9);
  const auto r = static_cast<std::ptrdiff_t>(rank) - 1;
  return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(r, 0, static_cast<std::ptrdiff_t>(n) - 1));
}

/// Lower nearest-rank quantile; the sample is copied and sorted.
inline double nearest_rank(std::vector<double> sample, double q) {
  std::sort(sample.begin(), sample.end());
  return sample[nearest_rank_index(q, sample.size())];
}

}  // namespace ems
