#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace svf {

struct ConfidenceInterval {
  double lo = 0.0;
  double hi = 0.0;

  bool overlaps(const ConfidenceInterval& o) const { return lo <= o.hi && o.lo <= hi; }
};

struct BootstrapOptions {
  std::size_t resamples = 1000;
  double level = 0.95;
  std::uint64_t seed = 0xb007;
};

double mean(std::span<const double> xs);

// Percentile bootstrap CI of the mean.
ConfidenceInterval bootstrap_mean_ci(std::span<const double> xs, const BootstrapOptions& opt = {});

// Trailing moving average; the first window-1 outputs average what is available.
std::vector<double> moving_average(std::span<const double> xs, std::size_t window = 8);

}  // namespace svf
