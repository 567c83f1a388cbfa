#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace mlest {

/// Pairwise (cascade) summation. The result depends only on the order of
/// the input, never on how work was scheduled to produce it.
double pairwise_sum(std::span<const double> values);

struct MeanStderr {
  double mean = 0.0;
  double stderr_of_mean = 0.0;  // sample sd / sqrt(count); 0 when count < 2
  std::size_t count = 0;
};

MeanStderr mean_stderr(std::span<const double> values);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

/// Index of the largest element; ties resolve to the lowest index.
std::size_t argmax_lowest(std::span<const double> values);

}  // namespace mlest
