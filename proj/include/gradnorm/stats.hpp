#pragma once

#include <span>
#include <vector>

namespace gradnorm {

/// 1-based ranks; tied values share the average of their ranks.
std::vector<double> average_ranks(std::span<const double> values);

double pearson_correlation(std::span<const double> x, std::span<const double> y);

/// Pearson correlation of the average ranks. Returns 0 when either side is constant.
double spearman_correlation(std::span<const double> x, std::span<const double> y);

double euclidean_distance(std::span<const double> a, std::span<const double> b);

}  // namespace gradnorm
