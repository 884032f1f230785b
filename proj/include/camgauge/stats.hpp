#pragma once

#include <optional>
#include <span>
#include <vector>

namespace camgauge::stats {

double mean(std::span<const double> x);
/// Population standard deviation (divides by n).
double stddev(std::span<const double> x);

/// Pearson correlation; nullopt when either series is constant or sizes differ / n < 2.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

/// Ranks starting at 1; ties receive the average of their positions.
std::vector<double> average_ranks(std::span<const double> x);

/// Spearman rank correlation (Pearson of average ranks).
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

}  // namespace camgauge::stats
