#pragma once

#include <span>

namespace secmsg::stats {

double mean(std::span<const double> xs);
/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
double stddev(std::span<const double> xs);
/// Inverse of the standard normal CDF, p in (0, 1).
double normal_quantile(double p);
/// Half-width of the two-sided normal-approximation confidence interval.
double ci_halfwidth(std::span<const double> xs, double level);

}  // namespace secmsg::stats
