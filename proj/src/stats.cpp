#include "secmsg/stats.hpp"

#include <cmath>
#include <numeric>

#include "secmsg/error.hpp"

namespace secmsg::stats {

double mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double stddev(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("normal quantile needs p in (0, 1)");
  // Phi(x) = erfc(-x / sqrt 2) / 2 is monotone; bisect to double precision.
  double lo = -40.0;
  double hi = 40.0;
  for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (0.5 * std::erfc(-mid / std::sqrt(2.0)) < p) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

double ci_halfwidth(std::span<const double> xs, double level) {
  if (xs.size() < 2) return 0.0;
  const double z = normal_quantile(0.5 + level / 2.0);
  return z * stddev(xs) / std::sqrt(static_cast<double>(xs.size()));
}

}  // namespace secmsg::stats
