#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include <fmt/format.h>

#include "secmsg/error.hpp"
#include "secmsg/models.hpp"

namespace secmsg {

namespace {

using Vec3 = std::array<double, 3>;  // alpha, a, b
using Mat3 = std::array<Vec3, 3>;

constexpr double kMinRate = 1e-12;
constexpr int kMaxIterations = 500;

struct Obs {
  double k;
  double m;
  double y;
};

double model(const Vec3& t, const Obs& o) { return t[0] + o.k * o.m / (t[1] + t[2] * (o.k - 1.0)); }

double ssr(const Vec3& t, const std::vector<Obs>& obs) {
  double s = 0.0;
  for (const auto& o : obs) {
    const double r = model(t, o) - o.y;
    s += r * r;
  }
  return s;
}

Vec3 project(Vec3 t) {
  t[0] = std::max(t[0], 0.0);
  t[1] = std::max(t[1], kMinRate);
  t[2] = std::max(t[2], 0.0);
  return t;
}

/// Solves the active-variable subsystem by Gaussian elimination with partial
/// pivoting; inactive entries of the result are 0.
bool solve(Mat3 m, Vec3 rhs, const std::array<bool, 3>& free, Vec3& x) {
  std::array<int, 3> idx{};
  int n = 0;
  for (int i = 0; i < 3; ++i) {
    if (free[i]) idx[n++] = i;
  }
  x = {0.0, 0.0, 0.0};
  double a[3][4] = {};
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) a[r][c] = m[idx[r]][idx[c]];
    a[r][n] = rhs[idx[r]];
  }
  for (int c = 0; c < n; ++c) {
    int piv = c;
    for (int r = c + 1; r < n; ++r) {
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    }
    if (!(std::abs(a[piv][c]) > 0.0)) return false;
    if (piv != c) {
      for (int j = 0; j <= n; ++j) std::swap(a[c][j], a[piv][j]);
    }
    for (int r = c + 1; r < n; ++r) {
      const double f = a[r][c] / a[c][c];
      for (int j = c; j <= n; ++j) a[r][j] -= f * a[c][j];
    }
  }
  double sol[3] = {};
  for (int r = n - 1; r >= 0; --r) {
    double s = a[r][n];
    for (int j = r + 1; j < n; ++j) s -= a[r][j] * sol[j];
    sol[r] = s / a[r][r];
  }
  for (int r = 0; r < n; ++r) x[idx[r]] = sol[r];
  return true;
}

struct LmResult {
  Vec3 theta;
  double ssr;
  int iterations;
  bool converged;
};

/// Levenberg-Marquardt with Marquardt diagonal scaling. Variables sitting on
/// a bound whose descent direction points outward are frozen for the step.
LmResult levenberg_marquardt(Vec3 t, const std::vector<Obs>& obs) {
  t = project(t);
  double cur = ssr(t, obs);
  double lambda = 1e-3;
  for (int it = 1; it <= kMaxIterations; ++it) {
    Mat3 jtj{};
    Vec3 jtr{};
    for (const auto& o : obs) {
      const double d = t[1] + t[2] * (o.k - 1.0);
      const double r = model(t, o) - o.y;
      const Vec3 g{1.0, -o.k * o.m / (d * d), -o.k * o.m * (o.k - 1.0) / (d * d)};
      for (int i = 0; i < 3; ++i) {
        jtr[i] += g[i] * r;
        for (int j = 0; j < 3; ++j) jtj[i][j] += g[i] * g[j];
      }
    }
    std::array<bool, 3> free{true, true, true};
    const Vec3 lower{0.0, kMinRate, 0.0};
    for (int i = 0; i < 3; ++i) {
      if (t[i] <= lower[i] && jtr[i] > 0.0) free[i] = false;
    }
    if (!free[0] && !free[1] && !free[2]) return {t, cur, it, true};

    bool improved = false;
    while (lambda < 1e16) {
      Mat3 a = jtj;
      for (int i = 0; i < 3; ++i) a[i][i] += lambda * std::max(jtj[i][i], 1e-300);
      Vec3 neg{-jtr[0], -jtr[1], -jtr[2]};
      Vec3 step{};
      if (!solve(a, neg, free, step)) {
        lambda *= 10.0;
        continue;
      }
      const Vec3 cand = project({t[0] + step[0], t[1] + step[1], t[2] + step[2]});
      const double next = ssr(cand, obs);
      if (std::isfinite(next) && next <= cur) {
        bool small = true;
        for (int i = 0; i < 3; ++i) {
          if (std::abs(cand[i] - t[i]) > 1e-12 * (std::abs(t[i]) + 1e-9)) small = false;
        }
        const double drop = cur - next;
        t = cand;
        cur = next;
        lambda = std::max(lambda / 10.0, 1e-12);
        improved = true;
        if (small || drop <= 1e-15 * cur) return {t, cur, it, true};
        break;
      }
      lambda *= 10.0;
    }
    if (!improved) return {t, cur, it, true};  // no descent step exists at any damping
  }
  return {t, cur, kMaxIterations, false};
}

/// Per-k line through (m, y) gives slope k / D_k; D_k = a + b (k - 1) is then
/// linear in k - 1.
bool linear_start(const std::vector<Obs>& obs, Vec3& out) {
  std::map<double, std::vector<const Obs*>> by_k;
  for (const auto& o : obs) by_k[o.k].push_back(&o);
  std::vector<std::pair<double, double>> kd;
  double alpha_sum = 0.0;
  for (const auto& [k, pts] : by_k) {
    std::set<double> ms;
    double mx = 0.0;
    double my = 0.0;
    for (const auto* p : pts) {
      ms.insert(p->m);
      mx += p->m;
      my += p->y;
    }
    if (ms.size() < 2) continue;
    mx /= static_cast<double>(pts.size());
    my /= static_cast<double>(pts.size());
    double sxx = 0.0;
    double sxy = 0.0;
    for (const auto* p : pts) {
      sxx += (p->m - mx) * (p->m - mx);
      sxy += (p->m - mx) * (p->y - my);
    }
    const double slope = sxy / sxx;
    if (!(slope > 0.0)) continue;
    kd.emplace_back(k - 1.0, k / slope);
    alpha_sum += my - slope * mx;
  }
  if (kd.size() < 2) return false;
  double mx = 0.0;
  double my = 0.0;
  for (const auto& [x, y] : kd) {
    mx += x;
    my += y;
  }
  mx /= static_cast<double>(kd.size());
  my /= static_cast<double>(kd.size());
  double sxx = 0.0;
  double sxy = 0.0;
  for (const auto& [x, y] : kd) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
  }
  const double b = sxy / sxx;
  out = project({alpha_sum / static_cast<double>(kd.size()), my - b * mx, b});
  return true;
}

}  // namespace

double maxrate_residual(const MaxRateClassParams& p, std::span<const LatencySample> samples) {
  double s = 0.0;
  for (const auto& x : samples) {
    const double r = p.eval(x.k_pairs, static_cast<double>(x.message_size)) - x.latency_us;
    s += r * r;
  }
  return s;
}

MaxRateClassFit fit_maxrate_class(std::span<const LatencySample> samples, std::string_view label) {
  std::set<int> ks;
  std::set<std::size_t> ms;
  std::vector<Obs> obs;
  obs.reserve(samples.size());
  for (const auto& s : samples) {
    ks.insert(s.k_pairs);
    ms.insert(s.message_size);
    obs.push_back({static_cast<double>(s.k_pairs), static_cast<double>(s.message_size), s.latency_us});
  }
  if (ks.size() < 2 || ms.size() < 2) {
    throw FitError(fmt::format("{} class: need at least 2 distinct k and 2 distinct sizes, have {} and {}", label,
                               ks.size(), ms.size()));
  }

  std::vector<Vec3> starts;
  Vec3 lin{};
  if (linear_start(obs, lin)) starts.push_back(lin);
  double work = 0.0;
  double time = 0.0;
  double ymin = std::numeric_limits<double>::infinity();
  for (const auto& o : obs) {
    work += o.k * o.m;
    time += o.y;
    ymin = std::min(ymin, o.y);
  }
  const double scale = std::max(work / time, 1e-6);
  for (double alpha : {0.0, 0.5 * ymin}) {
    for (double a : {0.1, 0.3, 1.0, 3.0, 10.0}) {
      for (double b : {0.0, 0.1, 1.0}) starts.push_back({alpha, a * scale, b * a * scale});
    }
  }

  LmResult best{{}, std::numeric_limits<double>::infinity(), 0, false};
  double best_any = std::numeric_limits<double>::infinity();
  for (const auto& s : starts) {
    const LmResult r = levenberg_marquardt(s, obs);
    if (!std::isfinite(r.ssr)) continue;
    best_any = std::min(best_any, r.ssr);
    if (r.converged && r.ssr < best.ssr) best = r;
  }
  if (!std::isfinite(best.ssr)) {
    throw FitError(fmt::format("{} class: solver did not converge from any start; best residual {}", label, best_any));
  }
  return MaxRateClassFit{{best.theta[0], best.theta[1], best.theta[2]}, best.ssr, best.iterations};
}

MaxRateFit fit_maxrate(std::span<const LatencySample> samples) {
  std::vector<LatencySample> split[3];
  for (const auto& s : samples) split[static_cast<int>(size_class_of(s.message_size))].push_back(s);
  MaxRateFit fit;
  fit.small = fit_maxrate_class(split[0], "small");
  fit.moderate = fit_maxrate_class(split[1], "moderate");
  fit.large = fit_maxrate_class(split[2], "large");
  fit.params = {fit.small.params, fit.moderate.params, fit.large.params};
  return fit;
}

}  // namespace secmsg
