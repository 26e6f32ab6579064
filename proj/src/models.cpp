#include "secmsg/models.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "secmsg/error.hpp"

namespace secmsg {

std::string_view to_string(Phase p) { return p == Phase::Eager ? "eager" : "rendezvous"; }

Phase phase_of(std::size_t m, std::size_t threshold) { return m < threshold ? Phase::Eager : Phase::Rendezvous; }

std::string_view to_string(SizeClass c) {
  switch (c) {
    case SizeClass::Small:
      return "small";
    case SizeClass::Moderate:
      return "moderate";
    case SizeClass::Large:
      return "large";
  }
  return "unknown";
}

SizeClass size_class_of(std::size_t m) {
  if (m <= kSmallClassMax) return SizeClass::Small;
  if (m < kLargeClassMin) return SizeClass::Moderate;
  return SizeClass::Large;
}

const HockneyParams& PhasedHockneyParams::for_size(std::size_t m) const {
  return phase_of(m, threshold) == Phase::Eager ? eager : rendezvous;
}

void PhasedHockneyParams::validate() const {
  if (threshold == 0) throw DomainError("phase threshold must be positive");
  for (const auto* h : {&eager, &rendezvous}) {
    if (!(h->alpha >= 0.0) || !(h->beta >= 0.0)) {
      throw DomainError(fmt::format("Hockney parameters must be non-negative, got alpha={} beta={}", h->alpha, h->beta));
    }
  }
}

double MaxRateClassParams::eval(int k, double m) const {
  if (k < 1) throw DomainError("max-rate model needs k >= 1");
  return alpha + static_cast<double>(k) * m / (a + b * static_cast<double>(k - 1));
}

const MaxRateClassParams& MaxRateParams::for_class(SizeClass c) const {
  switch (c) {
    case SizeClass::Small:
      return small;
    case SizeClass::Moderate:
      return moderate;
    case SizeClass::Large:
      break;
  }
  return large;
}

MaxRateClassParams& MaxRateParams::for_class(SizeClass c) {
  return const_cast<MaxRateClassParams&>(std::as_const(*this).for_class(c));
}

namespace {

struct Point {
  double x;
  double y;
};

struct LineResult {
  HockneyParams params;
  bool fallback = false;
};

/// OLS with the negative-intercept fallback. `one_byte` holds the 1-byte
/// latencies used as the replacement intercept.
LineResult fit_line(const std::vector<Point>& pts, std::span<const double> one_byte, std::string_view label) {
  std::set<double> distinct;
  for (const auto& p : pts) distinct.insert(p.x);
  if (distinct.size() < 2) {
    throw FitError(fmt::format("{}: need at least 2 distinct message sizes, have {}", label, distinct.size()));
  }
  const double n = static_cast<double>(pts.size());
  double mx = 0.0;
  double my = 0.0;
  for (const auto& p : pts) {
    mx += p.x;
    my += p.y;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0;
  double sxy = 0.0;
  for (const auto& p : pts) {
    sxx += (p.x - mx) * (p.x - mx);
    sxy += (p.x - mx) * (p.y - my);
  }
  LineResult r;
  r.params.beta = sxy / sxx;
  r.params.alpha = my - r.params.beta * mx;

  if (r.params.alpha < 0.0) {
    if (one_byte.empty()) {
      throw FitError(fmt::format("{}: fitted alpha {} is negative and no 1-byte sample exists for the fallback", label,
                                 r.params.alpha));
    }
    double a = 0.0;
    for (double v : one_byte) a += v;
    a /= static_cast<double>(one_byte.size());
    double num = 0.0;
    double den = 0.0;
    for (const auto& p : pts) {
      num += p.x * (p.y - a);
      den += p.x * p.x;
    }
    r.params.alpha = a;
    r.params.beta = den > 0.0 ? num / den : 0.0;
    r.fallback = true;
  }
  // Constrained optimum when the slope would go negative.
  if (r.params.beta < 0.0) {
    r.params.beta = 0.0;
    if (!r.fallback) r.params.alpha = my;
  }
  return r;
}

std::vector<double> one_byte_latencies(std::span<const LatencySample> samples) {
  std::vector<double> out;
  for (const auto& s : samples) {
    if (s.message_size == 1 && s.k_pairs == 1) out.push_back(s.latency_us);
  }
  return out;
}

}  // namespace

HockneyFit fit_hockney(std::span<const LatencySample> samples, std::size_t threshold) {
  if (threshold == 0) throw DomainError("phase threshold must be positive");
  std::vector<Point> eager;
  std::vector<Point> rndv;
  for (const auto& s : samples) {
    const Point p{static_cast<double>(s.k_pairs) * static_cast<double>(s.message_size), s.latency_us};
    (phase_of(s.message_size, threshold) == Phase::Eager ? eager : rndv).push_back(p);
  }
  const auto ones = one_byte_latencies(samples);
  const auto e = fit_line(eager, ones, "eager phase");
  const auto r = fit_line(rndv, ones, "rendezvous phase");
  HockneyFit fit;
  fit.params.eager = e.params;
  fit.params.rendezvous = r.params;
  fit.params.threshold = threshold;
  fit.eager_fallback = e.fallback;
  fit.rendezvous_fallback = r.fallback;
  return fit;
}

EncDecFit fit_encdec_line(std::span<const LatencySample> samples) {
  std::vector<Point> pts;
  for (const auto& s : samples) {
    if (s.k_pairs == 1) pts.push_back({static_cast<double>(s.message_size), s.latency_us});
  }
  const auto r = fit_line(pts, one_byte_latencies(samples), "encryption-decryption line");
  return EncDecFit{{r.params.alpha, r.params.beta}, r.fallback};
}

EnhancedHockneyParams compose_enhanced(const PhasedHockneyParams& comm, const EncDecLineParams& enc) {
  EnhancedHockneyParams out = comm;
  out.eager.alpha = comm.eager.alpha + enc.alpha;
  out.eager.beta = comm.eager.beta + enc.beta;
  out.rendezvous.alpha = comm.rendezvous.alpha + enc.alpha;
  out.rendezvous.beta = comm.rendezvous.beta + enc.beta;
  return out;
}

Prediction predict_single(const PhasedHockneyParams& params, std::size_t m) { return predict_comm(params, 1, m); }

Prediction predict_comm(const PhasedHockneyParams& comm, int k, std::size_t m) {
  if (k < 1) throw DomainError("pair count must be >= 1");
  Prediction p;
  p.phase = phase_of(m, comm.threshold);
  p.size_class = size_class_of(m);
  p.latency_us = comm.for_size(m).eval(static_cast<double>(k) * static_cast<double>(m));
  return p;
}

double eval_maxrate(const MaxRateParams& p, int k, std::size_t m) {
  return p.for_class(size_class_of(m)).eval(k, static_cast<double>(m));
}

Prediction predict_multipair(const PhasedHockneyParams& comm, const MaxRateParams& enc, int k, std::size_t m) {
  Prediction p = predict_comm(comm, k, m);
  const double half_enc = eval_maxrate(enc, k, m) / 2.0;
  p.latency_us = std::max(half_enc, p.latency_us) + half_enc;
  return p;
}

double overhead_single_large(const EncDecLineParams& enc, const HockneyParams& comm) {
  if (!(comm.beta > 0.0)) throw DomainError("overhead needs beta_comm > 0");
  return enc.beta / comm.beta;
}

RegimeRatio overhead_multipair_slow(const HockneyParams& comm, const MaxRateClassParams& enc, int k, std::size_t m) {
  if (!(comm.beta > 0.0)) throw DomainError("overhead needs beta_comm > 0");
  if (k < 1) throw DomainError("pair count must be >= 1");
  const double rate = enc.a + static_cast<double>(k - 1) * enc.b;
  RegimeRatio r;
  r.ratio = 1.0 / (2.0 * comm.beta * rate);
  const double t_comm = comm.eval(static_cast<double>(k) * static_cast<double>(m));
  r.in_regime = t_comm >= enc.eval(k, static_cast<double>(m)) / 2.0;
  return r;
}

Prediction predict_pipelined(const PhasedHockneyParams& comm, const EncDecLineParams& enc, std::size_t m) {
  Prediction p = predict_single(comm, m);
  p.latency_us = std::max(p.latency_us, enc.eval(static_cast<double>(m)));
  return p;
}

double pipelined_overhead(const PhasedHockneyParams& comm, const EncDecLineParams& enc, std::size_t m) {
  const double t_comm = predict_single(comm, m).latency_us;
  if (!(t_comm > 0.0)) throw DomainError("pipelined overhead needs T_comm > 0");
  return predict_pipelined(comm, enc, m).latency_us / t_comm - 1.0;
}

LatencyTable mean_latencies(std::span<const LatencySample> samples) {
  std::map<SampleKey, std::pair<double, std::size_t>> acc;
  for (const auto& s : samples) {
    auto& [sum, n] = acc[{s.message_size, s.k_pairs}];
    sum += s.latency_us;
    ++n;
  }
  LatencyTable out;
  for (const auto& [key, v] : acc) out[key] = v.first / static_cast<double>(v.second);
  return out;
}

PredictionReport validate(const LatencyTable& measured, const LatencyTable& predicted) {
  PredictionReport rep;
  std::map<std::size_t, std::pair<double, std::size_t>> by_size;
  double total = 0.0;
  for (const auto& [key, meas] : measured) {
    const auto it = predicted.find(key);
    if (it == predicted.end()) {
      rep.missing_prediction.push_back(key);
      continue;
    }
    if (!(meas > 0.0)) throw DomainError("measured latencies must be positive");
    PredictionRow row{key.first, key.second, it->second, meas, std::abs(meas - it->second) / meas};
    rep.rows.push_back(row);
    auto& [sum, n] = by_size[key.first];
    sum += row.relative_error;
    ++n;
    total += row.relative_error;
  }
  for (const auto& [key, pred] : predicted) {
    if (!measured.contains(key)) rep.missing_measurement.push_back(key);
  }
  for (const auto& [size, v] : by_size) {
    rep.per_size.push_back(SizeSummary{size, v.second, v.first / static_cast<double>(v.second)});
  }
  if (!rep.rows.empty()) rep.overall_mape = total / static_cast<double>(rep.rows.size());
  return rep;
}

}  // namespace secmsg
