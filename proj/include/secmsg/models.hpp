#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "secmsg/benchmarks.hpp"
#include "secmsg/transport.hpp"

namespace secmsg {

// Units everywhere: microseconds and bytes. Predictions ignore the 28-byte
// frame expansion.

enum class Phase { Eager, Rendezvous };
std::string_view to_string(Phase p);

/// m < threshold is eager, m >= threshold is rendezvous.
Phase phase_of(std::size_t m, std::size_t threshold);

inline constexpr std::size_t kSmallClassMax = 256;
inline constexpr std::size_t kLargeClassMin = 32768;

enum class SizeClass { Small, Moderate, Large };
std::string_view to_string(SizeClass c);

/// SMALL m <= 256, MODERATE 256 < m < 32768, LARGE m >= 32768.
SizeClass size_class_of(std::size_t m);

/// T(x) = alpha + beta * x.
struct HockneyParams {
  double alpha = 0.0;
  double beta = 0.0;

  double eval(double x) const { return alpha + beta * x; }
};

struct PhasedHockneyParams {
  HockneyParams eager;
  HockneyParams rendezvous;
  std::size_t threshold = kDefaultPhaseThreshold;

  const HockneyParams& for_size(std::size_t m) const;
  /// Throws DomainError unless alpha, beta >= 0 and threshold > 0.
  void validate() const;
};

struct EncDecLineParams {
  double alpha = 0.0;
  double beta = 0.0;

  double eval(double m) const { return alpha + beta * m; }
};

/// Same shape as the communication model; each field is the sum of the
/// communication and encryption-decryption fields.
using EnhancedHockneyParams = PhasedHockneyParams;

/// T_enc(k, m) = alpha + k m / (a + b (k - 1)) for one size class.
struct MaxRateClassParams {
  double alpha = 0.0;
  double a = 1.0;
  double b = 0.0;

  double eval(int k, double m) const;
};

struct MaxRateParams {
  MaxRateClassParams small;
  MaxRateClassParams moderate;
  MaxRateClassParams large;

  const MaxRateClassParams& for_class(SizeClass c) const;
  MaxRateClassParams& for_class(SizeClass c);
};

/// A predicted latency with the phase and size class that produced it.
struct Prediction {
  double latency_us = 0.0;
  Phase phase = Phase::Eager;
  SizeClass size_class = SizeClass::Small;
};

// ---- fitting -------------------------------------------------------------

struct HockneyFit {
  PhasedHockneyParams params;
  bool eager_fallback = false;
  bool rendezvous_fallback = false;
};

/// Ordinary least squares of latency on x = k * m, one line per phase (phase
/// picked by m). A negative intercept is replaced by the mean latency of the
/// 1-byte, k = 1 samples and the slope is refit through that intercept. A
/// negative slope is clamped to 0 with alpha = mean latency.
/// Throws FitError naming the phase when it has fewer than 2 distinct sizes,
/// or when the fallback is needed and no 1-byte sample exists.
HockneyFit fit_hockney(std::span<const LatencySample> samples, std::size_t threshold = kDefaultPhaseThreshold);

struct EncDecFit {
  EncDecLineParams params;
  bool fallback = false;
};

/// Single-phase variant of fit_hockney on the k = 1 samples only.
EncDecFit fit_encdec_line(std::span<const LatencySample> samples);

struct MaxRateClassFit {
  MaxRateClassParams params;
  double residual = 0.0;  // sum of squared residuals
  int iterations = 0;
};

struct MaxRateFit {
  MaxRateParams params;
  MaxRateClassFit small;
  MaxRateClassFit moderate;
  MaxRateClassFit large;
};

/// Sum of squared residuals of `p` over `samples`.
double maxrate_residual(const MaxRateClassParams& p, std::span<const LatencySample> samples);

/// Constrained nonlinear least squares (alpha >= 0, a > 0, b >= 0) over one
/// class's samples. Throws FitError with `label` when the data has fewer than
/// 2 distinct k or m, or when no start converges.
MaxRateClassFit fit_maxrate_class(std::span<const LatencySample> samples, std::string_view label = "class");

/// Splits samples by size class and fits each one.
MaxRateFit fit_maxrate(std::span<const LatencySample> samples);

// ---- composition and prediction -----------------------------------------

EnhancedHockneyParams compose_enhanced(const PhasedHockneyParams& comm, const EncDecLineParams& enc);

/// alpha + beta * m with the phase chosen by m.
Prediction predict_single(const PhasedHockneyParams& params, std::size_t m);

/// Communication time of k concurrent pairs: alpha + beta * k * m.
Prediction predict_comm(const PhasedHockneyParams& comm, int k, std::size_t m);

/// Max-rate evaluation with the class chosen by m.
double eval_maxrate(const MaxRateParams& p, int k, std::size_t m);

/// max{T_enc / 2, T_comm} + T_enc / 2 per 64-message window.
Prediction predict_multipair(const PhasedHockneyParams& comm, const MaxRateParams& enc, int k, std::size_t m);

/// Large-message throughput overhead beta_enc / beta_comm.
double overhead_single_large(const EncDecLineParams& enc, const HockneyParams& comm);

struct RegimeRatio {
  double ratio = 0.0;
  /// T_comm(k, m) >= T_enc(k, m) / 2 holds for the queried point.
  bool in_regime = false;
};

/// 1 / (2 beta_comm (a + (k - 1) b)), valid while communication dominates.
RegimeRatio overhead_multipair_slow(const HockneyParams& comm, const MaxRateClassParams& enc, int k, std::size_t m);

/// max{T_comm(m), T_enc(m)} for a transport that overlaps encryption with
/// transfer.
Prediction predict_pipelined(const PhasedHockneyParams& comm, const EncDecLineParams& enc, std::size_t m);

/// predict_pipelined / T_comm - 1.
double pipelined_overhead(const PhasedHockneyParams& comm, const EncDecLineParams& enc, std::size_t m);

// ---- validation ----------------------------------------------------------

/// (message size, k).
using SampleKey = std::pair<std::size_t, int>;
using LatencyTable = std::map<SampleKey, double>;

/// Mean latency per (size, k).
LatencyTable mean_latencies(std::span<const LatencySample> samples);

struct PredictionRow {
  std::size_t size = 0;
  int k = 1;
  double predicted = 0.0;
  double measured = 0.0;
  double relative_error = 0.0;  // |measured - predicted| / measured
};

struct SizeSummary {
  std::size_t size = 0;
  std::size_t keys = 0;
  double mape = 0.0;  // mean of relative errors, as a fraction
};

struct PredictionReport {
  std::vector<PredictionRow> rows;
  std::vector<SizeSummary> per_size;
  double overall_mape = 0.0;
  std::vector<SampleKey> missing_prediction;
  std::vector<SampleKey> missing_measurement;
};

/// Joins the two tables on (size, k). Unmatched keys are listed, not fatal.
PredictionReport validate(const LatencyTable& measured, const LatencyTable& predicted);

}  // namespace secmsg
