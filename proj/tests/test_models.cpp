#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include <fmt/format.h>

#include "secmsg/error.hpp"
#include "secmsg/models.hpp"
#include "secmsg/params_io.hpp"

using namespace secmsg;

namespace {

std::vector<std::size_t> powers_of_two(std::size_t lo, std::size_t hi) {
  std::vector<std::size_t> out;
  for (std::size_t m = lo; m <= hi; m *= 2) out.push_back(m);
  return out;
}

/// Samples y = f(k, m) * (1 + noise * N(0, 1)), `runs` per (k, m).
template <class F>
std::vector<LatencySample> synth(F f, const std::vector<std::size_t>& sizes, const std::vector<int>& ks, int runs,
                                 double noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<LatencySample> out;
  for (std::size_t m : sizes) {
    for (int k : ks) {
      for (int r = 0; r < runs; ++r) {
        const double y = f(k, static_cast<double>(m)) * (noise > 0 ? 1.0 + noise * z(rng) : 1.0);
        out.push_back({m, k, r, y});
      }
    }
  }
  return out;
}

double rel(double got, double want) { return std::abs(got - want) / std::abs(want); }

/// Exhaustive coarse grid over (alpha, A, B): alpha in 20 even steps over
/// [0, min y], A in 40 log steps over [1, 1e5], B in {0} plus 39 log steps
/// over [1, 1e5].
double grid_residual(const std::vector<LatencySample>& s) {
  double ymin = std::numeric_limits<double>::infinity();
  for (const auto& x : s) ymin = std::min(ymin, x.latency_us);
  std::vector<double> as;
  std::vector<double> bs{0.0};
  for (int i = 0; i < 40; ++i) as.push_back(std::pow(10.0, 5.0 * i / 39.0));
  for (int i = 0; i < 39; ++i) bs.push_back(std::pow(10.0, 5.0 * i / 38.0));
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 20; ++i) {
    const double alpha = ymin * i / 19.0;
    for (double a : as) {
      for (double b : bs) {
        double r = 0;
        for (const auto& x : s) {
          const double pred = alpha + x.k_pairs * static_cast<double>(x.message_size) / (a + b * (x.k_pairs - 1));
          r += (x.latency_us - pred) * (x.latency_us - pred);
        }
        best = std::min(best, r);
      }
    }
  }
  return best;
}

const std::vector<int> kKs{1, 2, 4, 8};

std::vector<std::size_t> class_sizes(SizeClass c) {
  switch (c) {
    case SizeClass::Small:
      return powers_of_two(1, 256);
    case SizeClass::Moderate:
      return powers_of_two(512, 16384);
    case SizeClass::Large:
      break;
  }
  return powers_of_two(32768, 2097152);
}

}  // namespace

TEST_SUITE("models") {
  TEST_CASE("phase and class boundaries") {
    CHECK(phase_of(131071, 131072) == Phase::Eager);
    CHECK(phase_of(131072, 131072) == Phase::Rendezvous);
    CHECK(size_class_of(256) == SizeClass::Small);
    CHECK(size_class_of(257) == SizeClass::Moderate);
    CHECK(size_class_of(32767) == SizeClass::Moderate);
    CHECK(size_class_of(32768) == SizeClass::Large);
    CHECK(size_class_of(0) == SizeClass::Small);
  }

  TEST_CASE("exact line recovery") {
    const auto s = synth([](int, double m) { return 10.0 + 0.001 * m; }, powers_of_two(1, 1048576), {1}, 3, 0, 0);
    const auto fit = fit_hockney(s);
    CHECK(rel(fit.params.eager.alpha, 10.0) <= 1e-9);
    CHECK(rel(fit.params.eager.beta, 0.001) <= 1e-9);
    CHECK(rel(fit.params.rendezvous.alpha, 10.0) <= 1e-9);
    CHECK(rel(fit.params.rendezvous.beta, 0.001) <= 1e-9);
    CHECK_FALSE(fit.eager_fallback);
    const auto enc = fit_encdec_line(s);
    CHECK(rel(enc.params.alpha, 10.0) <= 1e-9);
    CHECK(rel(enc.params.beta, 0.001) <= 1e-9);
  }

  TEST_CASE("Hockney regression uses x = k * m") {
    const auto s = synth([](int k, double m) { return 2.0 + 3e-4 * k * m; }, powers_of_two(1024, 524288), {1, 2, 4}, 1,
                         0, 0);
    const auto fit = fit_hockney(s);
    CHECK(rel(fit.params.eager.alpha, 2.0) <= 1e-9);
    CHECK(rel(fit.params.eager.beta, 3e-4) <= 1e-9);
    CHECK(rel(fit.params.rendezvous.beta, 3e-4) <= 1e-9);
  }

  TEST_CASE("negative intercept falls back to the 1-byte mean") {
    std::vector<LatencySample> s{{1, 1, 0, 0.8}};
    for (std::size_t m : {8192, 16384, 32768, 65536}) s.push_back({m, 1, 0, -5.0 + 0.001 * static_cast<double>(m)});
    const std::size_t eager_points = s.size();
    for (std::size_t m : {262144, 524288}) s.push_back({m, 1, 0, 1.0 + 0.001 * static_cast<double>(m)});
    // Closed-form oracles over the eager points: the OLS intercept is
    // negative, and the slope through a fixed intercept a is
    // sum x (y - a) / sum x^2.
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& p : std::span(s).first(eager_points)) {
      const double x = static_cast<double>(p.message_size);
      sx += x, sy += p.latency_us, sxx += x * x, sxy += x * p.latency_us;
    }
    const double n = static_cast<double>(eager_points);
    const double ols_beta = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    REQUIRE((sy - ols_beta * sx) / n < 0.0);
    const double want_beta = (sxy - 0.8 * sx) / sxx;

    const auto fit = fit_hockney(s);
    CHECK(fit.eager_fallback);
    CHECK(fit.params.eager.alpha == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(fit.params.eager.beta == doctest::Approx(want_beta).epsilon(1e-12));
    CHECK_FALSE(fit.rendezvous_fallback);
    CHECK(fit.params.rendezvous.alpha == doctest::Approx(1.0));
    const auto enc = fit_encdec_line(std::span(s).first(eager_points));
    CHECK(enc.fallback);
    CHECK(enc.params.alpha == doctest::Approx(0.8).epsilon(1e-12));
  }

  TEST_CASE("fit errors name the deficient phase") {
    std::vector<LatencySample> one_size{{1024, 1, 0, 3.0}, {1024, 1, 1, 3.1}};
    CHECK_THROWS_WITH_AS(fit_hockney(one_size), doctest::Contains("eager"), FitError);
    std::vector<LatencySample> no_rndv{{1, 1, 0, 3.0}, {1024, 1, 0, 4.0}};
    CHECK_THROWS_WITH_AS(fit_hockney(no_rndv), doctest::Contains("rendezvous"), FitError);
    std::vector<LatencySample> negative;
    for (std::size_t m : {8192, 65536}) negative.push_back({m, 1, 0, -5.0 + 0.001 * static_cast<double>(m)});
    CHECK_THROWS_AS(fit_encdec_line(negative), FitError);
  }

  TEST_CASE("constant encryption timings give beta 0 and alpha the mean") {
    std::vector<LatencySample> s;
    for (std::size_t m : {1, 64, 4096}) s.push_back({m, 1, 0, 2.5});
    const auto enc = fit_encdec_line(s);
    CHECK(enc.params.beta == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(enc.params.alpha == doctest::Approx(2.5));
  }

  TEST_CASE("5% noise around published lines is recovered within 10%") {
    const HockneyParams ib = hockney_infiniband().eager;
    const auto s = synth([&](int, double m) { return ib.eval(m); }, powers_of_two(1, 65536), {1}, 200, 0.05, 31);
    const auto r = synth([&](int, double m) { return hockney_infiniband().rendezvous.eval(m); },
                         powers_of_two(131072, 1048576), {1}, 10, 0.05, 33);
    std::vector<LatencySample> both = s;
    both.insert(both.end(), r.begin(), r.end());
    const auto fit = fit_hockney(both);
    CHECK(rel(fit.params.eager.alpha, ib.alpha) <= 0.10);
    CHECK(rel(fit.params.eager.beta, ib.beta) <= 0.10);

    const auto sodium = encdec_library("libsodium");
    const auto e = synth([&](int, double m) { return sodium.eval(m); }, powers_of_two(1, 4096), {1}, 500, 0.05, 32);
    const auto efit = fit_encdec_line(e);
    CHECK(rel(efit.params.alpha, sodium.alpha) <= 0.10);
    CHECK(rel(efit.params.beta, sodium.beta) <= 0.10);
  }

  TEST_CASE("composition is exact addition") {
    const auto enh = compose_enhanced(hockney_infiniband(), encdec_library("boringssl"));
    CHECK(enh.eager.alpha == 3.40 + 0.53);
    CHECK(enh.eager.beta == 3.83e-4 + 6.90e-4);
    CHECK(fmt::format("{:.2f}", enh.eager.alpha) == "3.93");
    CHECK(fmt::format("{:.2f}", enh.eager.beta * 1e4) == "10.73");
    CHECK(enh.rendezvous.alpha == 7.17 + 0.53);
    CHECK(enh.threshold == hockney_infiniband().threshold);

    const auto same = compose_enhanced(hockney_ethernet(), EncDecLineParams{});
    CHECK(same.eager.alpha == hockney_ethernet().eager.alpha);
    CHECK(same.rendezvous.beta == hockney_ethernet().rendezvous.beta);

    // Swapping roles: the eager line of the communication side becomes the
    // encryption line and vice versa.
    const PhasedHockneyParams as_comm{{0.53, 6.90e-4}, {0.53, 6.90e-4}, kDefaultPhaseThreshold};
    const auto swapped = compose_enhanced(as_comm, EncDecLineParams{3.40, 3.83e-4});
    CHECK(swapped.eager.alpha == enh.eager.alpha);
    CHECK(swapped.eager.beta == enh.eager.beta);
  }

  TEST_CASE("single-pair prediction") {
    const auto enh = compose_enhanced(hockney_infiniband(), encdec_library("boringssl"));
    CHECK(predict_single(enh, 0).latency_us == enh.eager.alpha);
    CHECK(predict_single(enh, 1024).latency_us == doctest::Approx(3.93 + 10.73e-4 * 1024).epsilon(1e-12));
    CHECK(predict_single(enh, 1024).latency_us == doctest::Approx(5.029).epsilon(1e-3));
    const auto at = predict_single(enh, kDefaultPhaseThreshold);
    CHECK(at.phase == Phase::Rendezvous);
    CHECK(at.latency_us == enh.rendezvous.alpha + enh.rendezvous.beta * kDefaultPhaseThreshold);
  }

  TEST_CASE("monotonicity within a phase and a class") {
    const auto h = hockney_ethernet();
    const auto mr = maxrate_boringssl();
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<std::size_t> pick(0, 4 * 1048576);
    for (int i = 0; i < 2000; ++i) {
      std::size_t a = pick(rng);
      std::size_t b = pick(rng);
      if (a > b) std::swap(a, b);
      if (phase_of(a, h.threshold) == phase_of(b, h.threshold)) {
        CHECK(predict_single(h, a).latency_us <= predict_single(h, b).latency_us);
      }
      if (size_class_of(a) == size_class_of(b)) {
        for (int k : kKs) CHECK(eval_maxrate(mr, k, a) <= eval_maxrate(mr, k, b));
      }
    }
    // With B > 0 the per-message encryption time shrinks as threads are added.
    for (SizeClass c : {SizeClass::Moderate, SizeClass::Large}) {
      const auto& p = mr.for_class(c);
      REQUIRE(p.b > 0);
      const double m = static_cast<double>(class_sizes(c).back());
      for (int k = 1; k < 16; ++k) CHECK((p.eval(k + 1, m) - p.alpha) / (k + 1) <= (p.eval(k, m) - p.alpha) / k);
    }
  }

  TEST_CASE("class selection ignores k") {
    const auto mr = maxrate_boringssl();
    for (std::size_t m : {100, 1000, 100000}) {
      for (int k : kKs) {
        CHECK(eval_maxrate(mr, k, m) == mr.for_class(size_class_of(m)).eval(k, static_cast<double>(m)));
      }
    }
  }

  TEST_CASE("max-rate evaluation") {
    const auto mr = maxrate_boringssl();
    CHECK(eval_maxrate(mr, 1, 4096) == doctest::Approx(2.66 + 4096.0 / 1764.0));
    CHECK(eval_maxrate(mr, 3, 0) == 1.8);
    // 1502.21 + 7 * 1262.59 = 10340.34; 8 * 2 MiB = 16777216.
    CHECK(eval_maxrate(mr, 8, 2097152) == doctest::Approx(3.44 + 16777216.0 / 10340.34).epsilon(1e-12));
    CHECK(std::abs(eval_maxrate(mr, 8, 2097152) - 1626.0) <= 0.5);
  }

  TEST_CASE("multi-pair prediction") {
    const auto comm = hockney_infiniband_multipair();
    const auto mr = maxrate_boringssl();
    const double te = 3.44 + 16777216.0 / 10340.34;
    const double tc = 2.38 + 2.78e-4 * 8 * 2097152;
    const auto p = predict_multipair(comm, mr, 8, 2097152);
    CHECK(p.latency_us == doctest::Approx(std::max(te / 2, tc) + te / 2).epsilon(1e-12));
    CHECK(std::abs(p.latency_us - 5479.7) <= 1.0);
    CHECK(p.phase == Phase::Rendezvous);
    CHECK(p.size_class == SizeClass::Large);

    MaxRateParams free;
    for (SizeClass c : {SizeClass::Small, SizeClass::Moderate, SizeClass::Large}) {
      free.for_class(c) = {0.0, std::numeric_limits<double>::infinity(), 0.0};
    }
    CHECK(predict_multipair(comm, free, 4, 5000).latency_us == predict_comm(comm, 4, 5000).latency_us);

    for (std::size_t m : {100, 5000, 200000}) {
      const double te1 = eval_maxrate(mr, 1, m);
      CHECK(predict_multipair(comm, mr, 1, m).latency_us ==
            doctest::Approx(std::max(te1 / 2, predict_single(comm, m).latency_us) + te1 / 2));
    }
  }

  TEST_CASE("large-message overhead") {
    const auto boring = encdec_library("boringssl");
    CHECK(overhead_single_large(boring, hockney_infiniband().rendezvous) == 6.90e-4 / 3.12e-4);
    CHECK(std::lround(100 * overhead_single_large(boring, hockney_infiniband().rendezvous)) == 221);
    CHECK(std::lround(100 * overhead_single_large(boring, hockney_ethernet_multipair().rendezvous)) == 86);
    CHECK(overhead_single_large({0.5, 0.0}, hockney_ethernet().rendezvous) == 0.0);
    CHECK_THROWS_AS(overhead_single_large(boring, {1.0, 0.0}), DomainError);
  }

  TEST_CASE("multi-pair communication-bound overhead") {
    const auto large = maxrate_boringssl().large;
    const HockneyParams eth{16.35, 8e-4};
    const auto r = overhead_multipair_slow(eth, large, 8, 2097152);
    CHECK(r.ratio == doctest::Approx(1.0 / (2 * 8e-4 * 10340.34)).epsilon(1e-12));
    CHECK(r.ratio == doctest::Approx(0.0604).epsilon(1e-3));
    CHECK(r.in_regime);
    const HockneyParams twice{16.35, 16e-4};
    CHECK(overhead_multipair_slow(twice, large, 8, 2097152).ratio == doctest::Approx(r.ratio / 2));
    const MaxRateClassParams flat{1.0, 900.0, 0.0};
    CHECK(overhead_multipair_slow(eth, flat, 1, 4096).ratio == overhead_multipair_slow(eth, flat, 8, 4096).ratio);
    // A fast network leaves the communication-bound regime.
    const HockneyParams fast{1.0, 1e-6};
    CHECK_FALSE(overhead_multipair_slow(fast, large, 8, 2097152).in_regime);
  }

  TEST_CASE("pipelined prediction") {
    const auto boring = encdec_library("boringssl");
    const auto ib = hockney_infiniband();
    const double ov = pipelined_overhead(ib, boring, 2097152);
    CHECK(ov >= 1.15);
    CHECK(ov <= 1.25);
    // Encryption hides behind a slower link entirely.
    const auto eth = hockney_ethernet();
    CHECK(predict_pipelined(eth, boring, 2097152).latency_us == predict_single(eth, 2097152).latency_us);
    CHECK(pipelined_overhead(eth, boring, 2097152) == 0.0);
    const PhasedHockneyParams same{{0.53, 6.90e-4}, {0.53, 6.90e-4}, kDefaultPhaseThreshold};
    CHECK(predict_pipelined(same, boring, 4096).latency_us == boring.eval(4096));
  }

  TEST_CASE("max-rate noiseless recovery for every class") {
    const auto truth = maxrate_boringssl();
    for (SizeClass c : {SizeClass::Small, SizeClass::Moderate, SizeClass::Large}) {
      const auto& p = truth.for_class(c);
      const auto s = synth([&](int k, double m) { return p.eval(k, m); }, class_sizes(c), kKs, 1, 0, 0);
      const auto fit = fit_maxrate_class(s, to_string(c));
      CAPTURE(to_string(c));
      CHECK(rel(fit.params.alpha, p.alpha) <= 1e-4);
      CHECK(rel(fit.params.a, p.a) <= 1e-4);
      if (p.b == 0.0) {
        CHECK(fit.params.b <= 1e-3 * fit.params.a);
      } else {
        CHECK(rel(fit.params.b, p.b) <= 1e-4);
      }
    }
  }

  TEST_CASE("fit_maxrate splits by class") {
    const auto truth = maxrate_boringssl();
    std::vector<LatencySample> all;
    for (SizeClass c : {SizeClass::Small, SizeClass::Moderate, SizeClass::Large}) {
      const auto s = synth([&](int k, double m) { return truth.for_class(c).eval(k, m); }, class_sizes(c), kKs, 1, 0, 0);
      all.insert(all.end(), s.begin(), s.end());
    }
    const auto fit = fit_maxrate(all);
    CHECK(rel(fit.params.moderate.b, 4135.0) <= 1e-4);
    CHECK(rel(fit.params.large.a, 1502.21) <= 1e-4);
  }

  TEST_CASE("B = 0 data keeps B near zero") {
    const MaxRateClassParams p{2.0, 1200.0, 0.0};
    const auto s = synth([&](int k, double m) { return p.eval(k, m); }, powers_of_two(512, 16384), kKs, 1, 0, 0);
    const auto fit = fit_maxrate_class(s);
    CHECK(fit.params.b <= 1e-3 * fit.params.a);
  }

  TEST_CASE("max-rate residual within 1.05x of the grid oracle") {
    const auto truth = maxrate_boringssl();
    std::uint64_t seed = 40;
    for (SizeClass c : {SizeClass::Small, SizeClass::Moderate, SizeClass::Large}) {
      for (double noise : {0.0, 0.05}) {
        const auto& p = truth.for_class(c);
        const auto s = synth([&](int k, double m) { return p.eval(k, m); }, class_sizes(c), kKs, 3, noise, ++seed);
        const auto fit = fit_maxrate_class(s);
        CAPTURE(to_string(c));
        CAPTURE(noise);
        CHECK(fit.residual == doctest::Approx(maxrate_residual(fit.params, s)));
        CHECK(fit.residual <= 1.05 * grid_residual(s));
      }
    }
  }

  TEST_CASE("max-rate data with a single k is rejected") {
    const auto s = synth([](int k, double m) { return 1.0 + k * m / 1000.0; }, powers_of_two(512, 4096), {1}, 1, 0, 0);
    CHECK_THROWS_WITH_AS(fit_maxrate_class(s, "moderate"), doctest::Contains("moderate"), FitError);
  }

  TEST_CASE("validation report") {
    const LatencyTable measured{{{1, 1}, 10.0}, {{2, 1}, 20.0}, {{2, 2}, 40.0}};
    auto r = validate(measured, measured);
    for (const auto& row : r.rows) CHECK(row.relative_error == 0.0);
    CHECK(r.overall_mape == 0.0);

    LatencyTable doubled;
    for (const auto& [k, v] : measured) doubled[k] = 2 * v;
    r = validate(measured, doubled);
    for (const auto& row : r.rows) CHECK(row.relative_error == doctest::Approx(1.0));

    // Errors 1/10, 5/20, 0/40: overall (0.1 + 0.25 + 0) / 3, size 2 (0.25 + 0) / 2.
    const LatencyTable mixed{{{1, 1}, 11.0}, {{2, 1}, 15.0}, {{2, 2}, 40.0}};
    r = validate(measured, mixed);
    CHECK(r.overall_mape == doctest::Approx(0.35 / 3));
    REQUIRE(r.per_size.size() == 2);
    CHECK(r.per_size[0].mape == doctest::Approx(0.1));
    CHECK(r.per_size[1].mape == doctest::Approx(0.125));
    CHECK(r.per_size[1].keys == 2);

    LatencyTable partial = mixed;
    partial.erase({2, 2});
    partial[{4, 1}] = 1.0;
    r = validate(measured, partial);
    CHECK(r.rows.size() == 2);
    CHECK(r.missing_prediction == std::vector<SampleKey>{{2, 2}});
    CHECK(r.missing_measurement == std::vector<SampleKey>{{4, 1}});
  }

  TEST_CASE("mean latencies per key") {
    const std::vector<LatencySample> s{{8, 1, 0, 1.0}, {8, 1, 1, 3.0}, {8, 2, 0, 5.0}};
    const auto t = mean_latencies(s);
    CHECK(t.at({8, 1}) == 2.0);
    CHECK(t.at({8, 2}) == 5.0);
  }
}

TEST_SUITE("params") {
  TEST_CASE("published tables") {
    CHECK(hockney_ethernet().eager.alpha == 32.74);
    CHECK(hockney_ethernet().eager.beta == 23.7e-4);
    CHECK(hockney_ethernet().rendezvous.alpha == 117.30);
    CHECK(hockney_ethernet().rendezvous.beta == 8.63e-4);
    CHECK(hockney_infiniband().eager.alpha == 3.40);
    CHECK(hockney_infiniband().eager.beta == 3.83e-4);
    CHECK(hockney_infiniband().rendezvous.alpha == 7.17);
    CHECK(hockney_infiniband().rendezvous.beta == 3.12e-4);
    CHECK(hockney_ethernet_multipair().eager.alpha == 3.84);
    CHECK(hockney_ethernet_multipair().eager.beta == 8.11e-4);
    CHECK(hockney_ethernet_multipair().rendezvous.alpha == 16.35);
    CHECK(hockney_ethernet_multipair().rendezvous.beta == 8e-4);
    CHECK(hockney_infiniband_multipair().eager.alpha == 1.02);
    CHECK(hockney_infiniband_multipair().eager.beta == 2.88e-4);
    CHECK(hockney_infiniband_multipair().rendezvous.alpha == 2.38);
    CHECK(hockney_infiniband_multipair().rendezvous.beta == 2.78e-4);
    CHECK(encdec_library("boringssl").alpha == 0.53);
    CHECK(encdec_library("boringssl").beta == 6.90e-4);
    CHECK(encdec_library("libsodium").alpha == 0.48);
    CHECK(encdec_library("libsodium").beta == 16.3e-4);
    CHECK(encdec_library("cryptopp-mpich").alpha == 5.51);
    CHECK(encdec_library("cryptopp-mpich").beta == 34.8e-4);
    CHECK(encdec_library("cryptopp-mvapich").alpha == 5.16);
    CHECK(encdec_library("cryptopp-mvapich").beta == 21.4e-4);
    const auto mr = maxrate_boringssl();
    CHECK(mr.small.alpha == 1.8);
    CHECK(mr.small.a == 888.5);
    CHECK(mr.small.b == 0.0);
    CHECK(mr.moderate.alpha == 2.66);
    CHECK(mr.moderate.a == 1764.0);
    CHECK(mr.moderate.b == 4135.0);
    CHECK(mr.large.alpha == 3.44);
    CHECK(mr.large.a == 1502.21);
    CHECK(mr.large.b == 1262.59);
    CHECK_THROWS_AS(encdec_library("rot13"), ConfigError);
  }

  TEST_CASE("presets") {
    for (const auto& name : preset_names()) {
      const auto p = preset(name);
      CHECK(p.hockney.has_value());
      CHECK(p.encdec.has_value());
      CHECK(p.maxrate.has_value());
    }
    CHECK(preset("ib").hockney->rendezvous.beta == 3.12e-4);
    CHECK_THROWS_AS(preset("myrinet"), ConfigError);
    const auto ref = parse_preset_ref("ib-rendezvous");
    CHECK(ref.network == "ib");
    CHECK(ref.phase == Phase::Rendezvous);
    CHECK(parse_preset_ref("ethernet-multipair-eager").network == "ethernet-multipair");
    CHECK_FALSE(parse_preset_ref("ib").phase.has_value());
  }

  TEST_CASE("JSON round trip") {
    for (const auto& name : preset_names()) {
      const auto p = preset(name);
      const auto q = params_from_json(params_to_json(p));
      CHECK(q.hockney->eager.alpha == p.hockney->eager.alpha);
      CHECK(q.hockney->rendezvous.beta == p.hockney->rendezvous.beta);
      CHECK(q.hockney->threshold == p.hockney->threshold);
      CHECK(q.encdec->beta == p.encdec->beta);
      CHECK(q.maxrate->large.b == p.maxrate->large.b);
      CHECK(params_to_json(q) == params_to_json(p));
    }
  }

  TEST_CASE("partial files and merge") {
    const auto only_enc = params_from_json(R"({"encdec": {"alpha_us": 1.5, "beta_us_per_byte": 0.002}})");
    CHECK_FALSE(only_enc.hockney.has_value());
    CHECK(only_enc.encdec->alpha == 1.5);
    const auto merged = merge(preset("ib"), only_enc);
    CHECK(merged.encdec->alpha == 1.5);
    CHECK(merged.hockney->eager.alpha == 3.40);
  }

  TEST_CASE("malformed parameter files") {
    for (const char* bad : {"", "[]", "{}", R"({"encdec": {"alpha_us": 1}})",
                            R"({"maxrate": {"small": {"alpha_us": 1, "a_bytes_per_us": 0, "b_bytes_per_us": 0},
                                "moderate": {"alpha_us": 1, "a_bytes_per_us": 1, "b_bytes_per_us": 0},
                                "large": {"alpha_us": 1, "a_bytes_per_us": 1, "b_bytes_per_us": 0}}})",
                            R"({"hockney": {"eager": {"alpha_us": 1, "beta_us_per_byte": 1},
                                "rendezvous": {"alpha_us": 1, "beta_us_per_byte": 1}, "threshold_bytes": 0}})"}) {
      CAPTURE(bad);
      CHECK_THROWS_AS(params_from_json(bad), FormatError);
    }
  }
}
