#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <thread>

#include "secmsg/benchmarks.hpp"
#include "secmsg/error.hpp"
#include "secmsg/stats.hpp"
#include "support.hpp"

using namespace secmsg;
using secmsg::testing::local_group;

TEST_SUITE("stats") {
  TEST_CASE("sample mean and deviation against hand values") {
    const std::vector<double> xs{2, 4, 4, 4, 5, 5, 7, 9};
    CHECK(stats::mean(xs) == doctest::Approx(5.0));
    // Sum of squared deviations is 32, n - 1 = 7.
    CHECK(stats::stddev(xs) == doctest::Approx(std::sqrt(32.0 / 7.0)));
    CHECK(stats::stddev(std::vector<double>{3.0}) == 0.0);
  }

  TEST_CASE("normal quantiles") {
    CHECK(stats::normal_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(stats::normal_quantile(0.975) == doctest::Approx(1.959964).epsilon(1e-6));
    CHECK(stats::normal_quantile(0.995) == doctest::Approx(2.575829).epsilon(1e-6));
    CHECK(stats::normal_quantile(0.005) == doctest::Approx(-2.575829).epsilon(1e-6));
  }

  TEST_CASE("99% half-width") {
    const std::vector<double> xs{2, 4, 4, 4, 5, 5, 7, 9};
    CHECK(stats::ci_halfwidth(xs, 0.99) == doctest::Approx(2.575829 * std::sqrt(32.0 / 7.0) / std::sqrt(8.0)));
  }
}

TEST_SUITE("benchmarks") {
  TEST_CASE("constant timings stop at the minimum run count") {
    const auto r = run_until_stable([](int) { return 12.5; }, StopPolicy{}, 64, 1);
    CHECK(r.runs() == 20);
    CHECK(r.stop_reason == StopReason::StddevOk);
    CHECK(to_string(r.stop_reason) == "STDDEV_OK");
    CHECK(r.mean == 12.5);
    CHECK(r.samples.front().message_size == 64);
    CHECK(r.samples.back().run_index == 19);
  }

  TEST_CASE("4% noise stops in the first phase") {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> noise(1.0, 0.04);
    const auto r = run_until_stable([&](int) { return 100.0 * noise(rng); }, StopPolicy{});
    CHECK(r.stop_reason == StopReason::StddevOk);
    CHECK(r.runs() >= 20);
    CHECK(r.runs() <= 100);
  }

  TEST_CASE("20% noise falls through to the confidence-interval rule") {
    std::mt19937_64 rng(22);
    std::normal_distribution<double> noise(1.0, 0.20);
    const auto r = run_until_stable([&](int) { return 100.0 * std::max(0.05, noise(rng)); }, StopPolicy{});
    CHECK(r.stop_reason == StopReason::CiOk);
    CHECK(r.runs() > 100);
    CHECK(r.ci99_halfwidth <= 0.05 * r.mean);
  }

  TEST_CASE("never fewer than min_runs and the mean is the arithmetic mean") {
    std::vector<double> seen;
    StopPolicy p = StopPolicy::encdec();
    CHECK(p.min_runs == 5);
    const auto r = run_until_stable(
        [&](int i) {
          seen.push_back(10.0 + i % 2);
          return seen.back();
        },
        p);
    CHECK(r.runs() >= 5);
    CHECK(r.runs() == seen.size());
    double sum = 0;
    for (double v : seen) sum += v;
    CHECK(r.mean == doctest::Approx(sum / static_cast<double>(seen.size())));
  }

  TEST_CASE("hard budget") {
    StopPolicy p;
    p.min_runs = 2;
    p.max_runs_phase1 = 3;
    p.hard_budget = 7;
    p.cv_target = 1e-9;
    int calls = 0;
    const auto r = run_until_stable([&](int i) { return ++calls, 1.0 + i; }, p);
    CHECK(r.runs() == 7);
    CHECK(r.stop_reason == StopReason::Budget);
  }

  TEST_CASE("bad policies and non-positive timings") {
    StopPolicy p;
    p.min_runs = 0;
    CHECK_THROWS_AS(p.validate(), DomainError);
    p = StopPolicy{};
    p.hard_budget = 50;
    CHECK_THROWS_AS(p.validate(), DomainError);
    CHECK_THROWS_AS(run_until_stable([](int) { return 0.0; }, StopPolicy{}), DomainError);
  }

  TEST_CASE("throughput counts plaintext bytes only") {
    CHECK(throughput(1000000, 1e6) == doctest::Approx(1.0));
    CHECK(throughput(2 * 1048576, 2000.0) == doctest::Approx(1048.576));
    CHECK(throughput(1024, 1.0) == doctest::Approx(1024.0));
    CHECK_THROWS_AS(throughput(0, 1.0), DomainError);
  }

  TEST_CASE("round counts") {
    CHECK(default_pingpong_rounds(1) == 10000);
    CHECK(default_pingpong_rounds(1048575) == 10000);
    CHECK(default_pingpong_rounds(1048576) == 1000);
    CHECK(scale_count(1000, 0.01) == 10);
    CHECK(scale_count(10, 0.001) == 1);
    CHECK(warmup_rounds(1000) == 100);
    CHECK(warmup_rounds(20) == 10);
  }

  TEST_CASE("ping-pong is symmetric when roles swap") {
    local_group(2, [&](ProcessGroup& g) {
      double best01 = 1e300;
      double best10 = 1e300;
      for (int trial = 0; trial < 5; ++trial) {
        best01 = std::min(best01, pingpong(g, nullptr, 1024, 2000, 0, 1));
        best10 = std::min(best10, pingpong(g, nullptr, 1024, 2000, 1, 0));
      }
      CHECK(best01 > 0);
      CHECK(std::abs(best01 - best10) / std::min(best01, best10) < 0.10);
    });
  }

  TEST_CASE("encrypted ping-pong delivers and reports the same value on both ranks") {
    local_group(2, [&](ProcessGroup& g) {
      g.set_provider(make_provider(Backend::OpenSsl, SecretKey::test_key()));
      const double t = pingpong(g, g.provider(), 4096, 50);
      const double other = share_from(g, 1, t);
      CHECK(t == other);
      CHECK(g.provider()->open_count() == g.provider()->seal_count());
    });
  }

  TEST_CASE("encryption-decryption time grows with size") {
    auto p = make_provider(Backend::OpenSsl, SecretKey::test_key());
    const double small = encdec_bench(*p, 1024, 2000, 1);
    const double mid = encdec_bench(*p, 65536, 200, 1);
    const double big = encdec_bench(*p, 1048576, 20, 1);
    CHECK(small < mid);
    CHECK(mid < big);
  }

  TEST_CASE("concurrent encryption-decryption scales") {
    if (std::thread::hardware_concurrency() < 2) {
      MESSAGE("fewer than 2 cores; k = 2 scaling check skipped");
      return;
    }
    auto p = make_provider(Backend::OpenSsl, SecretKey::test_key());
    double one = 1e300;
    double two = 1e300;
    for (int trial = 0; trial < 5; ++trial) {
      one = std::min(one, encdec_bench(*p, 65536, 2000, 1));
      two = std::min(two, encdec_bench(*p, 65536, 2000, 2));
    }
    // Each thread runs the same iteration count, so per-message time holds.
    CHECK(two <= 1.1 * one);
  }

  TEST_CASE("multipair over 2 and 4 ranks") {
    for (int n : {2, 4}) {
      local_group(n, [&](ProcessGroup& g) {
        const double t = multipair(g, nullptr, n / 2, 4096, 3);
        CHECK(t > 0);
        CHECK(share_from(g, 0, t) == t);
      });
    }
  }

  TEST_CASE("two pairs move at least 90% of one pair's aggregate throughput") {
    if (std::thread::hardware_concurrency() < 2) {
      MESSAGE("fewer than 2 cores; pairs cannot run concurrently, multipair scaling check skipped");
      return;
    }
    local_group(4, [&](ProcessGroup& g) {
      constexpr std::size_t m = 16384;
      double t1 = 1e300;
      double t2 = 1e300;
      for (int trial = 0; trial < 5; ++trial) {
        t1 = std::min(t1, multipair(g, nullptr, 1, m, 20));
        t2 = std::min(t2, multipair(g, nullptr, 2, m, 20));
      }
      const double agg1 = throughput(kMultipairWindow * m, t1);
      const double agg2 = throughput(2 * kMultipairWindow * m, t2);
      CHECK(agg2 >= 0.9 * agg1);
    });
  }

  TEST_CASE("encryption-decryption of an empty buffer costs a positive fixed time") {
    auto p = make_provider(Backend::OpenSsl, SecretKey::test_key());
    CHECK(encdec_bench(*p, 0, 1000, 1) > 0);
  }

  TEST_CASE("collective timing for 1 byte stays near 16 bytes") {
    local_group(4, [&](ProcessGroup& g) {
      g.set_provider(make_provider(Backend::OpenSsl, SecretKey::test_key()));
      for (CollectiveOp op : {CollectiveOp::Bcast, CollectiveOp::Alltoall}) {
        double t1 = 1e300;
        double t16 = 1e300;
        for (int trial = 0; trial < 5; ++trial) {
          t1 = std::min(t1, collective_bench(g, g.provider(), op, 1, 50));
          t16 = std::min(t16, collective_bench(g, g.provider(), op, 16, 50));
        }
        CHECK(t1 < 3.0 * t16);
      }
    });
  }

  TEST_CASE("samples CSV round trip and ordering") {
    std::vector<LatencySample> in{{1024, 2, 1, 3.25}, {1, 1, 0, 0.5}, {1024, 1, 0, 7.0}, {1024, 2, 0, 1e-3}};
    std::ostringstream os;
    write_samples_csv(os, in);
    const std::string text = os.str();
    CHECK(text.rfind("size_bytes,k_pairs,run_index,latency_us\n", 0) == 0);
    std::istringstream is(text);
    const auto out = read_samples_csv(is);
    REQUIRE(out.size() == 4);
    CHECK(out[0].message_size == 1);
    CHECK(out[1].k_pairs == 1);
    CHECK(out[2].run_index == 0);
    CHECK(out[2].latency_us == 1e-3);
    CHECK(out[3].latency_us == 3.25);
  }

  TEST_CASE("malformed CSV is rejected") {
    for (const char* bad : {"", "a,b,c,d\n1,1,0,1\n", "size_bytes,k_pairs,run_index,latency_us\n1,1,0\n",
                            "size_bytes,k_pairs,run_index,latency_us\n1,0,0,1\n",
                            "size_bytes,k_pairs,run_index,latency_us\n1,1,0,-2\n",
                            "size_bytes,k_pairs,run_index,latency_us\nx,1,0,1\n"}) {
      std::istringstream is(bad);
      CHECK_THROWS_AS(read_samples_csv(is), FormatError);
    }
  }
}
