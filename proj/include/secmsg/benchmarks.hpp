#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <string_view>
#include <vector>

#include "secmsg/aead.hpp"
#include "secmsg/collectives.hpp"
#include "secmsg/transport.hpp"

namespace secmsg {

/// One timed run. `latency_us` is the mean per-round time inside that run.
struct LatencySample {
  std::size_t message_size = 0;
  int k_pairs = 1;
  int run_index = 0;
  double latency_us = 0.0;
};

enum class StopReason { StddevOk, CiOk, Budget };
std::string_view to_string(StopReason r);

/// Repeat-until-stable rule: at least `min_runs`, at most `max_runs_phase1`
/// runs while waiting for stddev <= cv_target * mean; past that, keep going
/// until the confidence interval half-width drops under cv_target * mean,
/// giving up at `hard_budget`.
struct StopPolicy {
  int min_runs = 20;
  int max_runs_phase1 = 100;
  double cv_target = 0.05;
  double ci_level = 0.99;
  int hard_budget = 1000;

  /// Encryption-decryption timings are steadier: at least 5 runs.
  static StopPolicy encdec();
  void validate() const;
};

struct BenchmarkResult {
  std::vector<LatencySample> samples;
  double mean = 0.0;
  double stddev = 0.0;
  double ci99_halfwidth = 0.0;
  StopReason stop_reason = StopReason::Budget;

  std::size_t runs() const { return samples.size(); }
};

/// Calls `measure(run_index)` until `policy` is satisfied. Every call must
/// return a strictly positive latency in microseconds.
BenchmarkResult run_until_stable(const std::function<double(int)>& measure, const StopPolicy& policy,
                                 std::size_t message_size = 0, int k_pairs = 1);

/// 10,000 round trips below 1 MiB, 1,000 from 1 MiB up.
std::size_t default_pingpong_rounds(std::size_t size);
/// max(1, round(n * scale)).
std::size_t scale_count(std::size_t n, double scale);
/// Untimed warm-up rounds before a run: 10% of `rounds`, at least 10.
std::size_t warmup_rounds(std::size_t rounds);

inline constexpr int kMultipairWindow = 64;
inline constexpr std::size_t kDefaultMultipairIterations = 100;
inline constexpr std::size_t kDefaultCollectiveIterations = 100;
inline constexpr std::size_t kDefaultEncdecIterations = 500000;

/// Blocking ping-pong between `initiator` and `partner`; pass aead = nullptr
/// for plaintext. Returns microseconds per one-way message, as timed by the
/// initiator (the partner receives the same value). Other ranks must not call.
double pingpong(ProcessGroup& g, AeadProvider* aead, std::size_t size, std::size_t rounds, int initiator = 0,
                int partner = 1);

/// OSU-style multiple-pair test over ranks [0, 2k): rank i < k streams a
/// window of 64 non-blocking sends to rank i + k, which posts 64 receives,
/// waits for all of them, and answers with one 4-byte ack. Every rank of
/// the group must call; all return the slowest sender's microseconds per
/// window.
double multipair(ProcessGroup& g, AeadProvider* aead, int k, std::size_t size, std::size_t iterations);

/// k threads each seal then open a `size`-byte buffer `iterations` times
/// with their own clone of `aead`. Returns wall-clock microseconds divided by
/// `iterations`.
double encdec_bench(const AeadProvider& aead, std::size_t size, std::size_t iterations, int threads);

/// Mean microseconds per collective call, barrier between calls, slowest
/// rank reported on every rank. aead = nullptr runs the plaintext variant.
double collective_bench(ProcessGroup& g, AeadProvider* aead, CollectiveOp op, std::size_t size,
                        std::size_t iterations);

/// Throughput in MB/s (MB = 10^6 bytes) from plaintext bytes and
/// microseconds. Frame overhead is not counted by construction.
double throughput(std::size_t plaintext_bytes, double latency_us);

/// Shares rank `leader`'s value with every rank, so stop decisions agree.
double share_from(ProcessGroup& g, int leader, double value);

/// Writes `size_bytes,k_pairs,run_index,latency_us`, rows ordered by size,
/// then k, then run index.
void write_samples_csv(std::ostream& out, std::vector<LatencySample> samples);
std::vector<LatencySample> read_samples_csv(std::istream& in);

}  // namespace secmsg
