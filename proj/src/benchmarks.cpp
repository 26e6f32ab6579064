#include "secmsg/benchmarks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <latch>
#include <thread>

#include <fmt/format.h>

#include "secmsg/error.hpp"
#include "secmsg/stats.hpp"

namespace secmsg {

namespace {

using Clock = std::chrono::steady_clock;

constexpr std::uint32_t kPingTag = kReservedTagBase + 32;
constexpr std::uint32_t kWindowTag = kReservedTagBase + 33;
constexpr std::uint32_t kAckTag = kReservedTagBase + 34;

double elapsed_us(Clock::time_point t0, Clock::time_point t1) {
  return std::chrono::duration<double, std::micro>(t1 - t0).count();
}

Bytes pattern(std::size_t size) {
  Bytes b(size);
  for (std::size_t i = 0; i < size; ++i) b[i] = static_cast<std::uint8_t>(i * 131 + 7);
  return b;
}

Bytes encode_double(double v) {
  Bytes b(sizeof(double));
  std::memcpy(b.data(), &v, sizeof(double));
  return b;
}

double decode_double(const Bytes& b) {
  if (b.size() != sizeof(double)) throw ProtocolError("expected an 8-byte timing value");
  double v;
  std::memcpy(&v, b.data(), sizeof(double));
  return v;
}

/// Largest value contributed by ranks [first, last).
double max_over(ProcessGroup& g, double local, int first, int last) {
  const auto all = allgather(g, encode_double(local));
  double best = 0.0;
  for (int r = first; r < last; ++r) best = std::max(best, decode_double(all[r]));
  return best;
}

}  // namespace

std::string_view to_string(StopReason r) {
  switch (r) {
    case StopReason::StddevOk:
      return "STDDEV_OK";
    case StopReason::CiOk:
      return "CI_OK";
    case StopReason::Budget:
      return "BUDGET";
  }
  return "UNKNOWN";
}

StopPolicy StopPolicy::encdec() {
  StopPolicy p;
  p.min_runs = 5;
  return p;
}

void StopPolicy::validate() const {
  if (min_runs < 1 || min_runs > max_runs_phase1 || max_runs_phase1 > hard_budget) {
    throw DomainError(fmt::format("stop policy needs 1 <= min_runs ({}) <= max_runs_phase1 ({}) <= hard_budget ({})",
                                  min_runs, max_runs_phase1, hard_budget));
  }
  if (!(cv_target > 0.0) || !(ci_level > 0.0 && ci_level < 1.0)) {
    throw DomainError("stop policy needs cv_target > 0 and ci_level in (0, 1)");
  }
}

BenchmarkResult run_until_stable(const std::function<double(int)>& measure, const StopPolicy& policy,
                                 std::size_t message_size, int k_pairs) {
  policy.validate();
  std::vector<double> xs;
  BenchmarkResult res;
  for (int run = 0;; ++run) {
    const double x = measure(run);
    if (!(x > 0.0) || !std::isfinite(x)) {
      throw DomainError(fmt::format("run {} produced a non-positive latency {}", run, x));
    }
    xs.push_back(x);
    res.samples.push_back(LatencySample{message_size, k_pairs, run, x});
    const int n = static_cast<int>(xs.size());
    const double m = stats::mean(xs);
    if (n >= policy.min_runs && n <= policy.max_runs_phase1 && stats::stddev(xs) <= policy.cv_target * m) {
      res.stop_reason = StopReason::StddevOk;
      break;
    }
    if (n > policy.max_runs_phase1 && stats::ci_halfwidth(xs, policy.ci_level) <= policy.cv_target * m) {
      res.stop_reason = StopReason::CiOk;
      break;
    }
    if (n >= policy.hard_budget) {
      res.stop_reason = StopReason::Budget;
      break;
    }
  }
  res.mean = stats::mean(xs);
  res.stddev = stats::stddev(xs);
  res.ci99_halfwidth = stats::ci_halfwidth(xs, 0.99);
  return res;
}

std::size_t default_pingpong_rounds(std::size_t size) { return size < (std::size_t{1} << 20) ? 10000 : 1000; }

std::size_t scale_count(std::size_t n, double scale) {
  if (!(scale > 0.0)) throw DomainError("scale factor must be positive");
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(n) * scale)));
}

std::size_t warmup_rounds(std::size_t rounds) { return std::max<std::size_t>(10, rounds / 10); }

double pingpong(ProcessGroup& g, AeadProvider* aead, std::size_t size, std::size_t rounds, int initiator,
                int partner) {
  const int me = g.rank();
  if (initiator == partner || (me != initiator && me != partner)) {
    throw ProtocolError(fmt::format("rank {} is not one of the ping-pong pair ({}, {})", me, initiator, partner));
  }
  if (rounds == 0) throw DomainError("ping-pong needs at least one round");
  const bool leads = me == initiator;
  const int other = leads ? partner : initiator;
  const Bytes msg = pattern(size);

  auto ping = [&] {
    if (aead != nullptr) {
      g.encrypted_send(other, kPingTag, msg);
    } else {
      g.send(other, kPingTag, msg);
    }
  };
  auto pong = [&] {
    if (aead != nullptr) {
      (void)g.encrypted_recv(other, kPingTag);
    } else {
      (void)g.recv(other, kPingTag);
    }
  };
  auto round = [&] {
    if (leads) {
      ping();
      pong();
    } else {
      pong();
      ping();
    }
  };

  for (std::size_t i = 0, w = warmup_rounds(rounds); i < w; ++i) round();
  const auto t0 = Clock::now();
  for (std::size_t i = 0; i < rounds; ++i) round();
  const double local = elapsed_us(t0, Clock::now()) / (2.0 * static_cast<double>(rounds));

  if (leads) {
    g.send(other, kPingTag, encode_double(local));
    return local;
  }
  return decode_double(g.recv(other, kPingTag));
}

double multipair(ProcessGroup& g, AeadProvider* aead, int k, std::size_t size, std::size_t iterations) {
  if (k < 1 || 2 * k > g.size()) {
    throw ProtocolError(fmt::format("{} pairs need {} ranks, group has {}", k, 2 * k, g.size()));
  }
  if (iterations == 0) throw DomainError("multipair needs at least one iteration");
  const int me = g.rank();
  const bool sender = me < k;
  const bool receiver = me >= k && me < 2 * k;
  const Bytes msg = pattern(size);
  const Bytes ack(4, 0);

  auto window = [&] {
    std::vector<RequestHandle> hs;
    hs.reserve(kMultipairWindow);
    if (sender) {
      const int peer = me + k;
      for (int i = 0; i < kMultipairWindow; ++i) {
        hs.push_back(aead != nullptr ? g.encrypted_isend(peer, kWindowTag, msg) : g.isend(peer, kWindowTag, msg));
      }
      g.waitall(hs);
      (void)g.recv(peer, kAckTag);
    } else {
      const int peer = me - k;
      for (int i = 0; i < kMultipairWindow; ++i) {
        hs.push_back(aead != nullptr ? g.encrypted_irecv(peer, kWindowTag) : g.irecv(peer, kWindowTag));
      }
      g.waitall(hs);
      g.send(peer, kAckTag, ack);
    }
  };

  double local = 0.0;
  if (sender || receiver) {
    for (std::size_t i = 0, w = warmup_rounds(iterations); i < w; ++i) window();
    const auto t0 = Clock::now();
    for (std::size_t i = 0; i < iterations; ++i) window();
    local = elapsed_us(t0, Clock::now()) / static_cast<double>(iterations);
  }
  return max_over(g, local, 0, k);
}

double encdec_bench(const AeadProvider& aead, std::size_t size, std::size_t iterations, int threads) {
  if (iterations == 0) throw DomainError("encdec benchmark needs at least one iteration");
  if (threads < 1) throw DomainError("encdec benchmark needs at least one thread");
  std::latch ready(threads);
  std::latch go(1);
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  workers.reserve(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t) {
    workers.emplace_back([&, t] {
      try {
        auto p = aead.clone();
        const Bytes plain = pattern(size);
        Bytes wire(size + kFrameOverhead);
        Bytes back(size);
        const std::size_t warm = std::min<std::size_t>(warmup_rounds(iterations), 1000);
        for (std::size_t i = 0; i < warm; ++i) {
          p->seal_into(plain, wire);
          p->open_into(wire, back);
        }
        ready.count_down();
        go.wait();
        for (std::size_t i = 0; i < iterations; ++i) {
          p->seal_into(plain, wire);
          p->open_into(wire, back);
        }
      } catch (...) {
        errors[t] = std::current_exception();
        ready.count_down();
      }
    });
  }
  ready.wait();
  const auto t0 = Clock::now();
  go.count_down();
  for (auto& w : workers) w.join();
  const double wall = elapsed_us(t0, Clock::now());
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return wall / static_cast<double>(iterations);
}

double collective_bench(ProcessGroup& g, AeadProvider* aead, CollectiveOp op, std::size_t size,
                        std::size_t iterations) {
  if (iterations == 0) throw DomainError("collective benchmark needs at least one iteration");
  const int n = g.size();
  const Bytes element = pattern(size);
  const std::vector<Bytes> per_rank(static_cast<std::size_t>(n), element);
  const std::vector<std::size_t> lengths(static_cast<std::size_t>(n), size);

  auto call = [&] {
    switch (op) {
      case CollectiveOp::Bcast:
        aead != nullptr ? (void)encrypted_bcast(g, *aead, 0, element) : (void)bcast(g, 0, element);
        break;
      case CollectiveOp::Allgather:
        aead != nullptr ? (void)encrypted_allgather(g, *aead, element) : (void)allgather(g, element);
        break;
      case CollectiveOp::Alltoall:
        aead != nullptr ? (void)encrypted_alltoall(g, *aead, per_rank) : (void)alltoall(g, per_rank);
        break;
      case CollectiveOp::Alltoallv:
        aead != nullptr ? (void)encrypted_alltoallv(g, *aead, per_rank, lengths)
                        : (void)alltoallv(g, per_rank, lengths);
        break;
    }
  };

  for (std::size_t i = 0, w = warmup_rounds(iterations); i < w; ++i) call();
  double total = 0.0;
  for (std::size_t i = 0; i < iterations; ++i) {
    g.barrier();
    const auto t0 = Clock::now();
    call();
    total += elapsed_us(t0, Clock::now());
  }
  return max_over(g, total / static_cast<double>(iterations), 0, n);
}

double throughput(std::size_t plaintext_bytes, double latency_us) {
  if (plaintext_bytes == 0) throw DomainError("throughput of a zero-byte message is undefined");
  if (!(latency_us > 0.0)) throw DomainError("throughput needs a positive latency");
  return static_cast<double>(plaintext_bytes) / latency_us;
}

double share_from(ProcessGroup& g, int leader, double value) {
  return decode_double(bcast(g, leader, encode_double(value)));
}

}  // namespace secmsg
