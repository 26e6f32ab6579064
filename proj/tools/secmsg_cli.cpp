// secmsg: benchmark, fit, predict and validate encrypted message passing.
//
// Exit codes: 0 success, 1 usage, 2 runtime or transport, 3 integrity.

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "secmsg/aead.hpp"
#include "secmsg/benchmarks.hpp"
#include "secmsg/collectives.hpp"
#include "secmsg/error.hpp"
#include "secmsg/local_group.hpp"
#include "secmsg/models.hpp"
#include "secmsg/params_io.hpp"
#include "secmsg/transport.hpp"

namespace {

using namespace secmsg;

/// Raised for bad flag combinations detected after parsing.
class UsageError : public Error {
 public:
  using Error::Error;
};

struct Options {
  // bench
  std::string kind;
  std::string roster;
  int rank = 0;
  bool local = false;
  int ranks = 4;
  std::string backend = "openssl";
  std::string key_hex;
  std::vector<std::size_t> sizes;
  std::vector<int> pairs;
  std::vector<int> threads;
  double scale = 1.0;
  std::uint64_t seed = 1;
  std::size_t threshold = kDefaultPhaseThreshold;
  std::string out;
  bool plaintext = false;
  std::string op = "alltoall";
  std::optional<int> min_runs;
  int max_runs = StopPolicy{}.max_runs_phase1;
  int budget = StopPolicy{}.hard_budget;
  double cv = StopPolicy{}.cv_target;
  // fit / predict / validate / synth / preset
  std::string model;
  std::string in;
  std::string mode;
  std::vector<std::string> params;
  std::string preset;
  std::string enc;
  int runs = 20;
  double noise = 0.0;
  bool list = false;
};

// ---- shared helpers ---------------------------------------------------------

std::unique_ptr<AeadProvider> provider_from(const Options& o) {
  std::string hex = o.key_hex;
  if (const char* env = std::getenv("SECMSG_KEY"); env != nullptr && *env != '\0') hex = env;
  const SecretKey key = hex.empty() ? SecretKey::test_key() : SecretKey::from_hex(hex);
  return make_provider(parse_backend(o.backend), key);
}

StopPolicy policy_from(const Options& o, StopPolicy base) {
  if (o.min_runs) base.min_runs = *o.min_runs;
  base.max_runs_phase1 = o.max_runs;
  base.hard_budget = o.budget;
  base.cv_target = o.cv;
  base.validate();
  return base;
}

/// CSV goes to --out, or to stdout when --out is absent or "-"; the summary
/// then moves to stderr so stdout stays machine-readable.
struct Outputs {
  std::ofstream file;
  std::ostream* csv = &std::cout;
  std::ostream* summary = &std::cout;

  explicit Outputs(const std::string& path) {
    if (path.empty() || path == "-") {
      summary = &std::cerr;
      return;
    }
    file.open(path);
    if (!file) throw FormatError(fmt::format("cannot write {}", path));
    csv = &file;
  }
};

// ---- bench --------------------------------------------------------------------

struct BenchRow {
  std::size_t size;
  int k;
  double bytes_per_sample;  // plaintext bytes moved per reported latency
  BenchmarkResult result;
};

void print_bench_summary(std::ostream& os, const std::vector<BenchRow>& rows) {
  fmt::print(os, "{:>10} {:>4} {:>5} {:>12} {:>11} {:>11} {:>10} {:>11}\n", "size_bytes", "k", "runs", "mean_us",
             "stddev_us", "ci99_us", "stop", "MB/s");
  for (const auto& r : rows) {
    const std::string tp =
        r.bytes_per_sample > 0 ? fmt::format("{:.2f}", r.bytes_per_sample / r.result.mean) : std::string("-");
    fmt::print(os, "{:>10} {:>4} {:>5} {:>12.3f} {:>11.3f} {:>11.3f} {:>10} {:>11}\n", r.size, r.k, r.result.runs(),
               r.result.mean, r.result.stddev, r.result.ci99_halfwidth, to_string(r.result.stop_reason), tp);
  }
}

void emit_bench(const Options& o, const std::vector<BenchRow>& rows) {
  Outputs out(o.out);
  std::vector<LatencySample> all;
  for (const auto& r : rows) all.insert(all.end(), r.result.samples.begin(), r.result.samples.end());
  write_samples_csv(*out.csv, all);
  print_bench_summary(*out.summary, rows);
}

std::vector<BenchRow> bench_in_group(ProcessGroup& g, const Options& o) {
  const bool enc = !o.plaintext;
  if (enc) g.set_provider(provider_from(o));
  AeadProvider* aead = enc ? g.provider() : nullptr;
  const StopPolicy policy = policy_from(o, StopPolicy{});
  std::vector<BenchRow> rows;

  if (o.kind == "pingpong") {
    if (g.size() < 2) throw UsageError("ping-pong needs at least 2 ranks");
    if (g.rank() < 2) {
      for (std::size_t size : o.sizes) {
        const std::size_t rounds = scale_count(default_pingpong_rounds(size), o.scale);
        auto res = run_until_stable([&](int) { return pingpong(g, aead, size, rounds); }, policy, size, 1);
        rows.push_back({size, 1, static_cast<double>(size), std::move(res)});
      }
    }
  } else if (o.kind == "multipair") {
    const std::size_t iters = scale_count(kDefaultMultipairIterations, o.scale);
    for (int k : o.pairs) {
      for (std::size_t size : o.sizes) {
        auto res = run_until_stable([&](int) { return multipair(g, aead, k, size, iters); }, policy, size, k);
        const double bytes = static_cast<double>(k) * kMultipairWindow * static_cast<double>(size);
        rows.push_back({size, k, bytes, std::move(res)});
      }
    }
  } else if (o.kind == "collective") {
    const CollectiveOp op = parse_collective(o.op);
    const std::size_t iters = scale_count(kDefaultCollectiveIterations, o.scale);
    for (std::size_t size : o.sizes) {
      auto res = run_until_stable([&](int) { return collective_bench(g, aead, op, size, iters); }, policy, size,
                                  g.size());
      rows.push_back({size, g.size(), static_cast<double>(size), std::move(res)});
    }
  }
  g.barrier();
  return rows;
}

int group_size_for(const Options& o) {
  if (o.kind == "pingpong") return 2;
  if (o.kind == "multipair") {
    int kmax = 1;
    for (int k : o.pairs) kmax = std::max(kmax, k);
    return 2 * kmax;
  }
  return o.ranks;
}

int cmd_bench(Options& o) {
  if (o.sizes.empty()) throw UsageError("--sizes must list at least one size");
  if (!(o.scale > 0.0)) throw UsageError("--scale must be positive");
  if (o.pairs.empty()) o.pairs = {1};
  for (int k : o.pairs) {
    if (k < 1) throw UsageError("--pairs entries must be >= 1");
  }

  if (o.kind == "encdec") {
    if (o.threads.empty()) o.threads = o.pairs;
    auto prov = provider_from(o);
    const StopPolicy policy = policy_from(o, StopPolicy::encdec());
    const std::size_t iters = scale_count(kDefaultEncdecIterations, o.scale);
    std::vector<BenchRow> rows;
    for (int t : o.threads) {
      if (t < 1) throw UsageError("--threads entries must be >= 1");
      for (std::size_t size : o.sizes) {
        auto res = run_until_stable([&](int) { return encdec_bench(*prov, size, iters, t); }, policy, size, t);
        rows.push_back({size, t, static_cast<double>(t) * static_cast<double>(size), std::move(res)});
      }
    }
    emit_bench(o, rows);
    return 0;
  }

  GroupOptions gopts;
  gopts.phase_threshold = o.threshold;
  if (o.local) {
    std::vector<BenchRow> rows;
    std::mutex mu;
    run_local_group(group_size_for(o), [&](ProcessGroup& g) {
      auto mine = bench_in_group(g, o);
      if (g.rank() == 0) {
        std::lock_guard lock(mu);
        rows = std::move(mine);
      }
    }, gopts);
    emit_bench(o, rows);
    return 0;
  }
  if (o.roster.empty()) throw UsageError("networked benchmarks need --roster and --rank, or --local");
  const auto roster = load_roster(o.roster);
  if (o.kind == "multipair" && static_cast<int>(roster.size()) < group_size_for(o)) {
    throw UsageError(fmt::format("multipair with these --pairs needs {} ranks, roster has {}", group_size_for(o),
                                 roster.size()));
  }
  ProcessGroup g = ProcessGroup::connect(o.rank, roster, gopts);
  const auto rows = bench_in_group(g, o);
  if (g.rank() == 0) emit_bench(o, rows);
  return 0;
}

// ---- parameter resolution -----------------------------------------------------

struct Resolved {
  ModelParams params;
  std::optional<Phase> phase;
};

/// --preset first, then each --params file in order, then --enc.
Resolved resolve_params(const Options& o, bool multipair_tables) {
  Resolved r;
  if (!o.preset.empty()) {
    const PresetRef ref = parse_preset_ref(o.preset);
    std::string network = ref.network;
    if (multipair_tables && !network.ends_with("-multipair")) network += "-multipair";
    r.params = preset(network);
    r.phase = ref.phase;
  }
  for (const auto& path : o.params) r.params = merge(r.params, load_params(path));
  if (!o.enc.empty()) r.params.encdec = encdec_library(o.enc);
  return r;
}

template <typename T>
const T& need(const std::optional<T>& section, std::string_view name, std::string_view mode) {
  if (!section) {
    throw UsageError(fmt::format("mode '{}' needs a '{}' section (use --preset or --params)", mode, name));
  }
  return *section;
}

// ---- fit ------------------------------------------------------------------------

std::vector<LatencySample> read_csv_file(const std::string& path) {
  if (path.empty()) throw UsageError("--in is required");
  std::ifstream in(path);
  if (!in) throw FormatError(fmt::format("cannot open {}", path));
  return read_samples_csv(in);
}

void print_hockney_table(const PhasedHockneyParams& p) {
  fmt::print("{:<12} {:>12} {:>14}\n", "phase", "alpha (us)", "beta (us/B)");
  fmt::print("{:<12} {:>12.4f} {:>14.4e}\n", "eager", p.eager.alpha, p.eager.beta);
  fmt::print("{:<12} {:>12.4f} {:>14.4e}\n", "rendezvous", p.rendezvous.alpha, p.rendezvous.beta);
  fmt::print("threshold {} bytes\n", p.threshold);
}

int cmd_fit(const Options& o) {
  const auto samples = read_csv_file(o.in);
  ModelParams out;
  if (o.model == "hockney") {
    const HockneyFit fit = fit_hockney(samples, o.threshold);
    print_hockney_table(fit.params);
    if (fit.eager_fallback) fmt::print("note: eager alpha was negative; 1-byte fallback applied\n");
    if (fit.rendezvous_fallback) fmt::print("note: rendezvous alpha was negative; 1-byte fallback applied\n");
    out.hockney = fit.params;
  } else if (o.model == "encdec") {
    const EncDecFit fit = fit_encdec_line(samples);
    fmt::print("{:>12} {:>14}\n", "alpha (us)", "beta (us/B)");
    fmt::print("{:>12.4f} {:>14.4e}\n", fit.params.alpha, fit.params.beta);
    if (fit.fallback) fmt::print("note: alpha was negative; 1-byte fallback applied\n");
    out.encdec = fit.params;
  } else {
    const MaxRateFit fit = fit_maxrate(samples);
    fmt::print("{:<10} {:>10} {:>12} {:>12} {:>14}\n", "class", "alpha (us)", "A (B/us)", "B (B/us)", "residual");
    for (const auto& [name, c] : {std::pair{"small", &fit.small}, std::pair{"moderate", &fit.moderate},
                                  std::pair{"large", &fit.large}}) {
      fmt::print("{:<10} {:>10.4f} {:>12.2f} {:>12.2f} {:>14.6g}\n", name, c->params.alpha, c->params.a,
                 c->params.b, c->residual);
    }
    out.maxrate = fit.params;
  }
  if (!o.out.empty()) save_params(o.out, out);
  return 0;
}

// ---- predict --------------------------------------------------------------------

int cmd_predict(const Options& o) {
  const Resolved r = resolve_params(o, o.mode == "multipair");
  const auto& p = r.params;
  std::vector<std::size_t> sizes = o.sizes;
  std::vector<int> pairs = o.pairs.empty() ? std::vector<int>{1} : o.pairs;

  if (o.mode == "single") {
    if (sizes.empty()) throw UsageError("--size is required for mode 'single'");
    PhasedHockneyParams model = need(p.hockney, "hockney", o.mode);
    if (!o.plaintext && p.encdec) model = compose_enhanced(model, *p.encdec);
    fmt::print("{:>10} {:>11} {:>12} {:>11}\n", "size_bytes", "phase", "latency_us", "MB/s");
    for (std::size_t m : sizes) {
      const Prediction pr = predict_single(model, m);
      const std::string tp = m > 0 ? fmt::format("{:.2f}", throughput(m, pr.latency_us)) : std::string("-");
      fmt::print("{:>10} {:>11} {:>12.4f} {:>11}\n", m, to_string(pr.phase), pr.latency_us, tp);
    }
  } else if (o.mode == "multipair") {
    if (sizes.empty()) throw UsageError("--size is required for mode 'multipair'");
    const auto& comm = need(p.hockney, "hockney", o.mode);
    const auto& enc = need(p.maxrate, "maxrate", o.mode);
    fmt::print("{:>10} {:>4} {:>11} {:>9} {:>12} {:>12} {:>12}\n", "size_bytes", "k", "phase", "class",
               "latency_us", "T_enc_us", "MB/s");
    for (int k : pairs) {
      for (std::size_t m : sizes) {
        const Prediction pr = predict_multipair(comm, enc, k, m);
        const double bytes = static_cast<double>(k) * static_cast<double>(m);
        const std::string tp = m > 0 ? fmt::format("{:.2f}", bytes / pr.latency_us) : std::string("-");
        fmt::print("{:>10} {:>4} {:>11} {:>9} {:>12.4f} {:>12.4f} {:>12}\n", m, k, to_string(pr.phase),
                   to_string(pr.size_class), pr.latency_us, eval_maxrate(enc, k, m), tp);
      }
    }
  } else if (o.mode == "pipelined") {
    if (sizes.empty()) throw UsageError("--size is required for mode 'pipelined'");
    const auto& comm = need(p.hockney, "hockney", o.mode);
    const auto& enc = need(p.encdec, "encdec", o.mode);
    fmt::print("{:>10} {:>11} {:>12} {:>11} {:>10}\n", "size_bytes", "phase", "latency_us", "MB/s", "overhead");
    for (std::size_t m : sizes) {
      if (m == 0) throw UsageError("mode 'pipelined' needs sizes > 0");
      const Prediction pr = predict_pipelined(comm, enc, m);
      fmt::print("{:>10} {:>11} {:>12.4f} {:>11.2f} {:>9.1f}%\n", m, to_string(pr.phase), pr.latency_us,
                 throughput(m, pr.latency_us), 100.0 * pipelined_overhead(comm, enc, m));
    }
  } else {
    const auto& comm = need(p.hockney, "hockney", o.mode);
    const auto& enc = need(p.encdec, "encdec", o.mode);
    const Phase phase = r.phase.value_or(Phase::Rendezvous);
    const HockneyParams& h = phase == Phase::Eager ? comm.eager : comm.rendezvous;
    const double ratio = overhead_single_large(enc, h);
    fmt::print("single-pair overhead ({} phase): beta_enc / beta_comm = {:.4e} / {:.4e} = {:.4f} ({:.0f}%)\n",
               to_string(phase), enc.beta, h.beta, ratio, 100.0 * ratio);
    if (p.maxrate && !o.pairs.empty()) {
      const std::size_t m = sizes.empty() ? std::size_t{2097152} : sizes.front();
      const auto& cls = p.maxrate->for_class(size_class_of(m));
      for (int k : pairs) {
        const RegimeRatio rr = overhead_multipair_slow(h, cls, k, m);
        fmt::print("multipair overhead k={} m={} ({} class): {:.4f} ({:.1f}%){}\n", k, m,
                   to_string(size_class_of(m)), rr.ratio, 100.0 * rr.ratio,
                   rr.in_regime ? "" : " [out of regime: T_comm < T_enc/2]");
      }
    }
    for (std::size_t m : sizes) {
      if (m == 0) continue;
      fmt::print("pipelined overhead m={} ({} phase): {:.1f}%\n", m, to_string(phase_of(m, comm.threshold)),
                 100.0 * pipelined_overhead(comm, enc, m));
    }
  }
  return 0;
}

// ---- model evaluation shared by validate and synth ----------------------------

/// Returns nullopt for keys the chosen model does not cover.
std::optional<double> model_latency(const ModelParams& p, std::string_view mode, bool plaintext, int k,
                                    std::size_t m) {
  if (mode == "hockney") return predict_comm(need(p.hockney, "hockney", mode), k, m).latency_us;
  if (mode == "single") {
    PhasedHockneyParams model = need(p.hockney, "hockney", mode);
    if (!plaintext) model = compose_enhanced(model, need(p.encdec, "encdec", mode));
    return predict_comm(model, k, m).latency_us;
  }
  if (mode == "encdec") {
    if (k != 1) return std::nullopt;
    return need(p.encdec, "encdec", mode).eval(static_cast<double>(m));
  }
  if (mode == "maxrate") return eval_maxrate(need(p.maxrate, "maxrate", mode), k, m);
  if (mode == "multipair") {
    return predict_multipair(need(p.hockney, "hockney", mode), need(p.maxrate, "maxrate", mode), k, m).latency_us;
  }
  if (mode == "pipelined") {
    if (k != 1) return std::nullopt;
    return predict_pipelined(need(p.hockney, "hockney", mode), need(p.encdec, "encdec", mode), m).latency_us;
  }
  throw UsageError(fmt::format("unknown mode '{}'", mode));
}

int cmd_validate(const Options& o) {
  const auto samples = read_csv_file(o.in);
  const Resolved r = resolve_params(o, o.mode == "multipair");
  const LatencyTable measured = mean_latencies(samples);
  LatencyTable predicted;
  for (const auto& [key, v] : measured) {
    if (const auto t = model_latency(r.params, o.mode, o.plaintext, key.second, key.first)) predicted[key] = *t;
  }
  const PredictionReport rep = validate(measured, predicted);

  fmt::print("{:>10} {:>4} {:>14} {:>14} {:>12}\n", "size_bytes", "k", "predicted_us", "measured_us", "rel_error");
  for (const auto& row : rep.rows) {
    fmt::print("{:>10} {:>4} {:>14.4f} {:>14.4f} {:>12.6f}\n", row.size, row.k, row.predicted, row.measured,
               row.relative_error);
  }
  fmt::print("\n{:>10} {:>5} {:>10}\n", "size_bytes", "keys", "MAPE");
  for (const auto& s : rep.per_size) fmt::print("{:>10} {:>5} {:>9.4f}%\n", s.size, s.keys, 100.0 * s.mape);
  fmt::print("overall MAPE {:.4f}%\n", 100.0 * rep.overall_mape);
  for (const auto& [m, k] : rep.missing_prediction) {
    fmt::print(std::cerr, "warning: no prediction for size {} k {}\n", m, k);
  }

  if (!o.out.empty()) {
    std::ofstream out(o.out);
    if (!out) throw FormatError(fmt::format("cannot write {}", o.out));
    out << "size_bytes,k_pairs,predicted_us,measured_us,relative_error\n";
    for (const auto& row : rep.rows) {
      out << fmt::format("{},{},{},{},{}\n", row.size, row.k, row.predicted, row.measured, row.relative_error);
    }
  }
  return 0;
}

// ---- synth ----------------------------------------------------------------------

int cmd_synth(const Options& o) {
  if (o.sizes.empty()) throw UsageError("--sizes must list at least one size");
  if (o.runs < 1) throw UsageError("--runs must be >= 1");
  if (o.noise < 0.0) throw UsageError("--noise must be >= 0");
  const Resolved r = resolve_params(o, o.model == "multipair");
  const std::vector<int> pairs = o.pairs.empty() ? std::vector<int>{1} : o.pairs;
  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<LatencySample> out;
  for (int k : pairs) {
    for (std::size_t m : o.sizes) {
      const auto t = model_latency(r.params, o.model, o.plaintext, k, m);
      if (!t) throw UsageError(fmt::format("model '{}' does not cover k = {}", o.model, k));
      for (int run = 0; run < o.runs; ++run) {
        double y = *t;
        if (o.noise > 0.0) {
          do {
            y = *t * (1.0 + o.noise * gauss(rng));
          } while (!(y > 0.0));
        }
        out.push_back({m, k, run, y});
      }
    }
  }
  Outputs dst(o.out);
  write_samples_csv(*dst.csv, out);
  return 0;
}

// ---- preset ---------------------------------------------------------------------

int cmd_preset(const Options& o) {
  if (o.list || o.preset.empty()) {
    for (const auto& n : preset_names()) fmt::print("{}\n", n);
    fmt::print("encryption libraries (--enc):");
    for (const auto& n : encdec_library_names()) fmt::print(" {}", n);
    fmt::print("\n");
    return 0;
  }
  ModelParams p = preset(parse_preset_ref(o.preset).network);
  if (!o.enc.empty()) p.encdec = encdec_library(o.enc);
  if (o.out.empty() || o.out == "-") {
    std::cout << params_to_json(p);
  } else {
    save_params(o.out, p);
  }
  return 0;
}

// ---- wiring ---------------------------------------------------------------------

void add_param_flags(CLI::App* c, Options& o) {
  c->add_option("--params", o.params, "Parameter JSON file; repeatable, later files override");
  c->add_option("--preset", o.preset, "Network preset: ethernet, ib, ethernet-multipair, ib-multipair");
  c->add_option("--enc", o.enc, "Encryption library line: boringssl, libsodium, cryptopp-mpich, cryptopp-mvapich");
}

int run(int argc, char** argv) {
  Options o;
  CLI::App app{"Encrypted message passing: benchmark, fit, predict, validate"};
  app.require_subcommand(1);

  auto* bench = app.add_subcommand("bench", "Run a benchmark and write samples CSV");
  bench->add_option("kind", o.kind, "pingpong, multipair, encdec or collective")
      ->required()
      ->check(CLI::IsMember({"pingpong", "multipair", "encdec", "collective"}));
  bench->add_option("--roster", o.roster, "Roster file of `rank host port` lines");
  bench->add_option("--rank", o.rank, "This process's rank")->check(CLI::NonNegativeNumber);
  bench->add_flag("--local", o.local, "Run every rank as a thread on loopback");
  bench->add_option("--ranks", o.ranks, "Group size for --local collective runs")->check(CLI::PositiveNumber);
  bench->add_option("--backend", o.backend, "AEAD backend: openssl or sodium");
  bench->add_option("--key", o.key_hex, "Key as 32 or 64 hex digits (SECMSG_KEY overrides)");
  bench->add_option("--sizes", o.sizes, "Comma-separated message sizes in bytes")->delimiter(',');
  bench->add_option("--pairs", o.pairs, "Comma-separated pair counts")->delimiter(',');
  bench->add_option("--threads", o.threads, "Comma-separated thread counts for encdec")->delimiter(',');
  bench->add_option("--scale", o.scale, "Multiplier on iteration counts");
  bench->add_option("--seed", o.seed, "Unused by measurements; accepted for uniformity");
  bench->add_option("--threshold", o.threshold, "Eager/rendezvous threshold in bytes")->check(CLI::PositiveNumber);
  bench->add_option("--out", o.out, "Samples CSV path (default stdout)");
  bench->add_flag("--plaintext", o.plaintext, "Benchmark without encryption");
  bench->add_option("--op", o.op, "Collective: bcast, allgather, alltoall, alltoallv");
  bench->add_option("--min-runs", o.min_runs, "Stop policy: minimum runs (default 20, encdec 5)");
  bench->add_option("--max-runs", o.max_runs, "Stop policy: last run of the stddev phase");
  bench->add_option("--budget", o.budget, "Stop policy: hard run budget");
  bench->add_option("--cv", o.cv, "Stop policy: relative stddev / CI target");

  auto* fit = app.add_subcommand("fit", "Fit model parameters from samples CSV");
  fit->add_option("model", o.model, "hockney, encdec or maxrate")
      ->required()
      ->check(CLI::IsMember({"hockney", "encdec", "maxrate"}));
  fit->add_option("--in", o.in, "Samples CSV")->required();
  fit->add_option("--threshold", o.threshold, "Eager/rendezvous threshold in bytes")->check(CLI::PositiveNumber);
  fit->add_option("--out", o.out, "Parameter JSON to write");

  auto* predict = app.add_subcommand("predict", "Evaluate the models");
  predict->add_option("--mode", o.mode, "single, multipair, pipelined or overhead")
      ->required()
      ->check(CLI::IsMember({"single", "multipair", "pipelined", "overhead"}));
  predict->add_option("--size,--sizes", o.sizes, "Message sizes in bytes")->delimiter(',');
  predict->add_option("--pairs", o.pairs, "Pair counts")->delimiter(',');
  predict->add_flag("--plaintext", o.plaintext, "Single mode: communication model only");
  add_param_flags(predict, o);

  auto* val = app.add_subcommand("validate", "Compare measured samples with model predictions");
  val->add_option("--in", o.in, "Measured samples CSV")->required();
  val->add_option("--mode", o.mode, "hockney, single, encdec, maxrate, multipair or pipelined")
      ->required()
      ->check(CLI::IsMember({"hockney", "single", "encdec", "maxrate", "multipair", "pipelined"}));
  val->add_option("--out", o.out, "Report CSV path");
  val->add_flag("--plaintext", o.plaintext, "Single mode: communication model only");
  add_param_flags(val, o);

  auto* synth = app.add_subcommand("synth", "Generate samples CSV from a model");
  synth->add_option("--model", o.model, "hockney, single, encdec, maxrate, multipair or pipelined")
      ->required()
      ->check(CLI::IsMember({"hockney", "single", "encdec", "maxrate", "multipair", "pipelined"}));
  synth->add_option("--sizes", o.sizes, "Message sizes in bytes")->delimiter(',');
  synth->add_option("--pairs", o.pairs, "Pair counts")->delimiter(',');
  synth->add_option("--runs", o.runs, "Samples per (size, k)");
  synth->add_option("--noise", o.noise, "Relative stddev of multiplicative Gaussian noise");
  synth->add_option("--seed", o.seed, "RNG seed");
  synth->add_option("--out", o.out, "Samples CSV path (default stdout)");
  synth->add_flag("--plaintext", o.plaintext, "Single mode: communication model only");
  add_param_flags(synth, o);

  auto* pre = app.add_subcommand("preset", "Print a bundled parameter set as JSON");
  pre->add_option("name", o.preset, "Preset name");
  pre->add_flag("--list", o.list, "List preset names");
  pre->add_option("--enc", o.enc, "Replace the encdec line");
  pre->add_option("--out", o.out, "Output path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  if (*bench) return cmd_bench(o);
  if (*fit) return cmd_fit(o);
  if (*predict) return cmd_predict(o);
  if (*val) return cmd_validate(o);
  if (*synth) return cmd_synth(o);
  return cmd_preset(o);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const UsageError& e) {
    fmt::print(std::cerr, "usage error: {}\n", e.what());
    return 1;
  } catch (const ConfigError& e) {
    fmt::print(std::cerr, "configuration error: {}\n", e.what());
    return 1;
  } catch (const IntegrityError& e) {
    fmt::print(std::cerr, "integrity error: {}\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    fmt::print(std::cerr, "error: {}\n", e.what());
    return 2;
  }
}
