#include <algorithm>
#include <charconv>
#include <istream>
#include <ostream>
#include <string>

#include <fmt/format.h>

#include "secmsg/benchmarks.hpp"
#include "secmsg/error.hpp"

namespace secmsg {

namespace {

constexpr std::string_view kHeader = "size_bytes,k_pairs,run_index,latency_us";

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

template <typename T>
T parse_field(std::string_view text, std::size_t line, std::string_view column) {
  text = trim(text);
  T value{};
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || end != text.data() + text.size()) {
    throw FormatError(fmt::format("samples CSV line {}: bad {} value '{}'", line, column, text));
  }
  return value;
}

}  // namespace

void write_samples_csv(std::ostream& out, std::vector<LatencySample> samples) {
  std::stable_sort(samples.begin(), samples.end(), [](const LatencySample& a, const LatencySample& b) {
    if (a.message_size != b.message_size) return a.message_size < b.message_size;
    if (a.k_pairs != b.k_pairs) return a.k_pairs < b.k_pairs;
    return a.run_index < b.run_index;
  });
  out << kHeader << '\n';
  for (const auto& s : samples) {
    out << fmt::format("{},{},{},{}\n", s.message_size, s.k_pairs, s.run_index, s.latency_us);
  }
}

std::vector<LatencySample> read_samples_csv(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  bool seen_header = false;
  std::vector<LatencySample> out;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view row = trim(line);
    if (row.empty()) continue;
    if (!seen_header) {
      if (row != kHeader) {
        throw FormatError(fmt::format("samples CSV must start with '{}', got '{}'", kHeader, row));
      }
      seen_header = true;
      continue;
    }
    std::string_view fields[4];
    std::size_t count = 0;
    std::string_view rest = row;
    while (count < 4) {
      const auto comma = rest.find(',');
      fields[count++] = rest.substr(0, comma);
      if (comma == std::string_view::npos) {
        rest = {};
        break;
      }
      rest.remove_prefix(comma + 1);
    }
    if (count != 4 || !rest.empty()) {
      throw FormatError(fmt::format("samples CSV line {}: expected 4 fields", lineno));
    }
    LatencySample s;
    s.message_size = parse_field<std::size_t>(fields[0], lineno, "size_bytes");
    s.k_pairs = parse_field<int>(fields[1], lineno, "k_pairs");
    s.run_index = parse_field<int>(fields[2], lineno, "run_index");
    s.latency_us = parse_field<double>(fields[3], lineno, "latency_us");
    if (s.k_pairs < 1) throw FormatError(fmt::format("samples CSV line {}: k_pairs must be >= 1", lineno));
    if (!(s.latency_us > 0.0)) throw FormatError(fmt::format("samples CSV line {}: latency must be > 0", lineno));
    out.push_back(s);
  }
  if (!seen_header) throw FormatError("samples CSV is empty");
  return out;
}

}  // namespace secmsg
