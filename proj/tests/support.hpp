#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <random>

#include "secmsg/aead.hpp"
#include "secmsg/local_group.hpp"

namespace secmsg::testing {

inline Bytes random_bytes(std::mt19937_64& rng, std::size_t n) {
  Bytes b(n);
  for (auto& x : b) x = static_cast<std::uint8_t>(rng());
  return b;
}

/// Loopback group whose waits give up instead of hanging a failing test.
inline void local_group(int n, const std::function<void(ProcessGroup&)>& body,
                        std::size_t threshold = kDefaultPhaseThreshold) {
  GroupOptions o;
  o.phase_threshold = threshold;
  o.op_timeout = std::chrono::seconds(60);
  run_local_group(n, body, o);
}

}  // namespace secmsg::testing
