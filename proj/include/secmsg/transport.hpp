#pragma once

#include <array>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "secmsg/aead.hpp"

namespace secmsg {

inline constexpr std::size_t kDefaultPhaseThreshold = 131072;

/// Tags at or above this value are reserved for barriers and collectives.
inline constexpr std::uint32_t kReservedTagBase = 0xFFFF0000u;

enum class WireMode : std::uint8_t {
  Eager = 0,
  Rts = 1,
  Cts = 2,
  RndvData = 3,
};

/// 12-byte little-endian header preceding every unit on the wire:
/// [u32 body_length][u32 tag][u8 mode][u8 x3 padding].
struct MessageHeader {
  static constexpr std::size_t kSize = 12;
  static constexpr std::uint8_t kCtsMarker = 0xC7;

  std::uint32_t body_length = 0;
  std::uint32_t tag = 0;
  WireMode mode = WireMode::Eager;

  std::array<std::uint8_t, kSize> encode() const;
  /// Throws ProtocolError on an unknown mode or bad padding.
  static MessageHeader decode(std::span<const std::uint8_t, kSize> raw);
};

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;
};

/// Parses `rank host port` lines. Blank lines and `#` comments are skipped;
/// ranks must cover 0..n-1 exactly once.
std::vector<Endpoint> parse_roster(std::istream& in);
std::vector<Endpoint> load_roster(const std::filesystem::path& path);

struct GroupOptions {
  /// Plaintext sizes at or above this go through RTS/CTS.
  std::size_t phase_threshold = kDefaultPhaseThreshold;
  std::chrono::milliseconds startup_timeout{30000};
  /// Upper bound on a single wait; zero waits forever.
  std::chrono::milliseconds op_timeout{0};
};

struct WireStats {
  std::uint64_t bytes_sent = 0;
  std::uint64_t bytes_received = 0;
  std::uint64_t messages_sent = 0;
  std::uint64_t rendezvous_sent = 0;
};

/// Bound, listening TCP socket. Lets a launcher reserve ports before ranks start.
class Listener {
 public:
  static Listener bind(const Endpoint& at, int backlog = 128);

  Listener() = default;
  Listener(Listener&& other) noexcept;
  Listener& operator=(Listener&& other) noexcept;
  Listener(const Listener&) = delete;
  Listener& operator=(const Listener&) = delete;
  ~Listener();

  int fd() const { return fd_; }
  std::uint16_t port() const { return port_; }
  int release();

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

namespace detail {
struct RequestState;
class Engine;
}  // namespace detail

enum class RequestKind { Send, Recv };

/// Handle to a non-blocking operation. Copies share the same operation.
class RequestHandle {
 public:
  RequestHandle() = default;

  RequestKind kind() const;
  bool valid() const { return state_ != nullptr; }
  /// True once wait() has returned successfully for this operation.
  bool completed() const;
  int peer() const;
  std::uint32_t tag() const;

  /// Received payload. Only meaningful for receives after wait().
  const Bytes& data() const;
  Bytes take();

 private:
  friend class ProcessGroup;
  friend class detail::Engine;
  explicit RequestHandle(std::shared_ptr<detail::RequestState> s) : state_(std::move(s)) {}
  std::shared_ptr<detail::RequestState> state_;
};

/// Rank-addressed messaging over a full TCP mesh.
///
/// Sends below the phase threshold go out eagerly; larger ones announce
/// themselves with RTS and move the body only after the receiver has posted
/// a matching receive. Progress happens inside wait()/waitall() and the
/// blocking calls. A group is not thread-safe: one thread drives it.
class ProcessGroup {
 public:
  /// Binds the roster entry for `rank`, connects the mesh, and returns after
  /// a barrier, so every peer is connected to every other when this returns.
  static ProcessGroup connect(int rank, const std::vector<Endpoint>& roster, GroupOptions options = {});
  /// Same, with the listening socket already bound by the caller.
  static ProcessGroup connect(int rank, const std::vector<Endpoint>& roster, Listener listener,
                              GroupOptions options = {});

  ProcessGroup(ProcessGroup&&) noexcept;
  ProcessGroup& operator=(ProcessGroup&&) noexcept;
  ~ProcessGroup();

  int rank() const;
  int size() const;
  std::size_t phase_threshold() const;
  /// Live peer connections held by this rank (n - 1 after startup).
  std::size_t connection_count() const;
  const WireStats& stats() const;
  void reset_stats();

  /// Observes every byte this rank writes to a peer socket.
  using WireTap = std::function<void(int peer, ByteSpan bytes)>;
  void set_wire_tap(WireTap tap);

  /// Provider used by the encrypted_* calls.
  void set_provider(std::unique_ptr<AeadProvider> provider);
  AeadProvider* provider() const;

  void send(int dest, std::uint32_t tag, ByteSpan body);
  Bytes recv(int src, std::uint32_t tag);
  RequestHandle isend(int dest, std::uint32_t tag, ByteSpan body);
  RequestHandle isend(int dest, std::uint32_t tag, Bytes&& body);
  RequestHandle irecv(int src, std::uint32_t tag);
  void wait(RequestHandle& h);
  void waitall(std::span<RequestHandle> hs);

  /// seal() before sending; the wire body is plaintext + 28 bytes.
  void encrypted_send(int dest, std::uint32_t tag, ByteSpan body);
  Bytes encrypted_recv(int src, std::uint32_t tag);
  RequestHandle encrypted_isend(int dest, std::uint32_t tag, ByteSpan body);
  /// The frame is opened inside wait(); integrity failures surface there.
  RequestHandle encrypted_irecv(int src, std::uint32_t tag);

  void barrier();

 private:
  explicit ProcessGroup(std::unique_ptr<detail::Engine> engine);
  std::unique_ptr<detail::Engine> engine_;
};

}  // namespace secmsg
