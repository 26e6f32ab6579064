#include "secmsg/transport.hpp"

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <deque>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/uio.h>
#include <unistd.h>

#include <fmt/format.h>

#include "secmsg/error.hpp"

namespace secmsg {

namespace {

using Clock = std::chrono::steady_clock;

constexpr std::uint32_t kHelloMagic = 0x534D5347;  // "SMSG"
constexpr std::uint32_t kBarrierTag = kReservedTagBase + 1;

void put_u32(std::uint8_t* p, std::uint32_t v) {
  p[0] = static_cast<std::uint8_t>(v);
  p[1] = static_cast<std::uint8_t>(v >> 8);
  p[2] = static_cast<std::uint8_t>(v >> 16);
  p[3] = static_cast<std::uint8_t>(v >> 24);
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::string endpoint_str(const Endpoint& e) { return fmt::format("{}:{}", e.host, e.port); }

sockaddr_in resolve(const Endpoint& e) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const int rc = ::getaddrinfo(e.host.c_str(), nullptr, &hints, &res);
  if (rc != 0 || res == nullptr) {
    throw StartupError(fmt::format("cannot resolve host '{}': {}", e.host, ::gai_strerror(rc)));
  }
  sockaddr_in addr{};
  std::memcpy(&addr, res->ai_addr, sizeof(addr));
  ::freeaddrinfo(res);
  addr.sin_port = htons(e.port);
  return addr;
}

void set_nonblocking(int fd) {
  const int flags = ::fcntl(fd, F_GETFL, 0);
  ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

int remaining_ms(Clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
  return left < 0 ? 0 : static_cast<int>(std::min<long long>(left, 1 << 30));
}

// Blocking-with-deadline exact read/write for the startup handshake.
bool read_exact(int fd, std::uint8_t* buf, std::size_t n, Clock::time_point deadline) {
  std::size_t got = 0;
  while (got < n) {
    pollfd p{fd, POLLIN, 0};
    const int r = ::poll(&p, 1, remaining_ms(deadline));
    if (r == 0) return false;
    if (r < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    const ssize_t k = ::recv(fd, buf + got, n - got, 0);
    if (k <= 0) {
      if (k < 0 && (errno == EINTR || errno == EAGAIN)) continue;
      return false;
    }
    got += static_cast<std::size_t>(k);
  }
  return true;
}

bool write_exact(int fd, const std::uint8_t* buf, std::size_t n) {
  std::size_t put = 0;
  while (put < n) {
    const ssize_t k = ::send(fd, buf + put, n - put, MSG_NOSIGNAL);
    if (k < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    put += static_cast<std::size_t>(k);
  }
  return true;
}

}  // namespace

// ---------------------------------------------------------------------------
// MessageHeader / roster

std::array<std::uint8_t, MessageHeader::kSize> MessageHeader::encode() const {
  std::array<std::uint8_t, kSize> out{};
  put_u32(out.data(), body_length);
  put_u32(out.data() + 4, tag);
  out[8] = static_cast<std::uint8_t>(mode);
  if (mode == WireMode::Cts) out[9] = kCtsMarker;
  return out;
}

MessageHeader MessageHeader::decode(std::span<const std::uint8_t, kSize> raw) {
  MessageHeader h;
  h.body_length = get_u32(raw.data());
  h.tag = get_u32(raw.data() + 4);
  if (raw[8] > static_cast<std::uint8_t>(WireMode::RndvData)) {
    throw ProtocolError(fmt::format("unknown wire mode {}", raw[8]));
  }
  h.mode = static_cast<WireMode>(raw[8]);
  const std::uint8_t expect_pad0 = h.mode == WireMode::Cts ? kCtsMarker : 0;
  if (raw[9] != expect_pad0 || raw[10] != 0 || raw[11] != 0) {
    throw ProtocolError("nonzero header padding");
  }
  if (h.mode == WireMode::Cts && h.body_length != 0) {
    throw ProtocolError("CTS header carries a body length");
  }
  return h;
}

std::vector<Endpoint> parse_roster(std::istream& in) {
  std::map<int, Endpoint> by_rank;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    long rank = -1;
    std::string host;
    long port = -1;
    if (!(ls >> rank)) continue;  // blank
    std::string extra;
    if (!(ls >> host >> port) || (ls >> extra)) {
      throw StartupError(fmt::format("roster line {}: expected 'rank host port'", lineno));
    }
    if (rank < 0 || port <= 0 || port > 65535) {
      throw StartupError(fmt::format("roster line {}: rank or port out of range", lineno));
    }
    if (!by_rank.emplace(static_cast<int>(rank), Endpoint{host, static_cast<std::uint16_t>(port)}).second) {
      throw StartupError(fmt::format("roster line {}: rank {} listed twice", lineno, rank));
    }
  }
  std::vector<Endpoint> roster;
  for (const auto& [rank, ep] : by_rank) {
    if (rank != static_cast<int>(roster.size())) {
      throw StartupError(fmt::format("roster is missing rank {}", roster.size()));
    }
    roster.push_back(ep);
  }
  if (roster.empty()) throw StartupError("roster is empty");
  return roster;
}

std::vector<Endpoint> load_roster(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw StartupError(fmt::format("cannot open roster file {}", path.string()));
  return parse_roster(in);
}

// ---------------------------------------------------------------------------
// Listener

Listener Listener::bind(const Endpoint& at, int backlog) {
  const sockaddr_in addr = resolve(at);
  const int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) throw StartupError(fmt::format("socket(): {}", std::strerror(errno)));
  int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  if (::bind(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0) {
    const int err = errno;
    ::close(fd);
    throw StartupError(fmt::format("cannot bind {}: {}", endpoint_str(at), std::strerror(err)));
  }
  if (::listen(fd, backlog) != 0) {
    const int err = errno;
    ::close(fd);
    throw StartupError(fmt::format("cannot listen on {}: {}", endpoint_str(at), std::strerror(err)));
  }
  sockaddr_in bound{};
  socklen_t len = sizeof(bound);
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&bound), &len);
  Listener l;
  l.fd_ = fd;
  l.port_ = ntohs(bound.sin_port);
  return l;
}

Listener::Listener(Listener&& other) noexcept : fd_(other.fd_), port_(other.port_) { other.fd_ = -1; }

Listener& Listener::operator=(Listener&& other) noexcept {
  if (this != &other) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = other.fd_;
    port_ = other.port_;
    other.fd_ = -1;
  }
  return *this;
}

Listener::~Listener() {
  if (fd_ >= 0) ::close(fd_);
}

int Listener::release() {
  const int fd = fd_;
  fd_ = -1;
  return fd;
}

// ---------------------------------------------------------------------------
// Engine

namespace detail {

struct RequestState {
  RequestKind kind = RequestKind::Send;
  int peer = -1;
  std::uint32_t tag = 0;
  bool arrived = false;
  bool completed = false;
  Bytes data;
  AeadProvider* decrypt_with = nullptr;
};

namespace {

struct Incoming {
  std::uint32_t tag = 0;
  std::uint32_t length = 0;
  bool rts = false;
  bool body_done = false;
  Bytes body;
  std::shared_ptr<RequestState> matched;
};

enum class UnitKind { Eager, RtsHeader, Cts, Data };

struct OutUnit {
  UnitKind kind = UnitKind::Eager;
  std::array<std::uint8_t, MessageHeader::kSize> header{};
  Bytes body;
  std::shared_ptr<RequestState> req;
  std::size_t offset = 0;

  bool writes_body() const { return kind == UnitKind::Eager || kind == UnitKind::Data; }
  std::size_t total() const { return header.size() + (writes_body() ? body.size() : 0); }
};

struct PendingRts {
  std::uint32_t tag = 0;
  Bytes body;
  std::shared_ptr<RequestState> req;
};

struct Peer {
  int fd = -1;
  bool closed = false;

  std::deque<OutUnit> outq;
  std::optional<OutUnit> current;
  std::deque<PendingRts> awaiting_cts;

  std::array<std::uint8_t, MessageHeader::kSize> hdr{};
  std::size_t hdr_off = 0;
  std::shared_ptr<Incoming> reading;
  std::size_t body_off = 0;

  std::deque<std::shared_ptr<Incoming>> unmatched;
  std::deque<std::shared_ptr<RequestState>> posted;
  std::deque<std::shared_ptr<Incoming>> rndv_pending;

  bool wants_write() const { return current.has_value() || !outq.empty(); }
};

template <typename Deque, typename Pred>
auto take_first(Deque& d, Pred pred) -> std::optional<typename Deque::value_type> {
  const auto it = std::find_if(d.begin(), d.end(), pred);
  if (it == d.end()) return std::nullopt;
  auto v = std::move(*it);
  d.erase(it);
  return v;
}

}  // namespace

class Engine {
 public:
  Engine(int rank, int size, GroupOptions opts) : rank_(rank), size_(size), opts_(opts), peers_(size) {}

  ~Engine() {
    for (auto& p : peers_) {
      if (p.fd >= 0) {
        ::shutdown(p.fd, SHUT_WR);
        ::close(p.fd);
      }
    }
  }

  int rank() const { return rank_; }
  int size() const { return size_; }
  const GroupOptions& options() const { return opts_; }
  WireStats stats;
  ProcessGroup::WireTap tap;
  std::unique_ptr<AeadProvider> provider;

  std::size_t connection_count() const {
    return static_cast<std::size_t>(
        std::count_if(peers_.begin(), peers_.end(), [](const Peer& p) { return p.fd >= 0 && !p.closed; }));
  }

  void start(const std::vector<Endpoint>& roster, Listener listener);

  std::shared_ptr<RequestState> post_send(int dest, std::uint32_t tag, Bytes&& body, std::size_t classify_len) {
    Peer& p = peer_for(dest, "send to");
    if (p.closed) throw TransportError(fmt::format("rank {}: connection to rank {} is closed", rank_, dest));
    if (body.size() > UINT32_MAX) throw ProtocolError("message body exceeds 4 GiB");
    auto req = std::make_shared<RequestState>();
    req->kind = RequestKind::Send;
    req->peer = dest;
    req->tag = tag;
    OutUnit u;
    MessageHeader h{static_cast<std::uint32_t>(body.size()), tag, WireMode::Eager};
    if (classify_len >= opts_.phase_threshold) {
      h.mode = WireMode::Rts;
      u.kind = UnitKind::RtsHeader;
      ++stats.rendezvous_sent;
    } else {
      u.kind = UnitKind::Eager;
      ++stats.messages_sent;
    }
    u.header = h.encode();
    u.body = std::move(body);
    u.req = req;
    p.outq.push_back(std::move(u));
    flush(dest);
    return req;
  }

  std::shared_ptr<RequestState> post_recv(int src, std::uint32_t tag) {
    Peer& p = peer_for(src, "receive from");
    auto req = std::make_shared<RequestState>();
    req->kind = RequestKind::Recv;
    req->peer = src;
    req->tag = tag;
    if (auto inc = take_first(p.unmatched, [tag](const auto& i) { return i->tag == tag; })) {
      pair(src, req, *inc);
    } else {
      p.posted.push_back(req);
    }
    if (p.wants_write()) flush(src);
    return req;
  }

  void wait(RequestState& r) {
    if (r.completed) return;
    const auto deadline = opts_.op_timeout.count() > 0 ? Clock::now() + opts_.op_timeout : Clock::time_point::max();
    while (!r.arrived) {
      if (peers_[r.peer].closed) {
        throw TransportError(
            fmt::format("rank {}: rank {} disconnected with tag {} outstanding", rank_, r.peer, r.tag));
      }
      if (Clock::now() >= deadline) {
        throw TransportError(fmt::format("rank {}: timed out waiting on rank {} tag {}", rank_, r.peer, r.tag));
      }
      progress(deadline);
    }
    if (r.decrypt_with != nullptr) {
      Bytes plain = r.decrypt_with->open_bytes(r.data);
      r.data = std::move(plain);
      r.decrypt_with = nullptr;
    }
    r.completed = true;
  }

  void waitall(std::span<RequestHandle> hs);

 private:
  Peer& peer_for(int r, const char* what) {
    if (r < 0 || r >= size_) throw ProtocolError(fmt::format("cannot {} rank {}: group size is {}", what, r, size_));
    if (r == rank_) throw ProtocolError(fmt::format("rank {}: self messages are not routed over the wire", rank_));
    return peers_[r];
  }

  void pair(int src, const std::shared_ptr<RequestState>& req, const std::shared_ptr<Incoming>& inc) {
    Peer& p = peers_[src];
    inc->matched = req;
    if (inc->rts) {
      OutUnit cts;
      cts.kind = UnitKind::Cts;
      cts.header = MessageHeader{0, inc->tag, WireMode::Cts}.encode();
      p.outq.push_front(std::move(cts));
      p.rndv_pending.push_back(inc);
    } else if (inc->body_done) {
      finish(*req, *inc);
    }
  }

  static void finish(RequestState& req, Incoming& inc) {
    req.data = std::move(inc.body);
    req.arrived = true;
  }

  void arrive(int src, std::shared_ptr<Incoming> inc) {
    Peer& p = peers_[src];
    if (auto req = take_first(p.posted, [&](const auto& r) { return r->tag == inc->tag; })) {
      pair(src, *req, inc);
    } else {
      p.unmatched.push_back(std::move(inc));
    }
  }

  void body_complete(Peer& p) {
    auto inc = std::move(p.reading);
    p.reading.reset();
    p.body_off = 0;
    inc->body_done = true;
    if (inc->matched) finish(*inc->matched, *inc);
  }

  void dispatch(int src) {
    Peer& p = peers_[src];
    const MessageHeader h = MessageHeader::decode(std::span<const std::uint8_t, MessageHeader::kSize>(p.hdr));
    p.hdr_off = 0;
    switch (h.mode) {
      case WireMode::Eager: {
        auto inc = std::make_shared<Incoming>();
        inc->tag = h.tag;
        inc->length = h.body_length;
        inc->body.resize(h.body_length);
        inc->body_done = h.body_length == 0;
        if (!inc->body_done) p.reading = inc;
        arrive(src, std::move(inc));
        break;
      }
      case WireMode::Rts: {
        auto inc = std::make_shared<Incoming>();
        inc->tag = h.tag;
        inc->length = h.body_length;
        inc->rts = true;
        arrive(src, std::move(inc));
        break;
      }
      case WireMode::Cts: {
        auto pending = take_first(p.awaiting_cts, [&](const PendingRts& r) { return r.tag == h.tag; });
        if (!pending) throw ProtocolError(fmt::format("rank {}: unexpected CTS from rank {} tag {}", rank_, src, h.tag));
        OutUnit u;
        u.kind = UnitKind::Data;
        u.header = MessageHeader{static_cast<std::uint32_t>(pending->body.size()), h.tag, WireMode::RndvData}.encode();
        u.body = std::move(pending->body);
        u.req = std::move(pending->req);
        p.outq.push_back(std::move(u));
        ++stats.messages_sent;
        break;
      }
      case WireMode::RndvData: {
        auto inc = take_first(p.rndv_pending, [&](const auto& i) { return i->tag == h.tag; });
        if (!inc || (*inc)->length != h.body_length) {
          throw ProtocolError(fmt::format("rank {}: rendezvous data from rank {} tag {} without a matching CTS",
                                          rank_, src, h.tag));
        }
        (*inc)->body.resize(h.body_length);
        p.reading = *inc;
        if (h.body_length == 0) body_complete(p);
        break;
      }
    }
  }

  void mark_closed(int r, bool mid_message) {
    peers_[r].closed = true;
    if (mid_message) {
      throw TransportError(fmt::format("rank {}: rank {} closed the connection mid-message", rank_, r));
    }
  }

  void drain(int src) {
    Peer& p = peers_[src];
    while (!p.closed) {
      std::uint8_t* dst;
      std::size_t want;
      if (p.reading) {
        dst = p.reading->body.data() + p.body_off;
        want = p.reading->body.size() - p.body_off;
      } else {
        dst = p.hdr.data() + p.hdr_off;
        want = p.hdr.size() - p.hdr_off;
      }
      const ssize_t k = ::recv(p.fd, dst, want, 0);
      if (k == 0) {
        mark_closed(src, p.reading != nullptr || p.hdr_off > 0);
        return;
      }
      if (k < 0) {
        if (errno == EINTR) continue;
        if (errno == EAGAIN || errno == EWOULDBLOCK) return;
        if (errno == ECONNRESET) {
          mark_closed(src, p.reading != nullptr || p.hdr_off > 0);
          return;
        }
        throw TransportError(fmt::format("rank {}: recv from rank {}: {}", rank_, src, std::strerror(errno)));
      }
      stats.bytes_received += static_cast<std::uint64_t>(k);
      if (p.reading) {
        p.body_off += static_cast<std::size_t>(k);
        if (p.body_off == p.reading->body.size()) body_complete(p);
      } else {
        p.hdr_off += static_cast<std::size_t>(k);
        if (p.hdr_off == p.hdr.size()) dispatch(src);
      }
    }
  }

  void unit_written(Peer& p, OutUnit& u) {
    switch (u.kind) {
      case UnitKind::Eager:
      case UnitKind::Data:
        u.req->arrived = true;
        break;
      case UnitKind::RtsHeader:
        p.awaiting_cts.push_back(PendingRts{get_u32(u.header.data() + 4), std::move(u.body), std::move(u.req)});
        break;
      case UnitKind::Cts:
        break;
    }
  }

  /// Writes as much queued output as the socket takes. Returns true when at
  /// least one unit finished.
  bool flush(int dest) {
    Peer& p = peers_[dest];
    bool finished = false;
    while (true) {
      if (!p.current) {
        if (p.outq.empty()) return finished;
        p.current = std::move(p.outq.front());
        p.outq.pop_front();
      }
      OutUnit& u = *p.current;
      iovec iov[2];
      int iovcnt = 0;
      const std::size_t hlen = u.header.size();
      if (u.offset < hlen) {
        iov[iovcnt++] = {u.header.data() + u.offset, hlen - u.offset};
      }
      if (u.writes_body() && !u.body.empty()) {
        const std::size_t boff = u.offset > hlen ? u.offset - hlen : 0;
        iov[iovcnt++] = {u.body.data() + boff, u.body.size() - boff};
      }
      msghdr msg{};
      msg.msg_iov = iov;
      msg.msg_iovlen = static_cast<std::size_t>(iovcnt);
      const ssize_t k = ::sendmsg(p.fd, &msg, MSG_NOSIGNAL | MSG_DONTWAIT);
      if (k < 0) {
        if (errno == EINTR) continue;
        if (errno == EAGAIN || errno == EWOULDBLOCK) return finished;
        p.closed = true;
        throw TransportError(fmt::format("rank {}: send to rank {}: {}", rank_, dest, std::strerror(errno)));
      }
      const auto written = static_cast<std::size_t>(k);
      stats.bytes_sent += written;
      if (tap) {
        std::size_t left = written;
        for (int i = 0; i < iovcnt && left > 0; ++i) {
          const std::size_t n = std::min(left, iov[i].iov_len);
          tap(dest, ByteSpan(static_cast<const std::uint8_t*>(iov[i].iov_base), n));
          left -= n;
        }
      }
      u.offset += written;
      if (u.offset == u.total()) {
        OutUnit done = std::move(*p.current);
        p.current.reset();
        unit_written(p, done);
        finished = true;
      }
    }
  }

  void progress(Clock::time_point deadline) {
    bool finished = false;
    for (int r = 0; r < size_; ++r) {
      if (r != rank_ && !peers_[r].closed && peers_[r].wants_write()) finished |= flush(r);
    }
    // A completed unit may be what the caller waits for; let it re-check.
    if (finished) return;
    std::vector<pollfd> fds;
    std::vector<int> ranks;
    fds.reserve(static_cast<std::size_t>(size_));
    for (int r = 0; r < size_; ++r) {
      if (r == rank_ || peers_[r].closed || peers_[r].fd < 0) continue;
      short ev = POLLIN;
      if (peers_[r].wants_write()) ev |= POLLOUT;
      fds.push_back(pollfd{peers_[r].fd, ev, 0});
      ranks.push_back(r);
    }
    if (fds.empty()) return;
    const int timeout = deadline == Clock::time_point::max() ? 1000 : std::min(remaining_ms(deadline), 1000);
    const int n = ::poll(fds.data(), fds.size(), timeout);
    if (n < 0) {
      if (errno == EINTR) return;
      throw TransportError(fmt::format("poll: {}", std::strerror(errno)));
    }
    for (std::size_t i = 0; i < fds.size(); ++i) {
      const int r = ranks[i];
      if (fds[i].revents & (POLLIN | POLLHUP | POLLERR)) drain(r);
      // Draining can queue a CTS or rendezvous body; send it right away.
      if (!peers_[r].closed && peers_[r].wants_write()) flush(r);
    }
  }

  int rank_;
  int size_;
  GroupOptions opts_;
  std::vector<Peer> peers_;
};

void Engine::waitall(std::span<RequestHandle> hs) {
  const auto deadline = opts_.op_timeout.count() > 0 ? Clock::now() + opts_.op_timeout : Clock::time_point::max();
  while (true) {
    bool all = true;
    for (auto& h : hs) {
      const RequestState& r = *h.state_;
      if (r.arrived) continue;
      all = false;
      if (peers_[r.peer].closed) {
        throw TransportError(
            fmt::format("rank {}: rank {} disconnected with tag {} outstanding", rank_, r.peer, r.tag));
      }
    }
    if (all) break;
    if (Clock::now() >= deadline) throw TransportError(fmt::format("rank {}: timed out in waitall", rank_));
    progress(deadline);
  }
  // Decrypt everything; report the first integrity failure after the rest are done.
  std::exception_ptr first;
  for (auto& h : hs) {
    try {
      wait(*h.state_);
    } catch (...) {
      if (!first) first = std::current_exception();
    }
  }
  if (first) std::rethrow_exception(first);
}

void Engine::start(const std::vector<Endpoint>& roster, Listener listener) {
  if (size_ == 1) return;
  const auto deadline = Clock::now() + opts_.startup_timeout;

  auto hello = [&] {
    std::array<std::uint8_t, 12> h{};
    put_u32(h.data(), kHelloMagic);
    put_u32(h.data() + 4, static_cast<std::uint32_t>(rank_));
    put_u32(h.data() + 8, static_cast<std::uint32_t>(size_));
    return h;
  }();

  for (int j = 0; j < rank_; ++j) {
    const sockaddr_in addr = resolve(roster[j]);
    int fd = -1;
    while (true) {
      fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
      if (fd < 0) throw StartupError(fmt::format("socket(): {}", std::strerror(errno)));
      if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) == 0) break;
      ::close(fd);
      fd = -1;
      if (Clock::now() >= deadline) {
        throw StartupError(
            fmt::format("rank {}: rank {} unreachable at {} before timeout", rank_, j, endpoint_str(roster[j])));
      }
      ::usleep(20000);
    }
    if (!write_exact(fd, hello.data(), hello.size())) {
      ::close(fd);
      throw StartupError(fmt::format("rank {}: handshake with rank {} failed", rank_, j));
    }
    peers_[j].fd = fd;
  }

  std::set<int> missing;
  for (int j = rank_ + 1; j < size_; ++j) missing.insert(j);
  auto missing_str = [&] {
    std::string s;
    for (int j : missing) s += fmt::format("{}{} ({})", s.empty() ? "" : ", ", j, endpoint_str(roster[j]));
    return s;
  };
  while (!missing.empty()) {
    pollfd pfd{listener.fd(), POLLIN, 0};
    const int r = ::poll(&pfd, 1, remaining_ms(deadline));
    if (r == 0) {
      throw StartupError(fmt::format("rank {}: timed out waiting for rank(s) {}", rank_, missing_str()));
    }
    if (r < 0) {
      if (errno == EINTR) continue;
      throw StartupError(fmt::format("poll: {}", std::strerror(errno)));
    }
    const int fd = ::accept4(listener.fd(), nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) continue;
    std::array<std::uint8_t, 12> h{};
    if (!read_exact(fd, h.data(), h.size(), deadline)) {
      ::close(fd);
      continue;
    }
    const std::uint32_t magic = get_u32(h.data());
    const int from = static_cast<int>(get_u32(h.data() + 4));
    const int n = static_cast<int>(get_u32(h.data() + 8));
    if (magic != kHelloMagic || n != size_ || !missing.contains(from)) {
      ::close(fd);
      throw StartupError(fmt::format("rank {}: bad handshake (magic {:#x}, rank {}, size {})", rank_, magic, from, n));
    }
    peers_[from].fd = fd;
    missing.erase(from);
  }

  for (int j = 0; j < size_; ++j) {
    if (j == rank_) continue;
    set_nonblocking(peers_[j].fd);
    set_nodelay(peers_[j].fd);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// RequestHandle

RequestKind RequestHandle::kind() const { return state_->kind; }
bool RequestHandle::completed() const { return state_ && state_->completed; }
int RequestHandle::peer() const { return state_->peer; }
std::uint32_t RequestHandle::tag() const { return state_->tag; }
const Bytes& RequestHandle::data() const { return state_->data; }
Bytes RequestHandle::take() { return std::move(state_->data); }

// ---------------------------------------------------------------------------
// ProcessGroup

ProcessGroup::ProcessGroup(std::unique_ptr<detail::Engine> engine) : engine_(std::move(engine)) {}
ProcessGroup::ProcessGroup(ProcessGroup&&) noexcept = default;
ProcessGroup& ProcessGroup::operator=(ProcessGroup&&) noexcept = default;
ProcessGroup::~ProcessGroup() = default;

namespace {

void check_roster(int rank, const std::vector<Endpoint>& roster) {
  if (roster.empty()) throw StartupError("roster is empty");
  if (rank < 0 || rank >= static_cast<int>(roster.size())) {
    throw StartupError(fmt::format("rank {} is outside a roster of {}", rank, roster.size()));
  }
  std::map<std::pair<std::uint32_t, std::uint16_t>, int> seen;
  for (int i = 0; i < static_cast<int>(roster.size()); ++i) {
    const sockaddr_in a = resolve(roster[i]);
    auto [it, fresh] = seen.emplace(std::pair{a.sin_addr.s_addr, roster[i].port}, i);
    if (!fresh) {
      throw StartupError(fmt::format("ranks {} and {} share endpoint {}", it->second, i, endpoint_str(roster[i])));
    }
  }
}

}  // namespace

ProcessGroup ProcessGroup::connect(int rank, const std::vector<Endpoint>& roster, GroupOptions options) {
  check_roster(rank, roster);
  Listener l;
  if (roster.size() > 1) l = Listener::bind(roster[rank]);
  return connect(rank, roster, std::move(l), options);
}

ProcessGroup ProcessGroup::connect(int rank, const std::vector<Endpoint>& roster, Listener listener,
                                   GroupOptions options) {
  check_roster(rank, roster);
  auto engine = std::make_unique<detail::Engine>(rank, static_cast<int>(roster.size()), options);
  engine->start(roster, std::move(listener));
  ProcessGroup g(std::move(engine));
  g.barrier();
  g.reset_stats();
  return g;
}

int ProcessGroup::rank() const { return engine_->rank(); }
int ProcessGroup::size() const { return engine_->size(); }
std::size_t ProcessGroup::phase_threshold() const { return engine_->options().phase_threshold; }
std::size_t ProcessGroup::connection_count() const { return engine_->connection_count(); }
const WireStats& ProcessGroup::stats() const { return engine_->stats; }
void ProcessGroup::reset_stats() { engine_->stats = {}; }
void ProcessGroup::set_wire_tap(WireTap tap) { engine_->tap = std::move(tap); }
void ProcessGroup::set_provider(std::unique_ptr<AeadProvider> provider) { engine_->provider = std::move(provider); }
AeadProvider* ProcessGroup::provider() const { return engine_->provider.get(); }

void ProcessGroup::send(int dest, std::uint32_t tag, ByteSpan body) {
  auto h = isend(dest, tag, body);
  wait(h);
}

Bytes ProcessGroup::recv(int src, std::uint32_t tag) {
  auto h = irecv(src, tag);
  wait(h);
  return h.take();
}

RequestHandle ProcessGroup::isend(int dest, std::uint32_t tag, ByteSpan body) {
  return isend(dest, tag, Bytes(body.begin(), body.end()));
}

RequestHandle ProcessGroup::isend(int dest, std::uint32_t tag, Bytes&& body) {
  const std::size_t len = body.size();
  return RequestHandle(engine_->post_send(dest, tag, std::move(body), len));
}

RequestHandle ProcessGroup::irecv(int src, std::uint32_t tag) { return RequestHandle(engine_->post_recv(src, tag)); }

void ProcessGroup::wait(RequestHandle& h) {
  if (!h.valid()) throw ProtocolError("wait on an empty request handle");
  engine_->wait(*h.state_);
}

void ProcessGroup::waitall(std::span<RequestHandle> hs) {
  for (const auto& h : hs) {
    if (!h.valid()) throw ProtocolError("waitall on an empty request handle");
  }
  engine_->waitall(hs);
}

namespace {
AeadProvider& require_provider(AeadProvider* p) {
  if (p == nullptr) throw ConfigError("encrypted messaging needs a provider; call set_provider first");
  return *p;
}
}  // namespace

void ProcessGroup::encrypted_send(int dest, std::uint32_t tag, ByteSpan body) {
  auto h = encrypted_isend(dest, tag, body);
  wait(h);
}

Bytes ProcessGroup::encrypted_recv(int src, std::uint32_t tag) {
  auto h = encrypted_irecv(src, tag);
  wait(h);
  return h.take();
}

RequestHandle ProcessGroup::encrypted_isend(int dest, std::uint32_t tag, ByteSpan body) {
  Bytes wire = require_provider(provider()).seal_to_bytes(body);
  return RequestHandle(engine_->post_send(dest, tag, std::move(wire), body.size()));
}

RequestHandle ProcessGroup::encrypted_irecv(int src, std::uint32_t tag) {
  AeadProvider& p = require_provider(provider());
  auto state = engine_->post_recv(src, tag);
  state->decrypt_with = &p;
  return RequestHandle(std::move(state));
}

void ProcessGroup::barrier() {
  const int n = size();
  if (n == 1) return;
  const std::array<std::uint8_t, 1> token{1};
  if (rank() == 0) {
    std::vector<RequestHandle> hs;
    for (int r = 1; r < n; ++r) hs.push_back(irecv(r, kBarrierTag));
    waitall(hs);
    hs.clear();
    for (int r = 1; r < n; ++r) hs.push_back(isend(r, kBarrierTag, token));
    waitall(hs);
  } else {
    send(0, kBarrierTag, token);
    recv(0, kBarrierTag);
  }
}

}  // namespace secmsg
