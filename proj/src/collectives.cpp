#include "secmsg/collectives.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>

#include <fmt/format.h>

#include "secmsg/error.hpp"

namespace secmsg {

namespace {

constexpr std::uint32_t kBcastTag = kReservedTagBase + 16;
constexpr std::uint32_t kAllgatherTag = kReservedTagBase + 17;
constexpr std::uint32_t kAlltoallTag = kReservedTagBase + 18;
constexpr std::uint32_t kAlltoallvTag = kReservedTagBase + 19;
constexpr std::uint32_t kLengthsTag = kReservedTagBase + 20;

/// Every rank sends blocks[i] to rank i and gets rank i's block for it back.
/// Self block is moved without touching the wire.
std::vector<Bytes> exchange(ProcessGroup& g, std::vector<Bytes> blocks, std::uint32_t tag) {
  const int n = g.size();
  const int me = g.rank();
  std::vector<Bytes> out(static_cast<std::size_t>(n));
  std::vector<RequestHandle> recvs(static_cast<std::size_t>(n));
  std::vector<RequestHandle> sends;
  sends.reserve(static_cast<std::size_t>(n));
  for (int s = 1; s < n; ++s) {
    const int src = (me - s + n) % n;
    recvs[src] = g.irecv(src, tag);
  }
  for (int s = 1; s < n; ++s) {
    const int dst = (me + s) % n;
    sends.push_back(g.isend(dst, tag, std::move(blocks[dst])));
  }
  out[me] = std::move(blocks[me]);
  std::vector<RequestHandle> all;
  for (int r = 0; r < n; ++r) {
    if (r != me) all.push_back(recvs[r]);
  }
  all.insert(all.end(), sends.begin(), sends.end());
  g.waitall(all);
  for (int r = 0; r < n; ++r) {
    if (r != me) out[r] = recvs[r].take();
  }
  return out;
}

Bytes encode_lengths(std::span<const std::size_t> v) {
  Bytes out(v.size() * 8);
  for (std::size_t i = 0; i < v.size(); ++i) {
    for (int b = 0; b < 8; ++b) out[i * 8 + b] = static_cast<std::uint8_t>(static_cast<std::uint64_t>(v[i]) >> (8 * b));
  }
  return out;
}

std::uint64_t decode_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(p[b]) << (8 * b);
  return v;
}

void check_group_size(const ProcessGroup& g, std::size_t elements, const char* what) {
  if (elements != static_cast<std::size_t>(g.size())) {
    throw ProtocolError(fmt::format("{} needs exactly {} elements, got {}", what, g.size(), elements));
  }
}

void open_from(AeadProvider& aead, ByteSpan frame, MutableByteSpan out, int src) {
  try {
    aead.open_into(frame, out);
  } catch (const IntegrityError& e) {
    throw IntegrityError(fmt::format("frame from rank {} failed authentication: {}", src, e.what()));
  }
}

Bytes open_from(AeadProvider& aead, ByteSpan frame, int src) {
  if (frame.size() < kFrameOverhead) {
    throw IntegrityError(fmt::format("frame from rank {} is only {} bytes", src, frame.size()));
  }
  Bytes out(frame.size() - kFrameOverhead);
  open_from(aead, frame, out, src);
  return out;
}

/// Validates the alltoallv length matrix. Every rank learns the verdict, so
/// either all ranks proceed or all throw.
void agree_on_lengths(ProcessGroup& g, std::span<const std::size_t> send_lengths,
                      std::span<const std::size_t> recv_lengths) {
  const int n = g.size();
  const int me = g.rank();
  std::vector<Bytes> blocks(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) blocks[r] = encode_lengths(send_lengths.subspan(r, 1));
  const auto announced = exchange(g, std::move(blocks), kLengthsTag);
  std::string problem;
  for (int r = 0; r < n && problem.empty(); ++r) {
    const std::uint64_t got = decode_u64(announced[r].data());
    if (got != recv_lengths[r]) {
      problem = fmt::format("rank {} will send {} bytes to rank {}, which expects {}", r, got, me, recv_lengths[r]);
    }
  }
  const std::uint8_t ok = problem.empty() ? 1 : 0;
  const auto verdicts = allgather(g, ByteSpan(&ok, 1));
  for (int r = 0; r < n; ++r) {
    if (verdicts[r][0] == 0) {
      throw ProtocolError(problem.empty() ? fmt::format("alltoallv length mismatch detected at rank {}", r)
                                          : "alltoallv length mismatch: " + problem);
    }
  }
}

}  // namespace

std::string_view to_string(CollectiveOp op) {
  switch (op) {
    case CollectiveOp::Bcast:
      return "bcast";
    case CollectiveOp::Allgather:
      return "allgather";
    case CollectiveOp::Alltoall:
      return "alltoall";
    case CollectiveOp::Alltoallv:
      return "alltoallv";
  }
  return "unknown";
}

CollectiveOp parse_collective(std::string_view name) {
  for (auto op : {CollectiveOp::Bcast, CollectiveOp::Allgather, CollectiveOp::Alltoall, CollectiveOp::Alltoallv}) {
    if (name == to_string(op)) return op;
  }
  throw ProtocolError(fmt::format("unknown collective '{}'", name));
}

VariableLayout VariableLayout::packed(std::vector<std::size_t> lengths) {
  VariableLayout l;
  l.displacements.resize(lengths.size());
  std::size_t off = 0;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    l.displacements[i] = off;
    off += lengths[i];
  }
  l.lengths = std::move(lengths);
  return l;
}

std::size_t VariableLayout::total() const {
  return std::accumulate(lengths.begin(), lengths.end(), std::size_t{0});
}

VariableLayout encrypted_layout(const VariableLayout& plain) {
  std::vector<std::size_t> grown(plain.lengths);
  for (auto& l : grown) l += kFrameOverhead;
  return VariableLayout::packed(std::move(grown));
}

// ---------------------------------------------------------------------------
// plaintext

Bytes bcast(ProcessGroup& g, int root, ByteSpan body) {
  const int n = g.size();
  if (root < 0 || root >= n) throw ProtocolError(fmt::format("bcast root {} outside group of {}", root, n));
  const int vr = (g.rank() - root + n) % n;
  Bytes data;
  int mask = 1;
  if (vr == 0) {
    data.assign(body.begin(), body.end());
    while (mask < n) mask <<= 1;
  } else {
    while (mask < n) {
      if (vr & mask) {
        data = g.recv((vr - mask + root) % n, kBcastTag);
        break;
      }
      mask <<= 1;
    }
  }
  mask >>= 1;
  std::vector<RequestHandle> sends;
  while (mask > 0) {
    if (vr + mask < n) {
      sends.push_back(g.isend((vr + mask + root) % n, kBcastTag, ByteSpan(data)));
    }
    mask >>= 1;
  }
  g.waitall(sends);
  return data;
}

std::vector<Bytes> allgather(ProcessGroup& g, ByteSpan mine) {
  std::vector<Bytes> blocks(static_cast<std::size_t>(g.size()), Bytes(mine.begin(), mine.end()));
  auto out = exchange(g, std::move(blocks), kAllgatherTag);
  for (int r = 0; r < g.size(); ++r) {
    if (out[r].size() != mine.size()) {
      throw ProtocolError(fmt::format("allgather: rank {} contributed {} bytes, expected {}", r, out[r].size(),
                                      mine.size()));
    }
  }
  return out;
}

std::vector<Bytes> alltoall(ProcessGroup& g, const std::vector<Bytes>& send) {
  check_group_size(g, send.size(), "alltoall");
  const std::size_t len = send.empty() ? 0 : send[0].size();
  for (const auto& b : send) {
    if (b.size() != len) throw ProtocolError("alltoall elements must all have the same length");
  }
  auto out = exchange(g, send, kAlltoallTag);
  for (int r = 0; r < g.size(); ++r) {
    if (out[r].size() != len) {
      throw ProtocolError(fmt::format("alltoall: rank {} sent {} bytes, expected {}", r, out[r].size(), len));
    }
  }
  return out;
}

std::vector<Bytes> alltoallv(ProcessGroup& g, const std::vector<Bytes>& send,
                             std::span<const std::size_t> recv_lengths) {
  check_group_size(g, send.size(), "alltoallv");
  check_group_size(g, recv_lengths.size(), "alltoallv receive lengths");
  std::vector<std::size_t> send_lengths;
  for (const auto& b : send) send_lengths.push_back(b.size());
  agree_on_lengths(g, send_lengths, recv_lengths);
  return exchange(g, send, kAlltoallvTag);
}

// ---------------------------------------------------------------------------
// encrypted

Bytes encrypted_bcast(ProcessGroup& g, AeadProvider& aead, int root, ByteSpan body) {
  Bytes frame;
  if (g.rank() == root) frame = aead.seal_to_bytes(body);
  const Bytes received = bcast(g, root, frame);
  return open_from(aead, received, root);
}

std::vector<Bytes> encrypted_allgather(ProcessGroup& g, AeadProvider& aead, ByteSpan mine) {
  const Bytes frame = aead.seal_to_bytes(mine);
  const auto frames = allgather(g, frame);
  std::vector<Bytes> out;
  out.reserve(frames.size());
  for (int r = 0; r < g.size(); ++r) out.push_back(open_from(aead, frames[r], r));
  return out;
}

std::vector<Bytes> encrypted_alltoall(ProcessGroup& g, AeadProvider& aead, const std::vector<Bytes>& send) {
  check_group_size(g, send.size(), "alltoall");
  const std::size_t n = send.size();
  const std::size_t len = n == 0 ? 0 : send[0].size();
  for (const auto& b : send) {
    if (b.size() != len) throw ProtocolError("alltoall elements must all have the same length");
  }
  const std::size_t frame_len = len + kFrameOverhead;
  // enc_sendbuf: n slots of l + 28 bytes, slot i = nonce_i || C_i.
  Bytes enc_send(n * frame_len);
  for (std::size_t i = 0; i < n; ++i) {
    aead.seal_into(send[i], MutableByteSpan(enc_send).subspan(i * frame_len, frame_len));
  }
  std::vector<Bytes> blocks(n);
  for (std::size_t i = 0; i < n; ++i) {
    blocks[i].assign(enc_send.begin() + static_cast<std::ptrdiff_t>(i * frame_len),
                     enc_send.begin() + static_cast<std::ptrdiff_t>((i + 1) * frame_len));
  }
  const auto enc_recv = exchange(g, std::move(blocks), kAlltoallTag);
  std::vector<Bytes> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (enc_recv[i].size() != frame_len) {
      throw ProtocolError(fmt::format("alltoall: rank {} sent a {}-byte frame, expected {}", i, enc_recv[i].size(),
                                      frame_len));
    }
    out[i].resize(len);
    open_from(aead, enc_recv[i], out[i], static_cast<int>(i));
  }
  return out;
}

std::vector<Bytes> encrypted_alltoallv(ProcessGroup& g, AeadProvider& aead, const std::vector<Bytes>& send,
                                       std::span<const std::size_t> recv_lengths) {
  check_group_size(g, send.size(), "alltoallv");
  check_group_size(g, recv_lengths.size(), "alltoallv receive lengths");
  const std::size_t n = send.size();
  std::vector<std::size_t> send_lengths;
  for (const auto& b : send) send_lengths.push_back(b.size());
  agree_on_lengths(g, send_lengths, recv_lengths);

  const VariableLayout plain = VariableLayout::packed(send_lengths);
  const VariableLayout enc = encrypted_layout(plain);
  Bytes enc_send(enc.total());
  for (std::size_t i = 0; i < n; ++i) {
    aead.seal_into(send[i], MutableByteSpan(enc_send).subspan(enc.displacements[i], enc.lengths[i]));
  }
  std::vector<Bytes> blocks(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto first = enc_send.begin() + static_cast<std::ptrdiff_t>(enc.displacements[i]);
    blocks[i].assign(first, first + static_cast<std::ptrdiff_t>(enc.lengths[i]));
  }
  const auto enc_recv = exchange(g, std::move(blocks), kAlltoallvTag);
  std::vector<Bytes> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (enc_recv[i].size() != recv_lengths[i] + kFrameOverhead) {
      throw ProtocolError(fmt::format("alltoallv: rank {} sent a {}-byte frame, expected {}", i, enc_recv[i].size(),
                                      recv_lengths[i] + kFrameOverhead));
    }
    out[i].resize(recv_lengths[i]);
    open_from(aead, enc_recv[i], out[i], static_cast<int>(i));
  }
  return out;
}

}  // namespace secmsg
