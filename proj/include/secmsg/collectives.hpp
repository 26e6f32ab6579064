#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "secmsg/aead.hpp"
#include "secmsg/transport.hpp"

namespace secmsg {

enum class CollectiveOp { Bcast, Allgather, Alltoall, Alltoallv };

std::string_view to_string(CollectiveOp op);
CollectiveOp parse_collective(std::string_view name);

/// Per-element lengths and byte offsets of a packed variable-length buffer.
struct VariableLayout {
  std::vector<std::size_t> lengths;
  std::vector<std::size_t> displacements;

  static VariableLayout packed(std::vector<std::size_t> lengths);
  std::size_t total() const;
};

/// Layout of the ciphertext buffer: every element grows by 28 bytes and the
/// displacements are recomputed, so element i starts at sum_{j<i}(l_j + 28).
VariableLayout encrypted_layout(const VariableLayout& plain);

// Plaintext collectives. Group-synchronous: every rank calls the same
// operation in the same order.

/// Binomial-tree broadcast. Non-root ranks ignore `body`.
Bytes bcast(ProcessGroup& g, int root, ByteSpan body);
/// All elements must have the same length.
std::vector<Bytes> allgather(ProcessGroup& g, ByteSpan mine);
/// send[i] goes to rank i; all elements share one length.
std::vector<Bytes> alltoall(ProcessGroup& g, const std::vector<Bytes>& send);
/// send[i] goes to rank i; recv_lengths[i] is what rank i will send here.
/// Length vectors are exchanged first and any mismatch raises ProtocolError
/// on every rank before payload moves.
std::vector<Bytes> alltoallv(ProcessGroup& g, const std::vector<Bytes>& send,
                             std::span<const std::size_t> recv_lengths);

// Encrypted collectives: seal every outgoing element with a fresh nonce,
// run the plaintext collective on the frames, open every incoming frame.
// Authentication failures raise IntegrityError naming the source rank.

Bytes encrypted_bcast(ProcessGroup& g, AeadProvider& aead, int root, ByteSpan body);
std::vector<Bytes> encrypted_allgather(ProcessGroup& g, AeadProvider& aead, ByteSpan mine);
std::vector<Bytes> encrypted_alltoall(ProcessGroup& g, AeadProvider& aead, const std::vector<Bytes>& send);
std::vector<Bytes> encrypted_alltoallv(ProcessGroup& g, AeadProvider& aead, const std::vector<Bytes>& send,
                                       std::span<const std::size_t> recv_lengths);

}  // namespace secmsg
