#include <doctest.h>

#include <atomic>
#include <map>
#include <mutex>
#include <set>

#include "secmsg/collectives.hpp"
#include "secmsg/error.hpp"
#include "support.hpp"

using namespace secmsg;
using secmsg::testing::local_group;

namespace {

/// Deterministic payload rank `src` addresses to rank `dst`.
Bytes block(int src, int dst, std::size_t len) {
  Bytes b(len);
  for (std::size_t i = 0; i < len; ++i) b[i] = static_cast<std::uint8_t>(src * 31 + dst * 7 + i);
  return b;
}

void with_provider(ProcessGroup& g) { g.set_provider(make_provider(Backend::OpenSsl, SecretKey::test_key())); }

}  // namespace

TEST_SUITE("collectives") {
  TEST_CASE("layouts") {
    const auto v = VariableLayout::packed({3, 0, 5});
    CHECK(v.displacements == std::vector<std::size_t>{0, 3, 3});
    CHECK(v.total() == 8);
    const auto e = encrypted_layout(v);
    CHECK(e.lengths == std::vector<std::size_t>{31, 28, 33});
    CHECK(e.displacements == std::vector<std::size_t>{0, 31, 59});
    CHECK(e.total() == 92);
  }

  TEST_CASE("names") {
    for (auto op : {CollectiveOp::Bcast, CollectiveOp::Allgather, CollectiveOp::Alltoall, CollectiveOp::Alltoallv}) {
      CHECK(parse_collective(to_string(op)) == op);
    }
    CHECK_THROWS(parse_collective("reduce"));
  }

  TEST_CASE("encrypted alltoall matches the transpose and does n seals and n opens") {
    for (int n : {1, 2, 4}) {
      local_group(n, [&](ProcessGroup& g) {
        with_provider(g);
        std::vector<Bytes> send;
        for (int d = 0; d < n; ++d) send.push_back(block(g.rank(), d, 100));
        const auto got = encrypted_alltoall(g, *g.provider(), send);
        REQUIRE(got.size() == static_cast<std::size_t>(n));
        for (int s = 0; s < n; ++s) CHECK(got[s] == block(s, g.rank(), 100));
        CHECK(g.provider()->seal_count() == static_cast<std::uint64_t>(n));
        CHECK(g.provider()->open_count() == static_cast<std::uint64_t>(n));
      });
    }
  }

  TEST_CASE("alltoall frames on the wire are 28 bytes longer with distinct nonces") {
    std::mutex mu;
    std::set<Nonce> nonces;
    std::size_t frames = 0;
    local_group(4, [&](ProcessGroup& g) {
      with_provider(g);
      std::map<int, Bytes> streams;
      g.set_wire_tap([&](int peer, ByteSpan b) { streams[peer].insert(streams[peer].end(), b.begin(), b.end()); });
      std::vector<Bytes> send(4, Bytes(40, 1));
      (void)encrypted_alltoall(g, *g.provider(), send);
      g.set_wire_tap(nullptr);
      std::lock_guard lock(mu);
      for (const auto& [peer, stream] : streams) {
      std::size_t off = 0;
      while (off + MessageHeader::kSize <= stream.size()) {
        const auto h = MessageHeader::decode(
            std::span<const std::uint8_t, MessageHeader::kSize>(stream.data() + off, MessageHeader::kSize));
        off += MessageHeader::kSize;
        if (h.body_length == 68) {
          Nonce nc;
          std::copy_n(stream.begin() + static_cast<std::ptrdiff_t>(off), kNonceSize, nc.begin());
          nonces.insert(nc);
          ++frames;
        }
        off += h.body_length;
      }
      }
    });
    CHECK(frames == 12);
    CHECK(nonces.size() == 12);
  }

  TEST_CASE("zero-length alltoall") {
    local_group(2, [&](ProcessGroup& g) {
      with_provider(g);
      const auto got = encrypted_alltoall(g, *g.provider(), {Bytes{}, Bytes{}});
      for (const auto& b : got) CHECK(b.empty());
    });
  }

  TEST_CASE("encrypted bcast from first and last rank") {
    const Bytes body = block(9, 9, 16384);
    for (int root : {0, 3}) {
      local_group(4, [&](ProcessGroup& g) {
        with_provider(g);
        const Bytes mine = g.rank() == root ? body : Bytes{};
        CHECK(encrypted_bcast(g, *g.provider(), root, mine) == body);
        CHECK(g.provider()->open_count() == 1);
        CHECK(g.provider()->seal_count() == (g.rank() == root ? 1u : 0u));
      });
    }
  }

  TEST_CASE("encrypted allgather crossing the threshold") {
    for (std::size_t len : {std::size_t{3}, kDefaultPhaseThreshold + 5}) {
      local_group(4, [&](ProcessGroup& g) {
        with_provider(g);
        const auto got = encrypted_allgather(g, *g.provider(), block(g.rank(), 0, len));
        REQUIRE(got.size() == 4);
        for (int s = 0; s < 4; ++s) CHECK(got[s] == block(s, 0, len));
        CHECK(g.provider()->seal_count() == 1);
      });
    }
  }

  TEST_CASE("encrypted alltoallv with (i + j) mod 3 lengths") {
    local_group(3, [&](ProcessGroup& g) {
      with_provider(g);
      const int me = g.rank();
      std::vector<Bytes> send;
      std::vector<std::size_t> expect;
      for (int d = 0; d < 3; ++d) {
        send.push_back(block(me, d, static_cast<std::size_t>((me + d) % 3)));
        expect.push_back(static_cast<std::size_t>((d + me) % 3));
      }
      const auto got = encrypted_alltoallv(g, *g.provider(), send, expect);
      for (int s = 0; s < 3; ++s) CHECK(got[s] == block(s, me, static_cast<std::size_t>((s + me) % 3)));
    });
  }

  TEST_CASE("alltoallv with equal lengths equals alltoall") {
    local_group(4, [&](ProcessGroup& g) {
      std::vector<Bytes> send;
      for (int d = 0; d < 4; ++d) send.push_back(block(g.rank(), d, 77));
      const std::vector<std::size_t> lens(4, 77);
      CHECK(alltoallv(g, send, lens) == alltoall(g, send));
    });
  }

  TEST_CASE("inconsistent length matrix fails on every rank before data moves") {
    std::atomic<int> failures{0};
    local_group(3, [&](ProcessGroup& g) {
      with_provider(g);
      std::vector<Bytes> send(3, Bytes(10, 1));
      std::vector<std::size_t> expect(3, 10);
      if (g.rank() == 2) expect[0] = 11;
      try {
        (void)encrypted_alltoallv(g, *g.provider(), send, expect);
      } catch (const ProtocolError&) {
        ++failures;
        CHECK(g.provider()->seal_count() == 0);
      }
    });
    CHECK(failures == 3);
  }

  TEST_CASE("unequal alltoall elements are rejected") {
    local_group(1, [&](ProcessGroup& g) {
      CHECK_THROWS_AS(alltoall(g, {Bytes(1), Bytes(2)}), ProtocolError);
    });
  }
}
