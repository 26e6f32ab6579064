#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace secmsg {

using Bytes = std::vector<std::uint8_t>;
using ByteSpan = std::span<const std::uint8_t>;
using MutableByteSpan = std::span<std::uint8_t>;

inline constexpr std::size_t kNonceSize = 12;
inline constexpr std::size_t kTagSize = 16;
/// Bytes a frame adds on top of its plaintext: nonce plus tag.
inline constexpr std::size_t kFrameOverhead = kNonceSize + kTagSize;

using Nonce = std::array<std::uint8_t, kNonceSize>;

/// AES-GCM key material. Only 128- and 256-bit keys are accepted.
class SecretKey {
 public:
  static SecretKey from_bytes(ByteSpan bytes);
  static SecretKey from_hex(std::string_view hex);
  /// Fixed 256-bit key used when the caller supplies none.
  static SecretKey test_key();

  ByteSpan bytes() const { return {bytes_.data(), size_}; }
  std::size_t size() const { return size_; }
  std::size_t bits() const { return size_ * 8; }

  friend bool operator==(const SecretKey& a, const SecretKey& b);

 private:
  SecretKey() = default;
  std::array<std::uint8_t, 32> bytes_{};
  std::size_t size_ = 0;
};

/// nonce || ciphertext || tag, with the tag in the last 16 bytes.
struct Frame {
  Nonce nonce{};
  Bytes ciphertext_and_tag;

  std::size_t size() const { return kNonceSize + ciphertext_and_tag.size(); }
  std::size_t plaintext_size() const { return ciphertext_and_tag.size() - kTagSize; }

  Bytes serialize() const;
  /// Splits a wire frame. Frames shorter than 28 bytes raise IntegrityError.
  static Frame parse(ByteSpan wire);
};

enum class Backend { OpenSsl, Sodium };

std::string_view to_string(Backend b);
/// Accepts "openssl" or "sodium"/"libsodium"; throws ConfigError otherwise.
Backend parse_backend(std::string_view name);
/// Backends compiled in and usable on this host.
std::vector<Backend> available_backends();

/// One AES-GCM context with random per-message nonces.
///
/// An instance is meant for a single worker; give each thread its own via
/// clone(). Seal/open counters are exposed so callers can audit how many
/// cryptographic operations a higher-level routine performed.
class AeadProvider {
 public:
  explicit AeadProvider(const SecretKey& key) : key_(key) {}
  virtual ~AeadProvider() = default;
  AeadProvider(const AeadProvider&) = delete;
  AeadProvider& operator=(const AeadProvider&) = delete;

  virtual Backend backend() const = 0;
  virtual std::unique_ptr<AeadProvider> clone() const = 0;

  const SecretKey& key() const { return key_; }

  Frame seal(ByteSpan plaintext);
  Bytes open(const Frame& frame);

  /// Seals into a caller buffer of exactly plaintext.size() + 28 bytes.
  void seal_into(ByteSpan plaintext, MutableByteSpan wire);
  /// Opens a serialized frame into a buffer of exactly wire.size() - 28 bytes.
  void open_into(ByteSpan wire, MutableByteSpan plaintext);

  Bytes seal_to_bytes(ByteSpan plaintext);
  Bytes open_bytes(ByteSpan wire);

  std::uint64_t seal_count() const { return seals_; }
  std::uint64_t open_count() const { return opens_; }

 protected:
  virtual void random_nonce(Nonce& out) = 0;
  virtual void encrypt(const Nonce& nonce, ByteSpan plaintext, MutableByteSpan ct_and_tag) = 0;
  /// Returns false on tag mismatch.
  virtual bool decrypt(const Nonce& nonce, ByteSpan ct_and_tag, MutableByteSpan plaintext) = 0;

 private:
  SecretKey key_;
  std::uint64_t seals_ = 0;
  std::uint64_t opens_ = 0;
};

std::unique_ptr<AeadProvider> make_provider(Backend backend, const SecretKey& key);

Bytes hex_decode(std::string_view hex);
std::string hex_encode(ByteSpan bytes);

}  // namespace secmsg
