#include "secmsg/aead.hpp"

#include <algorithm>
#include <climits>
#include <cstring>
#include <mutex>

#include <fmt/format.h>
#include <openssl/evp.h>
#include <openssl/rand.h>

#ifdef SECMSG_HAVE_SODIUM
#include <sodium.h>
#endif

#include "secmsg/error.hpp"

namespace secmsg {

namespace {

constexpr std::string_view kTestKeyHex =
    "000102030405060708090a0b0c0d0e0f101112131415161718191a1b1c1d1e1f";

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

class OpenSslGcm final : public AeadProvider {
 public:
  explicit OpenSslGcm(const SecretKey& key)
      : AeadProvider(key), enc_(EVP_CIPHER_CTX_new()), dec_(EVP_CIPHER_CTX_new()) {
    if (!enc_ || !dec_) throw ConfigError("openssl: cannot allocate cipher context");
    const EVP_CIPHER* cipher = key.size() == 16 ? EVP_aes_128_gcm() : EVP_aes_256_gcm();
    if (EVP_EncryptInit_ex(enc_.get(), cipher, nullptr, nullptr, nullptr) != 1 ||
        EVP_CIPHER_CTX_ctrl(enc_.get(), EVP_CTRL_GCM_SET_IVLEN, kNonceSize, nullptr) != 1 ||
        EVP_EncryptInit_ex(enc_.get(), nullptr, nullptr, key.bytes().data(), nullptr) != 1) {
      throw ConfigError("openssl: AES-GCM encrypt init rejected the key");
    }
    if (EVP_DecryptInit_ex(dec_.get(), cipher, nullptr, nullptr, nullptr) != 1 ||
        EVP_CIPHER_CTX_ctrl(dec_.get(), EVP_CTRL_GCM_SET_IVLEN, kNonceSize, nullptr) != 1 ||
        EVP_DecryptInit_ex(dec_.get(), nullptr, nullptr, key.bytes().data(), nullptr) != 1) {
      throw ConfigError("openssl: AES-GCM decrypt init rejected the key");
    }
  }

  Backend backend() const override { return Backend::OpenSsl; }

  std::unique_ptr<AeadProvider> clone() const override {
    return std::make_unique<OpenSslGcm>(key());
  }

 protected:
  void random_nonce(Nonce& out) override {
    if (RAND_bytes(out.data(), static_cast<int>(out.size())) != 1) {
      throw ConfigError("openssl: RAND_bytes failed");
    }
  }

  void encrypt(const Nonce& nonce, ByteSpan plaintext, MutableByteSpan ct_and_tag) override {
    EVP_CIPHER_CTX* ctx = enc_.get();
    if (EVP_EncryptInit_ex(ctx, nullptr, nullptr, nullptr, nonce.data()) != 1) {
      throw ConfigError("openssl: nonce setup failed");
    }
    std::size_t done = 0;
    while (done < plaintext.size()) {
      const int chunk = static_cast<int>(std::min<std::size_t>(plaintext.size() - done, INT_MAX / 2));
      int out_len = 0;
      if (EVP_EncryptUpdate(ctx, ct_and_tag.data() + done, &out_len, plaintext.data() + done, chunk) != 1) {
        throw ConfigError("openssl: encrypt update failed");
      }
      done += static_cast<std::size_t>(out_len);
    }
    int final_len = 0;
    if (EVP_EncryptFinal_ex(ctx, ct_and_tag.data() + done, &final_len) != 1 ||
        EVP_CIPHER_CTX_ctrl(ctx, EVP_CTRL_GCM_GET_TAG, kTagSize, ct_and_tag.data() + plaintext.size()) != 1) {
      throw ConfigError("openssl: encrypt finalize failed");
    }
  }

  bool decrypt(const Nonce& nonce, ByteSpan ct_and_tag, MutableByteSpan plaintext) override {
    EVP_CIPHER_CTX* ctx = dec_.get();
    if (EVP_DecryptInit_ex(ctx, nullptr, nullptr, nullptr, nonce.data()) != 1) {
      throw ConfigError("openssl: nonce setup failed");
    }
    const std::size_t body = plaintext.size();
    std::size_t done = 0;
    while (done < body) {
      const int chunk = static_cast<int>(std::min<std::size_t>(body - done, INT_MAX / 2));
      int out_len = 0;
      if (EVP_DecryptUpdate(ctx, plaintext.data() + done, &out_len, ct_and_tag.data() + done, chunk) != 1) {
        return false;
      }
      done += static_cast<std::size_t>(out_len);
    }
    // OpenSSL wants a non-const tag pointer.
    std::array<std::uint8_t, kTagSize> tag{};
    std::memcpy(tag.data(), ct_and_tag.data() + body, kTagSize);
    if (EVP_CIPHER_CTX_ctrl(ctx, EVP_CTRL_GCM_SET_TAG, kTagSize, tag.data()) != 1) return false;
    int final_len = 0;
    return EVP_DecryptFinal_ex(ctx, plaintext.data() + done, &final_len) == 1;
  }

 private:
  struct CtxDeleter {
    void operator()(EVP_CIPHER_CTX* c) const { EVP_CIPHER_CTX_free(c); }
  };
  std::unique_ptr<EVP_CIPHER_CTX, CtxDeleter> enc_;
  std::unique_ptr<EVP_CIPHER_CTX, CtxDeleter> dec_;
};

#ifdef SECMSG_HAVE_SODIUM

bool sodium_ready() {
  static const bool ok = [] {
    return sodium_init() >= 0 && crypto_aead_aes256gcm_is_available() != 0;
  }();
  return ok;
}

class SodiumGcm final : public AeadProvider {
 public:
  explicit SodiumGcm(const SecretKey& key) : AeadProvider(key) {
    if (!sodium_ready()) throw ConfigError("sodium: AES-256-GCM needs AES-NI and PCLMUL on this host");
    if (key.size() != crypto_aead_aes256gcm_KEYBYTES) {
      throw ConfigError("sodium: only 256-bit AES-GCM keys are supported");
    }
    crypto_aead_aes256gcm_beforenm(&state_, key.bytes().data());
  }

  Backend backend() const override { return Backend::Sodium; }

  std::unique_ptr<AeadProvider> clone() const override {
    return std::make_unique<SodiumGcm>(key());
  }

 protected:
  void random_nonce(Nonce& out) override { randombytes_buf(out.data(), out.size()); }

  void encrypt(const Nonce& nonce, ByteSpan plaintext, MutableByteSpan ct_and_tag) override {
    unsigned long long tag_len = 0;
    crypto_aead_aes256gcm_encrypt_detached_afternm(
        ct_and_tag.data(), ct_and_tag.data() + plaintext.size(), &tag_len, plaintext.data(),
        plaintext.size(), nullptr, 0, nullptr, nonce.data(), &state_);
  }

  bool decrypt(const Nonce& nonce, ByteSpan ct_and_tag, MutableByteSpan plaintext) override {
    return crypto_aead_aes256gcm_decrypt_detached_afternm(
               plaintext.data(), nullptr, ct_and_tag.data(), plaintext.size(),
               ct_and_tag.data() + plaintext.size(), nullptr, 0, nonce.data(), &state_) == 0;
  }

 private:
  alignas(16) crypto_aead_aes256gcm_state state_{};
};

#endif

}  // namespace

Bytes hex_decode(std::string_view hex) {
  if (hex.size() % 2 != 0) throw ConfigError("hex string has odd length");
  Bytes out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const int hi = hex_value(hex[2 * i]);
    const int lo = hex_value(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) throw ConfigError(fmt::format("invalid hex digit near offset {}", 2 * i));
    out[i] = static_cast<std::uint8_t>(hi << 4 | lo);
  }
  return out;
}

std::string hex_encode(ByteSpan bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xF]);
  }
  return out;
}

SecretKey SecretKey::from_bytes(ByteSpan bytes) {
  if (bytes.size() != 16 && bytes.size() != 32) {
    throw ConfigError(fmt::format("AES-GCM key must be 16 or 32 bytes, got {}", bytes.size()));
  }
  SecretKey k;
  std::copy(bytes.begin(), bytes.end(), k.bytes_.begin());
  k.size_ = bytes.size();
  return k;
}

SecretKey SecretKey::from_hex(std::string_view hex) { return from_bytes(hex_decode(hex)); }

SecretKey SecretKey::test_key() { return from_hex(kTestKeyHex); }

bool operator==(const SecretKey& a, const SecretKey& b) {
  return a.size_ == b.size_ && std::equal(a.bytes().begin(), a.bytes().end(), b.bytes().begin());
}

Bytes Frame::serialize() const {
  Bytes out(size());
  std::copy(nonce.begin(), nonce.end(), out.begin());
  std::copy(ciphertext_and_tag.begin(), ciphertext_and_tag.end(), out.begin() + kNonceSize);
  return out;
}

Frame Frame::parse(ByteSpan wire) {
  if (wire.size() < kFrameOverhead) {
    throw IntegrityError(fmt::format("frame of {} bytes is shorter than the 28-byte minimum", wire.size()));
  }
  Frame f;
  std::copy_n(wire.begin(), kNonceSize, f.nonce.begin());
  f.ciphertext_and_tag.assign(wire.begin() + kNonceSize, wire.end());
  return f;
}

std::string_view to_string(Backend b) {
  switch (b) {
    case Backend::OpenSsl:
      return "openssl";
    case Backend::Sodium:
      return "sodium";
  }
  return "unknown";
}

Backend parse_backend(std::string_view name) {
  if (name == "openssl") return Backend::OpenSsl;
  if (name == "sodium" || name == "libsodium") return Backend::Sodium;
  throw ConfigError(fmt::format("unknown AEAD backend '{}'", name));
}

std::vector<Backend> available_backends() {
  std::vector<Backend> out{Backend::OpenSsl};
#ifdef SECMSG_HAVE_SODIUM
  if (sodium_ready()) out.push_back(Backend::Sodium);
#endif
  return out;
}

std::unique_ptr<AeadProvider> make_provider(Backend backend, const SecretKey& key) {
  switch (backend) {
    case Backend::OpenSsl:
      return std::make_unique<OpenSslGcm>(key);
    case Backend::Sodium:
#ifdef SECMSG_HAVE_SODIUM
      return std::make_unique<SodiumGcm>(key);
#else
      throw ConfigError("sodium backend not compiled in");
#endif
  }
  throw ConfigError("unknown AEAD backend");
}

Frame AeadProvider::seal(ByteSpan plaintext) {
  Frame f;
  f.ciphertext_and_tag.resize(plaintext.size() + kTagSize);
  random_nonce(f.nonce);
  encrypt(f.nonce, plaintext, f.ciphertext_and_tag);
  ++seals_;
  return f;
}

Bytes AeadProvider::open(const Frame& frame) {
  if (frame.ciphertext_and_tag.size() < kTagSize) {
    throw IntegrityError("ciphertext shorter than the authentication tag");
  }
  Bytes out(frame.plaintext_size());
  ++opens_;
  if (!decrypt(frame.nonce, frame.ciphertext_and_tag, out)) {
    throw IntegrityError("AES-GCM authentication failed");
  }
  return out;
}

void AeadProvider::seal_into(ByteSpan plaintext, MutableByteSpan wire) {
  if (wire.size() != plaintext.size() + kFrameOverhead) {
    throw ProtocolError(fmt::format("seal_into needs {} bytes, got {}", plaintext.size() + kFrameOverhead,
                                    wire.size()));
  }
  Nonce nonce;
  random_nonce(nonce);
  std::copy(nonce.begin(), nonce.end(), wire.begin());
  encrypt(nonce, plaintext, wire.subspan(kNonceSize));
  ++seals_;
}

void AeadProvider::open_into(ByteSpan wire, MutableByteSpan plaintext) {
  if (wire.size() < kFrameOverhead) {
    throw IntegrityError(fmt::format("frame of {} bytes is shorter than the 28-byte minimum", wire.size()));
  }
  if (plaintext.size() != wire.size() - kFrameOverhead) {
    throw ProtocolError(fmt::format("open_into needs {} bytes, got {}", wire.size() - kFrameOverhead,
                                    plaintext.size()));
  }
  Nonce nonce;
  std::copy_n(wire.begin(), kNonceSize, nonce.begin());
  ++opens_;
  if (!decrypt(nonce, wire.subspan(kNonceSize), plaintext)) {
    throw IntegrityError("AES-GCM authentication failed");
  }
}

Bytes AeadProvider::seal_to_bytes(ByteSpan plaintext) {
  Bytes wire(plaintext.size() + kFrameOverhead);
  seal_into(plaintext, wire);
  return wire;
}

Bytes AeadProvider::open_bytes(ByteSpan wire) {
  if (wire.size() < kFrameOverhead) {
    throw IntegrityError(fmt::format("frame of {} bytes is shorter than the 28-byte minimum", wire.size()));
  }
  Bytes out(wire.size() - kFrameOverhead);
  open_into(wire, out);
  return out;
}

}  // namespace secmsg
