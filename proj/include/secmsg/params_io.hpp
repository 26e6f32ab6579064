#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "secmsg/models.hpp"

namespace secmsg {

/// Parameter file contents. Each section is optional so fitted pieces can be
/// written separately and merged.
struct ModelParams {
  std::optional<PhasedHockneyParams> hockney;
  std::optional<EncDecLineParams> encdec;
  std::optional<MaxRateParams> maxrate;
};

/// Sections present in `over` replace those in `base`.
ModelParams merge(ModelParams base, const ModelParams& over);

/// JSON layout:
///   hockney: {eager|rendezvous: {alpha_us, beta_us_per_byte}, threshold_bytes}
///   encdec:  {alpha_us, beta_us_per_byte}
///   maxrate: {small|moderate|large: {alpha_us, a_bytes_per_us, b_bytes_per_us}}
/// Throws FormatError on malformed input.
ModelParams params_from_json(std::string_view text);
std::string params_to_json(const ModelParams& p);
ModelParams load_params(const std::filesystem::path& path);
void save_params(const std::filesystem::path& path, const ModelParams& p);

// Published parameter tables, transcribed verbatim.

/// Single-pair ping-pong fits.
PhasedHockneyParams hockney_ethernet();
PhasedHockneyParams hockney_infiniband();
/// Multiple-pair fits.
PhasedHockneyParams hockney_ethernet_multipair();
PhasedHockneyParams hockney_infiniband_multipair();

/// Encryption-decryption lines: boringssl, libsodium, cryptopp-mpich,
/// cryptopp-mvapich. Throws ConfigError for other names.
EncDecLineParams encdec_library(std::string_view name);
std::vector<std::string> encdec_library_names();

/// Max-rate fit of the BoringSSL build.
MaxRateParams maxrate_boringssl();

/// Network presets: ethernet, ib, ethernet-multipair, ib-multipair. Each
/// carries its Hockney table plus the BoringSSL encdec line and max-rate
/// table. Throws ConfigError for other names.
ModelParams preset(std::string_view name);
std::vector<std::string> preset_names();

/// Splits an optional `-eager` / `-rendezvous` suffix off a preset name.
struct PresetRef {
  std::string network;
  std::optional<Phase> phase;
};
PresetRef parse_preset_ref(std::string_view name);

}  // namespace secmsg
