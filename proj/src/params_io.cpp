#include "secmsg/params_io.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "secmsg/error.hpp"

namespace secmsg {

namespace {

using nlohmann::json;

double number(const json& obj, const char* key, std::string_view where) {
  const auto it = obj.find(key);
  if (it == obj.end() || !it->is_number()) {
    throw FormatError(fmt::format("parameter file: {}.{} must be a number", where, key));
  }
  return it->get<double>();
}

const json& object(const json& obj, const char* key, std::string_view where) {
  const auto it = obj.find(key);
  if (it == obj.end() || !it->is_object()) {
    throw FormatError(fmt::format("parameter file: {}.{} must be an object", where, key));
  }
  return *it;
}

HockneyParams hockney_from(const json& j, std::string_view where) {
  return {number(j, "alpha_us", where), number(j, "beta_us_per_byte", where)};
}

MaxRateClassParams maxrate_from(const json& j, std::string_view where) {
  MaxRateClassParams p{number(j, "alpha_us", where), number(j, "a_bytes_per_us", where),
                       number(j, "b_bytes_per_us", where)};
  if (!(p.a > 0.0) || !(p.b >= 0.0) || !(p.alpha >= 0.0)) {
    throw FormatError(fmt::format("parameter file: {} needs alpha >= 0, a > 0, b >= 0", where));
  }
  return p;
}

json hockney_to(const HockneyParams& h) { return {{"alpha_us", h.alpha}, {"beta_us_per_byte", h.beta}}; }

json maxrate_to(const MaxRateClassParams& p) {
  return {{"alpha_us", p.alpha}, {"a_bytes_per_us", p.a}, {"b_bytes_per_us", p.b}};
}

}  // namespace

ModelParams merge(ModelParams base, const ModelParams& over) {
  if (over.hockney) base.hockney = over.hockney;
  if (over.encdec) base.encdec = over.encdec;
  if (over.maxrate) base.maxrate = over.maxrate;
  return base;
}

ModelParams params_from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(fmt::format("parameter file is not valid JSON: {}", e.what()));
  }
  if (!doc.is_object()) throw FormatError("parameter file must be a JSON object");
  ModelParams p;
  if (doc.contains("hockney")) {
    const auto& h = object(doc, "hockney", "");
    PhasedHockneyParams ph;
    ph.eager = hockney_from(object(h, "eager", "hockney"), "hockney.eager");
    ph.rendezvous = hockney_from(object(h, "rendezvous", "hockney"), "hockney.rendezvous");
    const auto it = h.find("threshold_bytes");
    if (it != h.end()) {
      if (!it->is_number_unsigned() || it->get<std::size_t>() == 0) {
        throw FormatError("parameter file: hockney.threshold_bytes must be a positive integer");
      }
      ph.threshold = it->get<std::size_t>();
    }
    p.hockney = ph;
  }
  if (doc.contains("encdec")) {
    const auto h = hockney_from(object(doc, "encdec", ""), "encdec");
    p.encdec = EncDecLineParams{h.alpha, h.beta};
  }
  if (doc.contains("maxrate")) {
    const auto& m = object(doc, "maxrate", "");
    MaxRateParams mp;
    mp.small = maxrate_from(object(m, "small", "maxrate"), "maxrate.small");
    mp.moderate = maxrate_from(object(m, "moderate", "maxrate"), "maxrate.moderate");
    mp.large = maxrate_from(object(m, "large", "maxrate"), "maxrate.large");
    p.maxrate = mp;
  }
  if (!p.hockney && !p.encdec && !p.maxrate) {
    throw FormatError("parameter file has none of hockney, encdec, maxrate");
  }
  return p;
}

std::string params_to_json(const ModelParams& p) {
  json doc = json::object();
  if (p.hockney) {
    doc["hockney"] = {{"eager", hockney_to(p.hockney->eager)},
                      {"rendezvous", hockney_to(p.hockney->rendezvous)},
                      {"threshold_bytes", p.hockney->threshold}};
  }
  if (p.encdec) doc["encdec"] = hockney_to({p.encdec->alpha, p.encdec->beta});
  if (p.maxrate) {
    doc["maxrate"] = {{"small", maxrate_to(p.maxrate->small)},
                      {"moderate", maxrate_to(p.maxrate->moderate)},
                      {"large", maxrate_to(p.maxrate->large)}};
  }
  return doc.dump(2) + "\n";
}

ModelParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(fmt::format("cannot open parameter file {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return params_from_json(ss.str());
}

void save_params(const std::filesystem::path& path, const ModelParams& p) {
  std::ofstream out(path);
  if (!out) throw FormatError(fmt::format("cannot write parameter file {}", path.string()));
  out << params_to_json(p);
}

PhasedHockneyParams hockney_ethernet() { return {{32.74, 23.7e-4}, {117.30, 8.63e-4}, kDefaultPhaseThreshold}; }

PhasedHockneyParams hockney_infiniband() { return {{3.40, 3.83e-4}, {7.17, 3.12e-4}, kDefaultPhaseThreshold}; }

PhasedHockneyParams hockney_ethernet_multipair() {
  return {{3.84, 8.11e-4}, {16.35, 8e-4}, kDefaultPhaseThreshold};
}

PhasedHockneyParams hockney_infiniband_multipair() {
  return {{1.02, 2.88e-4}, {2.38, 2.78e-4}, kDefaultPhaseThreshold};
}

EncDecLineParams encdec_library(std::string_view name) {
  if (name == "boringssl") return {0.53, 6.90e-4};
  if (name == "libsodium") return {0.48, 16.3e-4};
  if (name == "cryptopp-mpich") return {5.51, 34.8e-4};
  if (name == "cryptopp-mvapich") return {5.16, 21.4e-4};
  throw ConfigError(fmt::format("unknown encryption library '{}' (known: boringssl, libsodium, cryptopp-mpich, "
                                "cryptopp-mvapich)",
                                name));
}

std::vector<std::string> encdec_library_names() {
  return {"boringssl", "libsodium", "cryptopp-mpich", "cryptopp-mvapich"};
}

MaxRateParams maxrate_boringssl() { return {{1.8, 888.5, 0.0}, {2.66, 1764.0, 4135.0}, {3.44, 1502.21, 1262.59}}; }

ModelParams preset(std::string_view name) {
  ModelParams p;
  if (name == "ethernet") {
    p.hockney = hockney_ethernet();
  } else if (name == "ib") {
    p.hockney = hockney_infiniband();
  } else if (name == "ethernet-multipair") {
    p.hockney = hockney_ethernet_multipair();
  } else if (name == "ib-multipair") {
    p.hockney = hockney_infiniband_multipair();
  } else {
    throw ConfigError(
        fmt::format("unknown preset '{}' (known: ethernet, ib, ethernet-multipair, ib-multipair)", name));
  }
  p.encdec = encdec_library("boringssl");
  p.maxrate = maxrate_boringssl();
  return p;
}

std::vector<std::string> preset_names() { return {"ethernet", "ib", "ethernet-multipair", "ib-multipair"}; }

PresetRef parse_preset_ref(std::string_view name) {
  for (const auto& [suffix, phase] : {std::pair{std::string_view{"-eager"}, Phase::Eager},
                                      std::pair{std::string_view{"-rendezvous"}, Phase::Rendezvous}}) {
    if (name.size() > suffix.size() && name.ends_with(suffix)) {
      return {std::string(name.substr(0, name.size() - suffix.size())), phase};
    }
  }
  return {std::string(name), std::nullopt};
}

}  // namespace secmsg
