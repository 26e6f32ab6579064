#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "secmsg/aead.hpp"
#include "secmsg/benchmarks.hpp"
#include "secmsg/error.hpp"
#include "secmsg/models.hpp"
#include "secmsg/params_io.hpp"

namespace py = pybind11;
using namespace secmsg;

namespace {

Bytes to_bytes(const py::bytes& b) {
  const std::string_view v = b;
  return Bytes(v.begin(), v.end());
}

py::bytes from_bytes(const Bytes& b) { return py::bytes(reinterpret_cast<const char*>(b.data()), b.size()); }

/// Accepts (size, k, run, latency) tuples or LatencySample objects.
std::vector<LatencySample> samples_from(const py::iterable& rows) {
  std::vector<LatencySample> out;
  for (const auto& row : rows) {
    if (py::isinstance<LatencySample>(row)) {
      out.push_back(row.cast<LatencySample>());
      continue;
    }
    const auto t = row.cast<py::sequence>();
    if (t.size() != 4) throw py::value_error("sample rows are (size_bytes, k_pairs, run_index, latency_us)");
    out.push_back({t[0].cast<std::size_t>(), t[1].cast<int>(), t[2].cast<int>(), t[3].cast<double>()});
  }
  return out;
}

/// AEAD provider owned by Python.
class Channel {
 public:
  Channel(const std::string& backend, const std::optional<std::string>& key_hex)
      : p_(make_provider(parse_backend(backend), key_hex ? SecretKey::from_hex(*key_hex) : SecretKey::test_key())) {}

  py::bytes seal(const py::bytes& plaintext) { return from_bytes(p_->seal_to_bytes(to_bytes(plaintext))); }
  py::bytes open(const py::bytes& frame) { return from_bytes(p_->open_bytes(to_bytes(frame))); }
  std::string backend() const { return std::string(to_string(p_->backend())); }

 private:
  std::unique_ptr<AeadProvider> p_;
};

}  // namespace

PYBIND11_MODULE(_secmsg, m) {
  m.doc() = "Encrypted message passing: AEAD framing, benchmark statistics and performance models";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<IntegrityError>(m, "IntegrityError", base.ptr());
  py::register_exception<FitError>(m, "FitError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DomainError>(m, "DomainError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());

  m.attr("FRAME_OVERHEAD") = kFrameOverhead;
  m.attr("DEFAULT_PHASE_THRESHOLD") = kDefaultPhaseThreshold;

  py::class_<Channel>(m, "Channel")
      .def(py::init<const std::string&, const std::optional<std::string>&>(), py::arg("backend") = "openssl",
           py::arg("key_hex") = std::nullopt)
      .def("seal", &Channel::seal)
      .def("open", &Channel::open)
      .def_property_readonly("backend", &Channel::backend);
  m.def("available_backends", [] {
    std::vector<std::string> out;
    for (auto b : available_backends()) out.emplace_back(to_string(b));
    return out;
  });

  py::class_<LatencySample>(m, "LatencySample")
      .def(py::init<std::size_t, int, int, double>(), py::arg("message_size"), py::arg("k_pairs"),
           py::arg("run_index"), py::arg("latency_us"))
      .def_readwrite("message_size", &LatencySample::message_size)
      .def_readwrite("k_pairs", &LatencySample::k_pairs)
      .def_readwrite("run_index", &LatencySample::run_index)
      .def_readwrite("latency_us", &LatencySample::latency_us);

  py::class_<StopPolicy>(m, "StopPolicy")
      .def(py::init<>())
      .def_static("encdec", &StopPolicy::encdec)
      .def_readwrite("min_runs", &StopPolicy::min_runs)
      .def_readwrite("max_runs_phase1", &StopPolicy::max_runs_phase1)
      .def_readwrite("cv_target", &StopPolicy::cv_target)
      .def_readwrite("ci_level", &StopPolicy::ci_level)
      .def_readwrite("hard_budget", &StopPolicy::hard_budget);

  py::class_<BenchmarkResult>(m, "BenchmarkResult")
      .def_readonly("samples", &BenchmarkResult::samples)
      .def_readonly("mean", &BenchmarkResult::mean)
      .def_readonly("stddev", &BenchmarkResult::stddev)
      .def_readonly("ci99_halfwidth", &BenchmarkResult::ci99_halfwidth)
      .def_property_readonly("stop_reason", [](const BenchmarkResult& r) { return std::string(to_string(r.stop_reason)); })
      .def_property_readonly("runs", &BenchmarkResult::runs);

  m.def("run_until_stable", &run_until_stable, py::arg("measure"), py::arg("policy") = StopPolicy{},
        py::arg("message_size") = 0, py::arg("k_pairs") = 1);
  m.def("throughput", &throughput, py::arg("plaintext_bytes"), py::arg("latency_us"));

  py::class_<HockneyParams>(m, "HockneyParams")
      .def(py::init<double, double>(), py::arg("alpha"), py::arg("beta"))
      .def_readwrite("alpha", &HockneyParams::alpha)
      .def_readwrite("beta", &HockneyParams::beta)
      .def("eval", &HockneyParams::eval);

  py::class_<PhasedHockneyParams>(m, "PhasedHockneyParams")
      .def(py::init<HockneyParams, HockneyParams, std::size_t>(), py::arg("eager"), py::arg("rendezvous"),
           py::arg("threshold") = kDefaultPhaseThreshold)
      .def_readwrite("eager", &PhasedHockneyParams::eager)
      .def_readwrite("rendezvous", &PhasedHockneyParams::rendezvous)
      .def_readwrite("threshold", &PhasedHockneyParams::threshold);

  py::class_<EncDecLineParams>(m, "EncDecLineParams")
      .def(py::init<double, double>(), py::arg("alpha"), py::arg("beta"))
      .def_readwrite("alpha", &EncDecLineParams::alpha)
      .def_readwrite("beta", &EncDecLineParams::beta);

  py::class_<MaxRateClassParams>(m, "MaxRateClassParams")
      .def(py::init<double, double, double>(), py::arg("alpha"), py::arg("a"), py::arg("b"))
      .def_readwrite("alpha", &MaxRateClassParams::alpha)
      .def_readwrite("a", &MaxRateClassParams::a)
      .def_readwrite("b", &MaxRateClassParams::b)
      .def("eval", &MaxRateClassParams::eval);

  py::class_<MaxRateParams>(m, "MaxRateParams")
      .def(py::init<MaxRateClassParams, MaxRateClassParams, MaxRateClassParams>(), py::arg("small"),
           py::arg("moderate"), py::arg("large"))
      .def_readwrite("small", &MaxRateParams::small)
      .def_readwrite("moderate", &MaxRateParams::moderate)
      .def_readwrite("large", &MaxRateParams::large);

  py::class_<Prediction>(m, "Prediction")
      .def_readonly("latency_us", &Prediction::latency_us)
      .def_property_readonly("phase", [](const Prediction& p) { return std::string(to_string(p.phase)); })
      .def_property_readonly("size_class", [](const Prediction& p) { return std::string(to_string(p.size_class)); });

  m.def("fit_hockney", [](const py::iterable& rows, std::size_t threshold) {
    const auto s = samples_from(rows);
    const auto f = fit_hockney(s, threshold);
    return py::make_tuple(f.params, f.eager_fallback, f.rendezvous_fallback);
  }, py::arg("samples"), py::arg("threshold") = kDefaultPhaseThreshold);
  m.def("fit_encdec_line", [](const py::iterable& rows) {
    const auto s = samples_from(rows);
    const auto f = fit_encdec_line(s);
    return py::make_tuple(f.params, f.fallback);
  }, py::arg("samples"));
  m.def("fit_maxrate", [](const py::iterable& rows) {
    const auto s = samples_from(rows);
    return fit_maxrate(s).params;
  }, py::arg("samples"));

  m.def("compose_enhanced", &compose_enhanced);
  m.def("predict_single", &predict_single);
  m.def("eval_maxrate", &eval_maxrate);
  m.def("predict_multipair", &predict_multipair);
  m.def("overhead_single_large", &overhead_single_large);
  m.def("overhead_multipair_slow", [](const HockneyParams& c, const MaxRateClassParams& e, int k, std::size_t m) {
    const auto r = overhead_multipair_slow(c, e, k, m);
    return py::make_tuple(r.ratio, r.in_regime);
  });
  m.def("predict_pipelined", &predict_pipelined);

  m.def("preset_names", &preset_names);
  m.def("preset_json", [](const std::string& name) { return params_to_json(preset(name)); });
  m.def("hockney_preset", [](const std::string& name) { return *preset(name).hockney; });
  m.def("encdec_library", [](const std::string& name) { return encdec_library(name); });
  m.def("maxrate_boringssl", &maxrate_boringssl);
}
