#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "qfeel/scenario.hpp"

namespace py = pybind11;
using namespace qfeel;

namespace {

LossTrace make_trace(std::vector<double> loss, int q) {
    LossTrace t;
    t.loss = std::move(loss);
    t.q = q;
    if (!t.loss.empty()) t.initial_loss = t.loss.front();
    return t;
}

ScenarioConfig config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config JSON: ") + e.what());
    }
    auto cfg = j.get<ScenarioConfig>();
    validate(cfg);
    return cfg;
}

std::string artifact_json(const RunArtifact& a) {
    nlohmann::json j;
    j["config"] = a.config;
    j["fit"] = a.fit ? nlohmann::json(*a.fit) : nlohmann::json(nullptr);
    if (a.derived) j["derived"] = {{"H1", a.derived->H1}, {"H2", a.derived->H2}, {"epsilon", a.derived->epsilon}};
    if (a.joint) {
        j["plan"] = a.joint->plan;
        j["q_continuous"] = a.joint->q_continuous;
        j["q_alternation"] = a.joint->q_alternation;
    }
    auto& sim = j["simulated"] = nlohmann::json::array();
    for (const auto& p : a.simulated) {
        nlohmann::json row{{"q", p.q}, {"T_d", p.round_deadline_s}, {"T_d_equal", p.equal_deadline_s}};
        row["rounds"] = p.rounds ? nlohmann::json(*p.rounds) : nlohmann::json(nullptr);
        row["T_total"] = p.total_s ? nlohmann::json(*p.total_s) : nlohmann::json(nullptr);
        row["T_total_equal"] = p.equal_total_s ? nlohmann::json(*p.equal_total_s) : nlohmann::json(nullptr);
        sim.push_back(row);
    }
    auto& tr = j["tracking"] = nlohmann::json::array();
    for (const auto& t : a.tracking) tr.push_back({{"q", t.q}, {"mean_abs_error", t.mean_abs_error}});
    j["validation_accuracy"] = a.validation_accuracy ? nlohmann::json(*a.validation_accuracy) : nlohmann::json(nullptr);
    j["failure"] = a.failure ? nlohmann::json(*a.failure) : nlohmann::json(nullptr);
    j["exit_code"] = static_cast<int>(a.failure_code);
    j["wall_clock_s"] = a.wall_clock_s;
    return j.dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Quantized federated edge learning: quantizer, channel, fitting and optimizer";

    // Translators are tried newest first, so the specific classes go last.
    static py::exception<Error> base(m, "QfeelError", PyExc_RuntimeError);
    py::register_exception<InvalidInput>(m, "InvalidInput", base.ptr());
    py::register_exception<OutOfDomain>(m, "OutOfDomain", base.ptr());
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<FitFailed>(m, "FitFailed", base.ptr());
    py::register_exception<Infeasible>(m, "Infeasible", base.ptr());
    py::register_exception<NonConvergence>(m, "NonConvergence", base.ptr());

    py::class_<QuantizedGradient>(m, "QuantizedGradient")
        .def_readonly("norm", &QuantizedGradient::norm)
        .def_readonly("signs", &QuantizedGradient::signs)
        .def_readonly("levels", &QuantizedGradient::levels)
        .def_readonly("q", &QuantizedGradient::q)
        .def("__len__", &QuantizedGradient::size);

    m.def(
        "quantize",
        [](const std::vector<double>& g, int q, std::uint64_t seed) {
            Rng rng(seed);
            return quantize(g, q, rng);
        },
        py::arg("g"), py::arg("q"), py::arg("seed") = 0);
    m.def("dequantize", &dequantize, py::arg("qg"));
    m.def("payload_bits", &payload_bits, py::arg("d"), py::arg("q"));

    py::class_<DeviceProfile>(m, "DeviceProfile")
        .def(py::init([](double cpu_hz, double cycles_per_batch, double tx_power_watts, double large_scale_gain) {
                 return DeviceProfile{cpu_hz, cycles_per_batch, tx_power_watts, large_scale_gain};
             }),
             py::arg("cpu_hz"), py::arg("cycles_per_batch"), py::arg("tx_power_watts"), py::arg("large_scale_gain"))
        .def_readwrite("cpu_hz", &DeviceProfile::cpu_hz)
        .def_readwrite("cycles_per_batch", &DeviceProfile::cycles_per_batch)
        .def_readwrite("tx_power_watts", &DeviceProfile::tx_power_watts)
        .def_readwrite("large_scale_gain", &DeviceProfile::large_scale_gain);

    py::class_<NetworkConfig>(m, "NetworkConfig")
        .def(py::init<>())
        .def_readwrite("total_bandwidth_hz", &NetworkConfig::total_bandwidth_hz)
        .def_readwrite("noise_psd_w_per_hz", &NetworkConfig::noise_psd_w_per_hz);

    m.def("dbm_to_watts", &dbm_to_watts);
    m.def("large_scale_gain", &large_scale_gain, py::arg("distance_m"), py::arg("shadowing_db") = 0.0);
    m.def("exp_integral_ei", &exp_integral_ei, py::arg("x"));
    m.def("ergodic_rate", &ergodic_rate, py::arg("b_hz"), py::arg("theta"));
    m.def("rate_theta", &rate_theta, py::arg("profile"), py::arg("net"));
    m.def(
        "round_latency",
        [](const DeviceProfile& p, const NetworkConfig& net, double payload, double b) {
            return round_latency(p, net, payload, b).total();
        },
        py::arg("profile"), py::arg("net"), py::arg("payload_bits"), py::arg("b_hz"));

    py::class_<BandwidthAllocation>(m, "BandwidthAllocation")
        .def_readonly("bandwidths_hz", &BandwidthAllocation::bandwidths_hz)
        .def_readonly("round_deadline_s", &BandwidthAllocation::round_deadline_s)
        .def_readonly("iterations", &BandwidthAllocation::iterations);
    m.def(
        "allocate_bandwidth",
        [](const std::vector<DeviceProfile>& profiles, const NetworkConfig& net, double payload) {
            return allocate_bandwidth(profiles, net, payload);
        },
        py::arg("profiles"), py::arg("net"), py::arg("payload_bits"));

    py::class_<GapFit>(m, "GapFit")
        .def(py::init<>())
        .def_readwrite("A", &GapFit::A)
        .def_readwrite("B", &GapFit::B)
        .def_readwrite("C", &GapFit::C)
        .def_readwrite("D", &GapFit::D)
        .def_readwrite("Z", &GapFit::Z)
        .def_readwrite("d", &GapFit::d)
        .def_readwrite("K", &GapFit::K)
        .def_readonly("q1", &GapFit::q1)
        .def_readonly("q2", &GapFit::q2)
        .def_readonly("N_tilde", &GapFit::N_tilde)
        .def_readonly("objective", &GapFit::objective);

    py::class_<FitDerived>(m, "FitDerived")
        .def(py::init([](double h1, double h2, double eps) { return FitDerived{h1, h2, eps}; }), py::arg("H1"),
             py::arg("H2"), py::arg("epsilon"))
        .def_readonly("H1", &FitDerived::H1)
        .def_readonly("H2", &FitDerived::H2)
        .def_readonly("epsilon", &FitDerived::epsilon);

    m.def(
        "fit_gap_model",
        [](std::vector<double> loss1, int q1, std::vector<double> loss2, int q2, std::int64_t d, int k) {
            return fit_gap_model(make_trace(std::move(loss1), q1), make_trace(std::move(loss2), q2), d, k);
        },
        py::arg("loss1"), py::arg("q1"), py::arg("loss2"), py::arg("q2"), py::arg("d"), py::arg("k"),
        "Fit the gap model to two probe traces (loss after rounds 1..N).");
    m.def("predict_gap", &predict_gap, py::arg("fit"), py::arg("q"), py::arg("n_rounds"), py::arg("k"), py::arg("d"));
    m.def("derive", &derive, py::arg("fit"), py::arg("epsilon"));
    m.def(
        "rounds_needed", [](const FitDerived& h, double q, int k, std::int64_t d) { return rounds_needed(h, q, k, d); },
        py::arg("h"), py::arg("q"), py::arg("k"), py::arg("d"));

    py::class_<AllocationPlan>(m, "AllocationPlan")
        .def_readonly("q", &AllocationPlan::q)
        .def_readonly("bandwidths_hz", &AllocationPlan::bandwidths_hz)
        .def_readonly("round_deadline_s", &AllocationPlan::round_deadline_s)
        .def_readonly("predicted_rounds", &AllocationPlan::predicted_rounds)
        .def_readonly("predicted_total_s", &AllocationPlan::predicted_total_s);

    py::class_<JointResult>(m, "JointResult")
        .def_readonly("plan", &JointResult::plan)
        .def_readonly("q_continuous", &JointResult::q_continuous)
        .def_readonly("q_alternation", &JointResult::q_alternation)
        .def_readonly("refined", &JointResult::refined)
        .def_readonly("outer_iterations", &JointResult::outer_iterations)
        .def_readonly("history", &JointResult::history);

    m.def(
        "joint_optimize",
        [](const std::vector<DeviceProfile>& profiles, const NetworkConfig& net, std::int64_t d, const FitDerived& h,
           double q_init, double q_max, bool refine) {
            JointOptions o;
            o.q_init = q_init;
            o.q_max = q_max;
            o.refine = refine;
            return joint_optimize(profiles, net, d, h, o);
        },
        py::arg("profiles"), py::arg("net"), py::arg("d"), py::arg("h"), py::arg("q_init") = 8.0,
        py::arg("q_max") = 4096.0, py::arg("refine") = true);

    m.def(
        "brute_force_sweep",
        [](const std::vector<DeviceProfile>& profiles, const NetworkConfig& net, std::int64_t d, const FitDerived& h,
           int q_lo, int q_hi) {
            py::list out;
            for (const auto& r : brute_force_sweep(profiles, net, d, h, q_lo, q_hi))
                out.append(py::dict(py::arg("q") = r.q, py::arg("T_d") = r.round_deadline_s,
                                    py::arg("N_eps") = r.rounds, py::arg("T_total") = r.total_s));
            return out;
        },
        py::arg("profiles"), py::arg("net"), py::arg("d"), py::arg("h"), py::arg("q_lo") = 2, py::arg("q_hi") = 64);

    m.def("_default_config_json", [] { return nlohmann::json(ScenarioConfig{}).dump(); });
    m.def(
        "_run_pipeline_json",
        [](const std::string& config_json, const std::string& out_dir) {
            const auto cfg = config_from_json(config_json);
            RunArtifact art;
            {
                py::gil_scoped_release release;
                art = run_pipeline(cfg);
                if (!out_dir.empty()) emit_report(art, out_dir);
            }
            return artifact_json(art);
        },
        py::arg("config_json"), py::arg("out_dir") = "");
}
