#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qfeel/channel.hpp"
#include "qfeel/errors.hpp"
#include "qfeel/fitting.hpp"
#include "qfeel/optimizer.hpp"
#include "qfeel/trainer.hpp"

namespace qfeel {

/// Every constant of an experiment. Radio quantities are stored in the units
/// people write them in (dBm, dBm/Hz, dB) and converted once by network_config()
/// and sample_scenario().
struct ScenarioConfig {
    std::uint64_t seed = 1;
    int devices = 6;
    int dimension = 1024;

    double total_bandwidth_hz = 10e3;
    double noise_psd_dbm_per_hz = -174.0;
    double cell_radius_m = 500.0;
    double exclusion_radius_m = 100.0;
    double shadowing_std_db = 8.0;
    double cpu_min_hz = 100e6;
    double cpu_max_hz = 1e9;
    double tx_power_dbm = 1.0;
    double cycles_per_batch = 1e8;

    double delta1 = 0.9;
    double delta2 = 0.25;
    std::int64_t train_samples = 48000;
    std::int64_t validation_samples = 12000;
    double lambda = 1e-6;
    std::int64_t batch_size = 64;
    double lr_numerator = 5.0;
    double lr_offset = 10.0;

    int q1 = 4;
    int q2 = 6;
    std::int64_t probe_rounds = 100;
    int train_repeats = 5;  // probe and tracking runs averaged per level
    int sweep_repeats = 3;  // simulated-sweep runs averaged per level
    double epsilon = 0.012;
    std::vector<int> sweep_q{2, 4, 6, 8, 12, 16, 24};  // q*-1, q*, q*+1 are always added
    std::vector<int> track_q{4, 6, 8, 16};
    std::int64_t max_rounds = 1000;
    int oracle_q_max = 64;
    double q_init = 8.0;
    double q_max = 4096.0;

    bool operator==(const ScenarioConfig&) const = default;
};

/// Throws ConfigError on any violated constraint.
void validate(const ScenarioConfig& cfg);

void to_json(nlohmann::json& j, const ScenarioConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, ScenarioConfig& cfg);

ScenarioConfig load_config(const std::filesystem::path& path);
void save_config(const ScenarioConfig& cfg, const std::filesystem::path& path);

NetworkConfig network_config(const ScenarioConfig& cfg);

struct Placement {
    double distance_m = 0.0;
    double angle_rad = 0.0;
    double shadowing_db = 0.0;
};

struct Scenario {
    std::vector<DeviceProfile> profiles;
    std::vector<Placement> placements;
    NetworkConfig network;
};

/// Devices uniform over the annulus [r_h, r] by area, CPU frequencies uniform on
/// [cpu_min, cpu_max], Gaussian shadowing in dB. Deterministic in cfg.seed.
Scenario sample_scenario(const ScenarioConfig& cfg);

/// Seed of the r-th training repetition; shared by every quantization level.
std::uint64_t training_seed(const ScenarioConfig& cfg, int repeat);

struct ExperimentData {
    std::vector<Dataset> shards;
    Dataset validation;
};

/// Synthetic training set split evenly over the devices, plus a held-out set.
ExperimentData make_experiment_data(const ScenarioConfig& cfg);

/// Trainer settings for one run at level q and repetition `repeat`.
FeelConfig feel_config(const ScenarioConfig& cfg, int q, int repeat, std::int64_t rounds,
                       std::optional<StopRule> stop = std::nullopt);

struct SimulatedPoint {
    int q = 0;
    double round_deadline_s = 0.0;        // optimal bandwidth
    double equal_deadline_s = 0.0;        // B0 / K per device
    std::optional<double> rounds{};       // mean rounds to reach the gap, if every repeat reached it
    std::optional<double> total_s{};      // rounds * round_deadline_s
    std::optional<double> equal_total_s{};
};

struct TrackingError {
    int q = 0;
    double mean_abs_error = 0.0;  // mean |F_n - Z - U(n)| over n in [N~/2, N~]
};

struct RunArtifact {
    ScenarioConfig config;
    Scenario scenario;
    std::map<int, std::vector<LossTrace>> traces;  // per q, indexed by repeat; the longest run kept
    std::optional<GapFit> fit;
    std::optional<FitDerived> derived;
    std::optional<JointResult> joint;
    std::vector<SweepRow> model_sweep;
    std::vector<SimulatedPoint> simulated;
    std::vector<TrackingError> tracking;
    std::optional<double> validation_accuracy;
    double wall_clock_s = 0.0;

    std::optional<std::string> failure;
    ExitCode failure_code = ExitCode::ok;
};

using ProgressFn = std::function<void(const std::string&)>;

/// Generate data, probe-train at q1 and q2, fit the gap model, optimize (q, b),
/// then validate by simulating training across cfg.sweep_q. Failures from the
/// fit or the optimizer are recorded in the artifact rather than thrown.
RunArtifact run_pipeline(const ScenarioConfig& cfg, const ProgressFn& progress = {});

/// Mean |F_n - Z - U(n)| over rounds n in [N~/2, N~] of a trace.
double tracking_error(const GapFit& fit, const LossTrace& trace, int q, int k, std::int64_t d);

/// Index of the simulated point with the smallest total time, if any reached the gap.
std::optional<std::size_t> simulated_argmin(const std::vector<SimulatedPoint>& points);

/// Writes config, traces, fit, plan, sweeps, device table and a summary into `out_dir`.
/// Output depends only on the artifact, so re-running reproduces identical bytes.
std::vector<std::filesystem::path> emit_report(const RunArtifact& artifact, const std::filesystem::path& out_dir);

std::string summary_text(const RunArtifact& artifact);

}  // namespace qfeel
