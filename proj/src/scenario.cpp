#include "qfeel/scenario.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <set>
#include <sstream>

#include "qfeel/quantizer.hpp"
#include "qfeel/random.hpp"

namespace qfeel {

namespace json_keys {
using Setter = std::function<void(const nlohmann::json&, ScenarioConfig&)>;

template <class T>
std::pair<const std::string, Setter> field(const char* name, T ScenarioConfig::*member) {
    return {name, [member](const nlohmann::json& v, ScenarioConfig& c) { v.get_to(c.*member); }};
}

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table{
        field("seed", &ScenarioConfig::seed),
        field("devices", &ScenarioConfig::devices),
        field("dimension", &ScenarioConfig::dimension),
        field("total_bandwidth_hz", &ScenarioConfig::total_bandwidth_hz),
        field("noise_psd_dbm_per_hz", &ScenarioConfig::noise_psd_dbm_per_hz),
        field("cell_radius_m", &ScenarioConfig::cell_radius_m),
        field("exclusion_radius_m", &ScenarioConfig::exclusion_radius_m),
        field("shadowing_std_db", &ScenarioConfig::shadowing_std_db),
        field("cpu_min_hz", &ScenarioConfig::cpu_min_hz),
        field("cpu_max_hz", &ScenarioConfig::cpu_max_hz),
        field("tx_power_dbm", &ScenarioConfig::tx_power_dbm),
        field("cycles_per_batch", &ScenarioConfig::cycles_per_batch),
        field("delta1", &ScenarioConfig::delta1),
        field("delta2", &ScenarioConfig::delta2),
        field("train_samples", &ScenarioConfig::train_samples),
        field("validation_samples", &ScenarioConfig::validation_samples),
        field("lambda", &ScenarioConfig::lambda),
        field("batch_size", &ScenarioConfig::batch_size),
        field("lr_numerator", &ScenarioConfig::lr_numerator),
        field("lr_offset", &ScenarioConfig::lr_offset),
        field("q1", &ScenarioConfig::q1),
        field("q2", &ScenarioConfig::q2),
        field("probe_rounds", &ScenarioConfig::probe_rounds),
        field("train_repeats", &ScenarioConfig::train_repeats),
        field("sweep_repeats", &ScenarioConfig::sweep_repeats),
        field("epsilon", &ScenarioConfig::epsilon),
        field("sweep_q", &ScenarioConfig::sweep_q),
        field("track_q", &ScenarioConfig::track_q),
        field("max_rounds", &ScenarioConfig::max_rounds),
        field("oracle_q_max", &ScenarioConfig::oracle_q_max),
        field("q_init", &ScenarioConfig::q_init),
        field("q_max", &ScenarioConfig::q_max),
    };
    return table;
}
}  // namespace json_keys

void validate(const ScenarioConfig& c) {
    auto require = [](bool ok, const char* what) {
        if (!ok) throw ConfigError(std::string("config: ") + what);
    };
    require(c.devices >= 1, "devices must be >= 1");
    require(c.dimension >= 1, "dimension must be >= 1");
    require(c.total_bandwidth_hz > 0.0, "total_bandwidth_hz must be positive");
    require(std::isfinite(c.noise_psd_dbm_per_hz), "noise_psd_dbm_per_hz must be finite");
    require(c.exclusion_radius_m > 0.0 && c.exclusion_radius_m < c.cell_radius_m,
            "need 0 < exclusion_radius_m < cell_radius_m");
    require(c.shadowing_std_db >= 0.0, "shadowing_std_db must be >= 0");
    require(c.cpu_min_hz > 0.0 && c.cpu_min_hz <= c.cpu_max_hz, "need 0 < cpu_min_hz <= cpu_max_hz");
    require(std::isfinite(c.tx_power_dbm), "tx_power_dbm must be finite");
    require(c.cycles_per_batch > 0.0, "cycles_per_batch must be positive");
    require(c.delta1 >= 0.0 && c.delta1 <= 1.0, "delta1 must lie in [0, 1]");
    require(c.delta2 >= 0.0 && c.delta2 <= 1.0, "delta2 must lie in [0, 1]");
    require(c.train_samples >= c.devices, "train_samples must be at least the number of devices");
    require(c.validation_samples >= 0, "validation_samples must be >= 0");
    require(c.lambda >= 0.0, "lambda must be >= 0");
    require(c.batch_size >= 1 && c.batch_size <= c.train_samples / c.devices, "batch_size must fit in a shard");
    require(c.lr_numerator > 0.0 && c.lr_offset > 0.0, "learning-rate constants must be positive");
    require(c.q1 >= 2 && c.q2 >= 2, "probe levels must be >= 2");
    require(c.q1 != c.q2, "probe levels q1 and q2 must differ");
    require(c.probe_rounds >= 3, "probe_rounds must be >= 3");
    require(c.train_repeats >= 1, "train_repeats must be >= 1");
    require(c.sweep_repeats >= 1, "sweep_repeats must be >= 1");
    require(c.epsilon > 0.0, "epsilon must be positive");
    require(std::all_of(c.sweep_q.begin(), c.sweep_q.end(), [](int q) { return q >= 2; }), "sweep_q entries must be >= 2");
    require(std::all_of(c.track_q.begin(), c.track_q.end(), [](int q) { return q >= 2; }), "track_q entries must be >= 2");
    require(c.max_rounds >= c.probe_rounds, "max_rounds must be >= probe_rounds");
    require(c.oracle_q_max >= 2, "oracle_q_max must be >= 2");
    require(c.q_max >= 2.0 && c.q_init >= 2.0, "q_init and q_max must be >= 2");
}

void to_json(nlohmann::json& j, const ScenarioConfig& c) {
    j = nlohmann::json{
        {"seed", c.seed},
        {"devices", c.devices},
        {"dimension", c.dimension},
        {"total_bandwidth_hz", c.total_bandwidth_hz},
        {"noise_psd_dbm_per_hz", c.noise_psd_dbm_per_hz},
        {"cell_radius_m", c.cell_radius_m},
        {"exclusion_radius_m", c.exclusion_radius_m},
        {"shadowing_std_db", c.shadowing_std_db},
        {"cpu_min_hz", c.cpu_min_hz},
        {"cpu_max_hz", c.cpu_max_hz},
        {"tx_power_dbm", c.tx_power_dbm},
        {"cycles_per_batch", c.cycles_per_batch},
        {"delta1", c.delta1},
        {"delta2", c.delta2},
        {"train_samples", c.train_samples},
        {"validation_samples", c.validation_samples},
        {"lambda", c.lambda},
        {"batch_size", c.batch_size},
        {"lr_numerator", c.lr_numerator},
        {"lr_offset", c.lr_offset},
        {"q1", c.q1},
        {"q2", c.q2},
        {"probe_rounds", c.probe_rounds},
        {"train_repeats", c.train_repeats},
        {"sweep_repeats", c.sweep_repeats},
        {"epsilon", c.epsilon},
        {"sweep_q", c.sweep_q},
        {"track_q", c.track_q},
        {"max_rounds", c.max_rounds},
        {"oracle_q_max", c.oracle_q_max},
        {"q_init", c.q_init},
        {"q_max", c.q_max},
    };
}

void from_json(const nlohmann::json& j, ScenarioConfig& c) {
    if (!j.is_object()) throw ConfigError("config: expected a JSON object");
    const auto& table = json_keys::setters();
    for (const auto& [key, value] : j.items()) {
        const auto it = table.find(key);
        if (it == table.end()) throw ConfigError("config: unknown key '" + key + "'");
        try {
            it->second(value, c);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config: bad value for '" + key + "': " + e.what());
        }
    }
}

ScenarioConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    ScenarioConfig cfg = j.get<ScenarioConfig>();
    validate(cfg);
    return cfg;
}

void save_config(const ScenarioConfig& cfg, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << nlohmann::json(cfg).dump(2) << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

NetworkConfig network_config(const ScenarioConfig& cfg) {
    NetworkConfig net;
    net.total_bandwidth_hz = cfg.total_bandwidth_hz;
    net.noise_psd_w_per_hz = dbm_to_watts(cfg.noise_psd_dbm_per_hz);
    net.cell_radius_m = cfg.cell_radius_m;
    net.exclusion_radius_m = cfg.exclusion_radius_m;
    net.shadowing_std_db = cfg.shadowing_std_db;
    return net;
}

Scenario sample_scenario(const ScenarioConfig& cfg) {
    validate(cfg);
    Scenario s;
    s.network = network_config(cfg);
    Rng rng(derive_seed(cfg.seed, {0x5ce7a210ULL}));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> shadow(0.0, cfg.shadowing_std_db);
    const double r2_lo = cfg.exclusion_radius_m * cfg.exclusion_radius_m;
    const double r2_hi = cfg.cell_radius_m * cfg.cell_radius_m;
    const double power_w = dbm_to_watts(cfg.tx_power_dbm);
    for (int k = 0; k < cfg.devices; ++k) {
        Placement p;
        // Uniform by area: r^2 uniform between the two radii.
        p.distance_m = std::sqrt(r2_lo + (r2_hi - r2_lo) * unif(rng));
        p.angle_rad = 2.0 * std::numbers::pi * unif(rng);
        p.shadowing_db = cfg.shadowing_std_db > 0.0 ? shadow(rng) : 0.0;
        DeviceProfile d;
        d.cpu_hz = cfg.cpu_min_hz + (cfg.cpu_max_hz - cfg.cpu_min_hz) * unif(rng);
        d.cycles_per_batch = cfg.cycles_per_batch;
        d.tx_power_watts = power_w;
        d.large_scale_gain = large_scale_gain(p.distance_m, p.shadowing_db);
        s.placements.push_back(p);
        s.profiles.push_back(d);
    }
    return s;
}

std::uint64_t training_seed(const ScenarioConfig& cfg, int repeat) {
    return cfg.seed * 1000 + static_cast<std::uint64_t>(repeat);
}

ExperimentData make_experiment_data(const ScenarioConfig& cfg) {
    validate(cfg);
    ExperimentData out;
    Rng data_rng(derive_seed(cfg.seed, {0xda7aULL}));
    auto synth = generate_synthetic(cfg.dimension, cfg.train_samples + cfg.validation_samples, cfg.delta1, cfg.delta2,
                                    data_rng);
    Dataset train;
    train.features = synth.data.features.topRows(cfg.train_samples);
    train.labels = synth.data.labels.head(cfg.train_samples);
    if (cfg.validation_samples > 0) {
        out.validation.features = synth.data.features.bottomRows(cfg.validation_samples);
        out.validation.labels = synth.data.labels.tail(cfg.validation_samples);
    }
    synth = {};
    Rng shard_rng(derive_seed(cfg.seed, {0x5a4dULL}));
    out.shards = shard_dataset(train, cfg.devices, shard_rng);
    return out;
}

FeelConfig feel_config(const ScenarioConfig& cfg, int q, int repeat, std::int64_t rounds,
                       std::optional<StopRule> stop) {
    FeelConfig fc;
    fc.q = q;
    fc.rounds = rounds;
    fc.schedule = {cfg.lr_numerator, cfg.lr_offset};
    fc.batch_size = cfg.batch_size;
    fc.lambda = cfg.lambda;
    fc.seed = training_seed(cfg, repeat);
    fc.stop = stop;
    return fc;
}

double tracking_error(const GapFit& fit, const LossTrace& trace, int q, int k, std::int64_t d) {
    const auto n_tilde = fit.N_tilde;
    if (static_cast<std::int64_t>(trace.rounds()) < n_tilde) throw InvalidInput("tracking_error: trace shorter than N~");
    const std::int64_t first = std::max<std::int64_t>(1, n_tilde / 2);
    double sum = 0.0;
    for (std::int64_t n = first; n <= n_tilde; ++n) {
        const double actual = trace.loss[static_cast<std::size_t>(n - 1)] - fit.Z;
        sum += std::abs(actual - predict_gap(fit, q, static_cast<double>(n), k, d));
    }
    return sum / static_cast<double>(n_tilde - first + 1);
}

std::optional<std::size_t> simulated_argmin(const std::vector<SimulatedPoint>& points) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (!points[i].total_s) continue;
        if (!best || *points[i].total_s < *points[*best].total_s) best = i;
    }
    return best;
}

RunArtifact run_pipeline(const ScenarioConfig& cfg, const ProgressFn& progress) {
    validate(cfg);
    const auto started = std::chrono::steady_clock::now();
    auto say = [&](const std::string& msg) {
        if (progress) progress(msg);
    };

    RunArtifact art;
    art.config = cfg;
    art.scenario = sample_scenario(cfg);
    const auto& profiles = art.scenario.profiles;
    const auto& net = art.scenario.network;
    const int k = cfg.devices;
    const std::int64_t d = cfg.dimension;

    say("generating synthetic data");
    auto data = make_experiment_data(cfg);
    const auto& shards = data.shards;
    const auto& validation = data.validation;

    auto train = [&](int q, int repeat, std::int64_t rounds, std::optional<StopRule> stop) {
        return run_feel(shards, feel_config(cfg, q, repeat, rounds, stop));
    };

    try {
        say("probe training at q1 and q2");
        std::vector<LossTrace> probe_means;
        for (int q : {cfg.q1, cfg.q2}) {
            auto& runs = art.traces[q];
            runs.clear();
            for (int r = 0; r < cfg.train_repeats; ++r) runs.push_back(train(q, r, cfg.probe_rounds, std::nullopt).trace);
            probe_means.push_back(mean_trace(runs));
            probe_means.back().q = q;
        }

        say("fitting the optimality-gap model");
        art.fit = fit_gap_model(probe_means[0], probe_means[1], d, k);
        art.derived = derive(*art.fit, cfg.epsilon);

        say("joint quantization and bandwidth optimization");
        JointOptions jo;
        jo.q_init = cfg.q_init;
        jo.q_max = cfg.q_max;
        art.joint = joint_optimize(profiles, net, d, *art.derived, jo);
        art.model_sweep = brute_force_sweep(profiles, net, d, *art.derived, 2, cfg.oracle_q_max);

        std::set<int> levels(cfg.sweep_q.begin(), cfg.sweep_q.end());
        const int q_star = art.joint->plan.q;
        for (int q : {q_star - 1, q_star, q_star + 1})
            if (q >= 2) levels.insert(q);
        const StopRule stop{art.fit->Z, cfg.epsilon, cfg.probe_rounds};
        Eigen::VectorXd final_model;
        for (int q : levels) {
            say("simulated training at q = " + std::to_string(q));
            SimulatedPoint pt;
            pt.q = q;
            pt.round_deadline_s = allocate_bandwidth(profiles, net, payload_bits(d, q)).round_deadline_s;
            pt.equal_deadline_s = equal_bandwidth_deadline(profiles, net, payload_bits(d, q));
            auto& runs = art.traces[q];
            if (runs.size() < static_cast<std::size_t>(cfg.sweep_repeats)) runs.resize(cfg.sweep_repeats);
            double rounds_sum = 0.0;
            bool all_reached = true;
            for (int r = 0; r < cfg.sweep_repeats; ++r) {
                // Same seed as any probe run at this level, so the probe is a prefix of this run.
                auto result = train(q, r, cfg.max_rounds, stop);
                const auto idx = rounds_to_gap(result.trace, art.fit->Z, cfg.epsilon);
                if (idx)
                    rounds_sum += static_cast<double>(*idx + 1);
                else
                    all_reached = false;
                if (q == q_star && r == 0) final_model = std::move(result.model);
                runs[static_cast<std::size_t>(r)] = std::move(result.trace);
            }
            if (all_reached) {
                pt.rounds = rounds_sum / cfg.sweep_repeats;
                pt.total_s = *pt.rounds * pt.round_deadline_s;
                pt.equal_total_s = *pt.rounds * pt.equal_deadline_s;
            }
            art.simulated.push_back(pt);
        }

        for (int q : cfg.track_q) {
            auto& runs = art.traces[q];
            if (runs.size() < static_cast<std::size_t>(cfg.train_repeats)) {
                say("tracking runs at q = " + std::to_string(q));
                for (auto r = runs.size(); r < static_cast<std::size_t>(cfg.train_repeats); ++r)
                    runs.push_back(train(q, static_cast<int>(r), cfg.probe_rounds, std::nullopt).trace);
            }
            std::vector<LossTrace> prefixes;
            for (int r = 0; r < cfg.train_repeats; ++r) {
                LossTrace p = runs[static_cast<std::size_t>(r)];
                p.loss.resize(static_cast<std::size_t>(cfg.probe_rounds));
                prefixes.push_back(std::move(p));
            }
            art.tracking.push_back({q, tracking_error(*art.fit, mean_trace(prefixes), q, k, d)});
        }

        if (validation.size() > 0 && final_model.size() == d) art.validation_accuracy = accuracy(final_model, validation);
    } catch (const Error& e) {
        art.failure = e.what();
        art.failure_code = e.code();
    }

    art.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return art;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << std::setprecision(17);
    return out;
}

void close_out(std::ofstream& out, const std::filesystem::path& path) {
    out.flush();
    if (!out) throw IoError("failed writing " + path.string());
}

template <class T>
void write_opt(std::ostream& os, const std::optional<T>& v) {
    if (v) os << *v;
}

}  // namespace

std::string summary_text(const RunArtifact& a) {
    std::ostringstream os;
    os << std::setprecision(6);
    os << "seed: " << a.config.seed << "\n";
    os << "devices: " << a.config.devices << ", dimension: " << a.config.dimension << ", epsilon: " << a.config.epsilon
       << "\n";
    if (a.fit) {
        os << "fit: A=" << a.fit->A << " B=" << a.fit->B << " C=" << a.fit->C << " D=" << a.fit->D << " Z=" << a.fit->Z
           << " (q1=" << a.fit->q1 << ", q2=" << a.fit->q2 << ", N~=" << a.fit->N_tilde << ")\n";
    }
    if (a.derived) os << "H1=" << a.derived->H1 << " H2=" << a.derived->H2 << "\n";
    if (a.joint) {
        const auto& p = a.joint->plan;
        os << "q*: " << p.q << " (continuous " << a.joint->q_continuous << ")\n";
        os << "T_d: " << p.round_deadline_s << " s\n";
        os << "N_eps: " << p.predicted_rounds << "\n";
        os << "T: " << p.predicted_total_s << " s\n";
        os << "device  cpu_hz  bandwidth_hz\n";
        for (std::size_t i = 0; i < p.bandwidths_hz.size() && i < a.scenario.profiles.size(); ++i)
            os << i << "  " << a.scenario.profiles[i].cpu_hz << "  " << p.bandwidths_hz[i] << "\n";
    }
    if (const auto best = simulated_argmin(a.simulated)) {
        const auto& pt = a.simulated[*best];
        os << "simulated argmin q: " << pt.q << " (T=" << *pt.total_s << " s)\n";
    }
    if (a.joint) {
        for (const auto& pt : a.simulated) {
            if (pt.q != a.joint->plan.q || !pt.total_s) continue;
            os << "at q*: optimal bandwidth " << *pt.total_s << " s, equal bandwidth " << *pt.equal_total_s << " s\n";
        }
    }
    for (const auto& t : a.tracking) os << "fit tracking q=" << t.q << ": mean |error| " << t.mean_abs_error << "\n";
    if (a.validation_accuracy) os << "validation accuracy at q*: " << *a.validation_accuracy << "\n";
    if (a.failure) os << "FAILED (exit " << static_cast<int>(a.failure_code) << "): " << *a.failure << "\n";
    return os.str();
}

std::vector<std::filesystem::path> emit_report(const RunArtifact& a, const std::filesystem::path& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
    std::vector<std::filesystem::path> written;

    const auto cfg_path = out_dir / "config.json";
    save_config(a.config, cfg_path);
    written.push_back(cfg_path);

    {
        const auto path = out_dir / "devices.csv";
        auto out = open_out(path);
        out << "device,distance_m,angle_rad,shadowing_db,large_scale_gain,cpu_hz,tx_power_w,bandwidth_hz\n";
        for (std::size_t i = 0; i < a.scenario.profiles.size(); ++i) {
            const auto& p = a.scenario.profiles[i];
            const auto& pl = a.scenario.placements[i];
            out << i << ',' << pl.distance_m << ',' << pl.angle_rad << ',' << pl.shadowing_db << ',' << p.large_scale_gain
                << ',' << p.cpu_hz << ',' << p.tx_power_watts << ',';
            if (a.joint) out << a.joint->plan.bandwidths_hz[i];
            out << '\n';
        }
        close_out(out, path);
        written.push_back(path);
    }

    for (const auto& [q, runs] : a.traces) {
        for (const auto& t : runs) {
            const auto path = out_dir / trace_file_name(q, t.seed);
            write_trace_csv(t, path);
            written.push_back(path);
        }
    }

    if (a.fit) {
        const auto path = out_dir / "fit.json";
        auto out = open_out(path);
        out << nlohmann::json(*a.fit).dump(2) << '\n';
        close_out(out, path);
        written.push_back(path);
    }
    if (a.joint) {
        const auto path = out_dir / "plan.json";
        auto out = open_out(path);
        out << nlohmann::json(a.joint->plan).dump(2) << '\n';
        close_out(out, path);
        written.push_back(path);
    }
    if (!a.model_sweep.empty()) {
        const auto path = out_dir / "oracle_sweep.csv";
        write_sweep_csv(a.model_sweep, path);
        written.push_back(path);
    }
    if (!a.simulated.empty()) {
        const auto path = out_dir / "simulated_sweep.csv";
        auto out = open_out(path);
        out << "q,T_d,T_d_equal,rounds,T_total,T_total_equal\n";
        for (const auto& pt : a.simulated) {
            out << pt.q << ',' << pt.round_deadline_s << ',' << pt.equal_deadline_s << ',';
            write_opt(out, pt.rounds);
            out << ',';
            write_opt(out, pt.total_s);
            out << ',';
            write_opt(out, pt.equal_total_s);
            out << '\n';
        }
        close_out(out, path);
        written.push_back(path);
    }
    if (!a.tracking.empty()) {
        const auto path = out_dir / "fit_tracking.csv";
        auto out = open_out(path);
        out << "q,mean_abs_error,epsilon\n";
        for (const auto& t : a.tracking) out << t.q << ',' << t.mean_abs_error << ',' << a.config.epsilon << '\n';
        close_out(out, path);
        written.push_back(path);
    }
    {
        const auto path = out_dir / "summary.txt";
        auto out = open_out(path);
        out << summary_text(a);
        close_out(out, path);
        written.push_back(path);
    }
    return written;
}

}  // namespace qfeel
