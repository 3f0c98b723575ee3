// Command-line front end: each verb runs one stage of the experiment and writes
// its outputs into --out.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include "qfeel/optimizer.hpp"
#include "qfeel/quantizer.hpp"
#include "qfeel/scenario.hpp"

namespace fs = std::filesystem;
using namespace qfeel;

namespace {

struct CommonArgs {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = "qfeel_out";
    bool quiet = false;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
    cmd->add_option("--config", a.config, "Flat JSON config file (missing keys keep defaults)")->check(CLI::ExistingFile);
    cmd->add_option("--seed", a.seed, "Override the config seed");
    cmd->add_option("--out", a.out, "Output directory")->capture_default_str();
    cmd->add_flag("--quiet", a.quiet, "Suppress progress messages");
}

ScenarioConfig resolve(const CommonArgs& a) {
    ScenarioConfig cfg = a.config.empty() ? ScenarioConfig{} : load_config(a.config);
    if (a.seed) cfg.seed = *a.seed;
    validate(cfg);
    return cfg;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

GapFit load_fit(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open fit file " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("fit file " + path.string() + ": " + e.what());
    }
    return j.get<GapFit>();
}

void write_json(const nlohmann::json& j, const fs::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << j.dump(2) << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

void check_fit_matches(const GapFit& fit, const ScenarioConfig& cfg) {
    if (fit.K != cfg.devices || fit.d != cfg.dimension)
        throw ConfigError("fit was made for K=" + std::to_string(fit.K) + ", d=" + std::to_string(fit.d) +
                          " but the config has K=" + std::to_string(cfg.devices) +
                          ", d=" + std::to_string(cfg.dimension));
}

void print_plan(const AllocationPlan& plan) {
    std::cout << std::setprecision(6) << "q* = " << plan.q << "\nT_d = " << plan.round_deadline_s
              << " s\nN_eps = " << plan.predicted_rounds << "\nT = " << plan.predicted_total_s << " s\n";
    for (std::size_t i = 0; i < plan.bandwidths_hz.size(); ++i)
        std::cout << "  b[" << i << "] = " << plan.bandwidths_hz[i] << " Hz\n";
}

int cmd_pipeline(const CommonArgs& a) {
    const auto cfg = resolve(a);
    ProgressFn progress;
    if (!a.quiet) progress = [](const std::string& m) { std::cerr << "[qfeel] " << m << '\n'; };
    const auto art = run_pipeline(cfg, progress);
    emit_report(art, a.out);
    std::cout << summary_text(art);
    if (!a.quiet) std::cerr << "[qfeel] wall clock " << art.wall_clock_s << " s, outputs in " << a.out << '\n';
    return static_cast<int>(art.failure ? art.failure_code : ExitCode::ok);
}

int cmd_sweep(const CommonArgs& a, std::optional<std::int64_t> rounds) {
    const auto cfg = resolve(a);
    ensure_dir(a.out);
    save_config(cfg, fs::path(a.out) / "config.json");
    if (!a.quiet) std::cerr << "[qfeel] generating synthetic data\n";
    const auto data = make_experiment_data(cfg);
    const auto n = rounds.value_or(cfg.probe_rounds);
    std::vector<int> levels = cfg.sweep_q;
    for (int q : {cfg.q1, cfg.q2})
        if (std::find(levels.begin(), levels.end(), q) == levels.end()) levels.push_back(q);
    std::sort(levels.begin(), levels.end());
    for (int q : levels) {
        for (int r = 0; r < cfg.train_repeats; ++r) {
            if (!a.quiet) std::cerr << "[qfeel] training q = " << q << ", repeat " << r << '\n';
            const auto res = run_feel(data.shards, feel_config(cfg, q, r, n));
            const auto path = fs::path(a.out) / trace_file_name(q, res.trace.seed);
            write_trace_csv(res.trace, path);
            std::cout << path.string() << '\n';
        }
    }
    return 0;
}

int cmd_fit(const CommonArgs& a, const std::string& traces_dir) {
    const auto cfg = resolve(a);
    const fs::path dir = traces_dir.empty() ? fs::path(a.out) : fs::path(traces_dir);
    std::vector<LossTrace> means;
    for (int q : {cfg.q1, cfg.q2}) {
        std::vector<LossTrace> runs;
        for (int r = 0; r < cfg.train_repeats; ++r) {
            auto t = read_trace_csv(dir / trace_file_name(q, training_seed(cfg, r)));
            if (static_cast<std::int64_t>(t.rounds()) < cfg.probe_rounds)
                throw ConfigError("trace for q=" + std::to_string(q) + " has fewer than probe_rounds entries");
            t.loss.resize(static_cast<std::size_t>(cfg.probe_rounds));
            runs.push_back(std::move(t));
        }
        means.push_back(mean_trace(runs));
        means.back().q = q;
    }
    const auto fit = fit_gap_model(means[0], means[1], cfg.dimension, cfg.devices);
    ensure_dir(a.out);
    write_json(fit, fs::path(a.out) / "fit.json");
    std::cout << std::setprecision(8) << "A = " << fit.A << "\nB = " << fit.B << "\nC = " << fit.C
              << "\nD = " << fit.D << "\nZ = " << fit.Z << '\n';
    const auto h = derive(fit, cfg.epsilon);
    std::cout << "H1 = " << h.H1 << "\nH2 = " << h.H2 << '\n';
    return 0;
}

int cmd_optimize(const CommonArgs& a, const std::string& fit_path) {
    const auto cfg = resolve(a);
    const auto fit = load_fit(fit_path.empty() ? fs::path(a.out) / "fit.json" : fs::path(fit_path));
    check_fit_matches(fit, cfg);
    const auto scenario = sample_scenario(cfg);
    JointOptions jo;
    jo.q_init = cfg.q_init;
    jo.q_max = cfg.q_max;
    const auto res = joint_optimize(scenario.profiles, scenario.network, fit, cfg.epsilon, jo);
    ensure_dir(a.out);
    write_json(res.plan, fs::path(a.out) / "plan.json");
    print_plan(res.plan);
    std::cout << "continuous q = " << res.q_continuous << " after " << res.outer_iterations << " alternations\n";
    return 0;
}

int cmd_oracle(const CommonArgs& a, const std::string& fit_path, std::optional<int> q_hi) {
    const auto cfg = resolve(a);
    const auto fit = load_fit(fit_path.empty() ? fs::path(a.out) / "fit.json" : fs::path(fit_path));
    check_fit_matches(fit, cfg);
    const auto scenario = sample_scenario(cfg);
    const auto h = derive(fit, cfg.epsilon);
    const auto rows =
        brute_force_sweep(scenario.profiles, scenario.network, cfg.dimension, h, 2, q_hi.value_or(cfg.oracle_q_max));
    ensure_dir(a.out);
    write_sweep_csv(rows, fs::path(a.out) / "oracle_sweep.csv");
    const auto& best = best_row(rows);
    std::cout << std::setprecision(6) << "best q = " << best.q << ", T_d = " << best.round_deadline_s
              << " s, N_eps = " << best.rounds << ", T = " << best.total_s << " s\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Quantized federated edge learning: fitting, optimization and simulation"};
    app.require_subcommand(1);

    CommonArgs common;
    std::optional<std::int64_t> sweep_rounds;
    std::string traces_dir;
    std::string fit_path;
    std::optional<int> oracle_q_hi;

    auto* pipeline = app.add_subcommand("pipeline", "Probe, fit, optimize and validate by simulated training");
    add_common(pipeline, common);

    auto* sweep = app.add_subcommand("sweep", "Train at every level in sweep_q (plus q1, q2) and write loss traces");
    add_common(sweep, common);
    sweep->add_option("--rounds", sweep_rounds, "Rounds per run (default: probe_rounds)")->check(CLI::PositiveNumber);

    auto* fit = app.add_subcommand("fit", "Fit the optimality-gap curve to the q1 and q2 traces");
    add_common(fit, common);
    fit->add_option("--traces", traces_dir, "Directory holding the trace CSVs (default: --out)");

    auto* optimize = app.add_subcommand("optimize", "Jointly choose q and the bandwidth split");
    add_common(optimize, common);
    optimize->add_option("--fit", fit_path, "Fit JSON (default: <out>/fit.json)");

    auto* oracle = app.add_subcommand("oracle", "Brute force over integer q with optimal bandwidth");
    add_common(oracle, common);
    oracle->add_option("--fit", fit_path, "Fit JSON (default: <out>/fit.json)");
    oracle->add_option("--q-max", oracle_q_hi, "Largest level to try (default: oracle_q_max)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : static_cast<int>(ExitCode::config);
    }

    try {
        if (*pipeline) return cmd_pipeline(common);
        if (*sweep) return cmd_sweep(common, sweep_rounds);
        if (*fit) return cmd_fit(common, traces_dir);
        if (*optimize) return cmd_optimize(common, fit_path);
        if (*oracle) return cmd_oracle(common, fit_path, oracle_q_hi);
    } catch (const Error& e) {
        std::cerr << "qfeel: " << e.what() << '\n';
        return static_cast<int>(e.code());
    } catch (const std::exception& e) {
        std::cerr << "qfeel: " << e.what() << '\n';
        return static_cast<int>(ExitCode::failure);
    }
    return static_cast<int>(ExitCode::failure);
}
