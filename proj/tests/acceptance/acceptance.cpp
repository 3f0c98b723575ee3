// Acceptance run: one PASS/FAIL line per criterion, with the measured numbers.
//
// Criterion 7 trains the full pipeline on five seeds and is statistical; its
// verdict is printed but only affects the exit status under --strict.

#include <CLI11.hpp>
#include <boost/math/distributions/binomial.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "qfeel/scenario.hpp"

using namespace qfeel;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int precision = 4) {
    std::ostringstream os;
    os << std::setprecision(precision) << v;
    return os.str();
}

// ---------------------------------------------------------------- criterion 1

// Probability that a Binomial(m, p) count lands more than `z` standard deviations from its mean.
double binomial_two_sided_tail(int m, double p, double z) {
    if (p <= 0.0 || p >= 1.0) return 0.0;
    const boost::math::binomial_distribution<double> dist(m, p);
    const double mean = m * p;
    const double spread = z * std::sqrt(m * p * (1.0 - p));
    double tail = 0.0;
    const double lo = std::ceil(mean - spread) - 1.0;  // largest count strictly below mean - spread
    if (lo >= 0.0) tail += boost::math::cdf(dist, lo);
    const double hi = std::floor(mean + spread);  // counts above this are strictly above mean + spread
    if (hi < m) tail += boost::math::cdf(boost::math::complement(dist, hi));
    return tail;
}

Verdict quantizer_statistics() {
    constexpr int kVectors = 50;
    constexpr int kDraws = 1000;
    constexpr std::size_t kDim = 1024;
    Rng rng(101);
    std::normal_distribution<double> normal(0.0, 1.0);

    long exceed = 0;
    double expected = 0.0;
    double max_z = 0.0;
    double worst_var_ratio = 0.0;
    std::vector<double> g(kDim), sum(kDim);
    for (int v = 0; v < kVectors; ++v) {
        for (auto& x : g) x = normal(rng);
        const double norm = std::sqrt(std::inner_product(g.begin(), g.end(), g.begin(), 0.0));
        for (int q : {2, 4, 8, 16}) {
            std::fill(sum.begin(), sum.end(), 0.0);
            double err_sq = 0.0;
            for (int draw = 0; draw < kDraws; ++draw) {
                const auto out = dequantize(quantize(g, q, rng));
                for (std::size_t i = 0; i < kDim; ++i) {
                    sum[i] += out[i];
                    err_sq += (out[i] - g[i]) * (out[i] - g[i]);
                }
            }
            const double step = norm / q;
            for (std::size_t i = 0; i < kDim; ++i) {
                const double s = std::abs(g[i]) / norm * q;
                const double p = s - std::floor(s);
                const double mean = sum[i] / kDraws;
                const double se = step * std::sqrt(p * (1.0 - p) / kDraws);
                if (se == 0.0) {
                    if (std::abs(mean - g[i]) > 1e-12 * norm) ++exceed;
                    continue;
                }
                const double z = std::abs(mean - g[i]) / se;
                max_z = std::max(max_z, z);
                if (z > 4.0) ++exceed;
                expected += binomial_two_sided_tail(kDraws, p, 4.0);
            }
            const double bound = std::sqrt(static_cast<double>(kDim)) / q * norm * norm;
            worst_var_ratio = std::max(worst_var_ratio, err_sq / kDraws / bound);
        }
    }
    // Exceedances beyond 4 SE are counted against what an exactly unbiased
    // quantizer produces, with a Poisson-style allowance.
    const double allowed = expected + 4.0 * std::sqrt(expected) + 1.0;
    const bool mean_ok = static_cast<double>(exceed) <= allowed;
    const bool var_ok = worst_var_ratio <= 1.05;
    return {mean_ok && var_ok, "components beyond 4 SE: " + std::to_string(exceed) + " (unbiased expectation " +
                                   fmt(expected) + ", allowed " + fmt(allowed) + ", max |z| " + fmt(max_z) +
                                   "); worst E||Q(g)-g||^2 / (sqrt(d)/q ||g||^2) = " + fmt(worst_var_ratio)};
}

// ---------------------------------------------------------------- criterion 2

Verdict channel_closed_form() {
    double worst = 0.0;
    for (int i = 0; i < 10; ++i) {
        const double b = std::pow(10.0, 1.0 + 4.0 * i / 9.0);  // 10 Hz .. 100 kHz
        for (int j = 0; j < 10; ++j) {
            const double theta = std::pow(10.0, -9.0 + 7.0 * j / 9.0);  // 1e-9 .. 1e-2 s
            const double closed = ergodic_rate(b, theta);
            const double quad = oracle::rate_quadrature(b, theta);
            worst = std::max(worst, std::abs(closed - quad) / std::abs(quad));
        }
    }
    return {worst <= 1e-6, "worst relative gap on the 10x10 grid: " + fmt(worst, 3)};
}

// ---------------------------------------------------------------- criterion 3

Verdict allocation_structure() {
    Rng rng(303);
    const auto net = oracle::experiment_network();
    std::uniform_int_distribution<int> devices(2, 8);
    std::uniform_int_distribution<int> level(2, 64);
    double worst_budget = 0.0;
    double worst_equal = 0.0;
    for (int t = 0; t < 20; ++t) {
        const auto profiles = oracle::random_profiles(devices(rng), rng, net);
        const double s = payload_bits(1024, level(rng));
        const auto alloc = allocate_bandwidth(profiles, net, s);
        const double total = std::accumulate(alloc.bandwidths_hz.begin(), alloc.bandwidths_hz.end(), 0.0);
        worst_budget = std::max(worst_budget, std::abs(total - net.total_bandwidth_hz));
        for (std::size_t k = 0; k < profiles.size(); ++k) {
            const double lat = round_latency(profiles[k], net, s, alloc.bandwidths_hz[k]).total();
            worst_equal = std::max(worst_equal, std::abs(lat - alloc.round_deadline_s) / alloc.round_deadline_s);
        }
    }

    DeviceProfile slow, fast;
    slow.cycles_per_batch = fast.cycles_per_batch = 1e8;
    slow.tx_power_watts = fast.tx_power_watts = dbm_to_watts(1.0);
    slow.large_scale_gain = fast.large_scale_gain = large_scale_gain(300.0, 0.0);
    slow.cpu_hz = 2e8;
    fast.cpu_hz = 8e8;
    const double s = payload_bits(1024, 8);
    const std::vector<DeviceProfile> pair{slow, fast};
    const auto alloc = allocate_bandwidth(pair, net, s);
    const double brute = oracle::brute_force_two_device_deadline(slow, fast, net, s, 10000);
    const double gap = std::abs(alloc.round_deadline_s - brute) / brute;

    const bool pass = worst_budget <= 1e-6 * net.total_bandwidth_hz && worst_equal <= 1e-6 && gap <= 1e-3;
    return {pass, "max |sum b - B0| = " + fmt(worst_budget, 3) + " Hz, max latency spread " + fmt(worst_equal, 3) +
                      " rel, two-device T_d vs 1e4-point split " + fmt(gap, 3) + " rel"};
}

// ---------------------------------------------------------------- criterion 4

Verdict fitting_exactness() {
    Rng rng(404);
    std::uniform_real_distribution<double> a(0.5, 5.0), b(2.0, 50.0), c(0.5, 20.0), d(0.01, 1.0);
    std::uniform_int_distribution<int> z(0, 400);
    double worst = 0.0;
    for (int t = 0; t < 10; ++t) {
        GapFit truth;
        truth.A = a(rng);
        truth.B = b(rng);
        truth.C = c(rng);
        truth.D = d(rng);
        truth.Z = z(rng) / 1024.0;
        truth.d = 1024;
        truth.K = 6;
        ZGridSpec grid;
        for (int j = 0; j <= 600; ++j) grid.candidates.push_back(j / 1024.0);
        const auto fit =
            fit_gap_model(oracle::model_trace(truth, 4, 100), oracle::model_trace(truth, 6, 100), 1024, 6, grid);
        for (auto [got, want] : {std::pair{fit.A, truth.A}, {fit.B, truth.B}, {fit.C, truth.C}, {fit.D, truth.D}})
            worst = std::max(worst, std::abs(got - want) / std::abs(want));
        if (fit.Z != truth.Z) worst = std::max(worst, 1.0);
    }
    return {worst <= 1e-6, "worst relative parameter error over 10 draws: " + fmt(worst, 3)};
}

// ---------------------------------------------------------------- criterion 5

Verdict round_arithmetic() {
    const FitDerived h{43.01, 48.79, 0.012};
    const auto n = rounds_needed(h, 4, 6, 1024);
    bool monotone = true;
    for (int k = 1; k <= 16; ++k)
        for (int q = 2; q <= 256; ++q)
            monotone = monotone && rounds_needed(h, q + 1, k, 1024) <= rounds_needed(h, q, k, 1024) &&
                       rounds_needed(h, q, k + 1, 1024) <= rounds_needed(h, q, k, 1024);
    return {n == 107 && monotone, "N_eps(q=4, K=6) = " + std::to_string(n) +
                                      (monotone ? ", non-increasing in q and K on the grid" : ", monotonicity broken")};
}

// ---------------------------------------------------------------- criterion 6

Verdict optimizer_vs_oracle() {
    Rng rng(606);
    const auto net = oracle::experiment_network();
    const FitDerived h{43.01, 48.79, 0.012};
    std::uniform_int_distribution<int> devices(2, 8);
    double worst = 0.0;
    double worst_plain = 0.0;
    for (int t = 0; t < 20; ++t) {
        const auto profiles = oracle::random_profiles(devices(rng), rng, net);
        const double best = best_row(brute_force_sweep(profiles, net, 1024, h, 2, 64)).total_s;
        worst = std::max(worst, joint_optimize(profiles, net, 1024, h).plan.predicted_total_s / best);
        JointOptions plain;
        plain.refine = false;
        worst_plain = std::max(worst_plain, joint_optimize(profiles, net, 1024, h, plain).plan.predicted_total_s / best);
    }
    return {worst <= 1.05, "worst T / T_bruteforce = " + fmt(worst) + " (alternation without refinement: " +
                               fmt(worst_plain) + ")"};
}

// ---------------------------------------------------------------- criterion 7

struct SeedOutcome {
    bool tracking_ok = false;
    bool argmin_ok = false;
    bool bandwidth_ok = false;
};

SeedOutcome assess_seed(const RunArtifact& art, std::ostream& log) {
    SeedOutcome out;
    const auto& cfg = art.config;
    log << "  seed " << cfg.seed << ": ";
    if (art.failure) {
        log << "pipeline failed: " << *art.failure << '\n';
        return out;
    }
    const auto h = *art.derived;
    log << "Z=" << fmt(art.fit->Z) << " H1=" << fmt(h.H1) << " H2=" << fmt(h.H2) << " q*=" << art.joint->plan.q;

    out.tracking_ok = !art.tracking.empty();
    log << " | tracking/eps:";
    for (const auto& t : art.tracking) {
        log << " q" << t.q << '=' << fmt(t.mean_abs_error / cfg.epsilon, 3);
        out.tracking_ok = out.tracking_ok && t.mean_abs_error <= 0.15 * cfg.epsilon;
    }

    const auto best = simulated_argmin(art.simulated);
    if (best) {
        const int q_min = art.simulated.front().q;
        const int q_max = art.simulated.back().q;
        const int argmin = art.simulated[*best].q;
        const bool interior = argmin != q_min && argmin != q_max;
        out.argmin_ok = interior && std::abs(argmin - art.joint->plan.q) <= 1;
        log << " | simulated argmin q=" << argmin << (interior ? " (interior)" : " (edge)");
    } else {
        log << " | no simulated level reached the gap";
    }

    for (const auto& p : art.simulated) {
        if (p.q != art.joint->plan.q) continue;
        if (p.total_s && p.equal_total_s) {
            out.bandwidth_ok = *p.total_s < *p.equal_total_s;
            log << " | at q*: " << fmt(*p.total_s) << " s vs equal " << fmt(*p.equal_total_s) << " s";
        }
    }
    log << '\n';
    return out;
}

Verdict end_to_end(const std::vector<std::uint64_t>& seeds, const std::string& out_dir, std::ostream& log) {
    int tracking = 0, argmin = 0, bandwidth = 0;
    const auto started = std::chrono::steady_clock::now();
    for (auto seed : seeds) {
        ScenarioConfig cfg;
        cfg.seed = seed;
        const auto art = run_pipeline(cfg);
        if (!out_dir.empty()) emit_report(art, std::filesystem::path(out_dir) / ("seed_" + std::to_string(seed)));
        const auto o = assess_seed(art, log);
        tracking += o.tracking_ok;
        argmin += o.argmin_ok;
        bandwidth += o.bandwidth_ok;
        log.flush();
    }
    const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count() / 60.0;
    const int n = static_cast<int>(seeds.size());
    const bool a = tracking == n;
    const bool b = argmin >= 3;
    const bool c = bandwidth >= 4;
    return {a && b && c, "(a) tracking within 15% of eps at every level in " + std::to_string(tracking) + "/" +
                             std::to_string(n) + " seeds [" + (a ? "ok" : "miss") + "]; (b) q* within 1 of an interior simulated argmin in " +
                             std::to_string(argmin) + "/" + std::to_string(n) + " [" + (b ? "ok" : "miss") +
                             "]; (c) optimal beats equal bandwidth in " + std::to_string(bandwidth) + "/" +
                             std::to_string(n) + " [" + (c ? "ok" : "miss") + "]; " + fmt(minutes, 3) + " min"};
}

// ---------------------------------------------------------------- criterion 8

Verdict gradient_check() {
    Rng rng(808);
    const auto synth = generate_synthetic(1024, 64, 0.9, 0.25, rng);
    std::vector<Eigen::Index> batch(64);
    std::iota(batch.begin(), batch.end(), Eigen::Index{0});
    std::normal_distribution<double> n(0.0, 0.05);
    const double lambda = 1e-6;
    double worst = 0.0;
    for (int point = 0; point < 20; ++point) {
        Eigen::VectorXd w(1024);
        for (auto& v : w) v = n(rng);
        const auto g = local_gradient(w, synth.data, batch, lambda);
        Eigen::VectorXd fd(1024);
        for (Eigen::Index j = 0; j < 1024; ++j) {
            const double h = 1e-6;
            Eigen::VectorXd wp = w, wm = w;
            wp[j] += h;
            wm[j] -= h;
            fd[j] = (local_loss(wp, synth.data, lambda) - local_loss(wm, synth.data, lambda)) / (2 * h);
        }
        worst = std::max(worst, (g - fd).norm() / fd.norm());
    }
    return {worst <= 1e-5, "worst ||grad - fd|| / ||fd|| over 20 points: " + fmt(worst, 3)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria 1-8"};
    bool strict = false;
    std::vector<int> only;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::string out_dir;
    app.add_flag("--strict", strict, "Let the statistical criterion 7 decide the exit status too");
    app.add_option("--only", only, "Run just these criteria");
    app.add_option("--seeds", seeds, "Seeds for criterion 7")->capture_default_str();
    app.add_option("--out", out_dir, "Write a full report per criterion-7 seed here");
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<int, std::function<Verdict()>>> criteria{
        {1, quantizer_statistics},
        {2, channel_closed_form},
        {3, allocation_structure},
        {4, fitting_exactness},
        {5, round_arithmetic},
        {6, optimizer_vs_oracle},
        {7, [&] { return end_to_end(seeds, out_dir, std::cout); }},
        {8, gradient_check},
    };

    bool ok = true;
    for (const auto& [id, run] : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        const auto started = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = run();
        } catch (const std::exception& e) {
            v = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << v.detail << " [" << fmt(secs, 3)
                  << " s]" << std::endl;
        if (!v.pass && (id != 7 || strict)) ok = false;
    }
    return ok ? 0 : 1;
}
