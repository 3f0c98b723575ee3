#include "qfeel/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>

#include "qfeel/errors.hpp"
#include "qfeel/quantizer.hpp"

namespace qfeel {

namespace {

constexpr double inf = std::numeric_limits<double>::infinity();

void validate_instance(std::span<const DeviceProfile> profiles, const NetworkConfig& net) {
    if (profiles.empty()) throw InvalidInput("need at least one device");
    for (const auto& p : profiles) validate(p);
    if (!(net.total_bandwidth_hz > 0.0)) throw InvalidInput("total bandwidth must be positive");
    if (!(net.noise_psd_w_per_hz > 0.0)) throw InvalidInput("noise PSD must be positive");
}

// Argmin of a unimodal function on [lo, hi]; the endpoints are checked explicitly
// so boundary minimizers come back exact.
template <class F>
double golden_section(F&& f, double lo, double hi, double rel_tol = 1e-11) {
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo;
    double b = hi;
    double c = b - inv_phi * (b - a);
    double d = a + inv_phi * (b - a);
    double fc = f(c);
    double fd = f(d);
    for (int it = 0; it < 400 && (b - a) > rel_tol * std::max(1.0, std::abs(a)); ++it) {
        if (fc <= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    double best = 0.5 * (a + b);
    double f_best = f(best);
    for (double edge : {lo, hi}) {
        const double fe = f(edge);
        if (fe <= f_best) {
            best = edge;
            f_best = fe;
        }
    }
    return best;
}

}  // namespace

double bandwidth_for_rate(double target_rate, double theta, double max_hz) {
    if (!(target_rate > 0.0)) throw InvalidInput("bandwidth_for_rate: target rate must be positive");
    if (!std::isfinite(target_rate)) return inf;
    if (ergodic_rate(max_hz, theta) < target_rate) return inf;
    // Default lower bracket 1e-6 * max, widened downwards until it sits below the target.
    double lo = 1e-6 * max_hz;
    while (ergodic_rate(lo, theta) > target_rate) {
        lo *= 1e-3;
        if (lo < 1e-300) return lo;
    }
    return invert_rate(target_rate, theta, {lo, max_hz});
}

BandwidthAllocation allocate_bandwidth(std::span<const DeviceProfile> profiles, const NetworkConfig& net,
                                       double payload_bits, const BisectionOptions& opts) {
    validate_instance(profiles, net);
    if (!(payload_bits > 0.0)) throw InvalidInput("allocate_bandwidth: payload must be positive");

    const auto k = profiles.size();
    const double b0 = net.total_bandwidth_hz;
    const double tol = opts.budget_tol_rel * b0;
    std::vector<double> theta(k);
    std::vector<double> comp(k);
    double t_lo = 0.0;
    double t_hi = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        theta[i] = rate_theta(profiles[i], net);
        comp[i] = compute_time(profiles[i]);
        t_lo = std::max(t_lo, comp[i]);
        t_hi = std::max(t_hi, comp[i] + payload_bits / ergodic_rate(b0 / static_cast<double>(k), theta[i]));
    }
    if (!(t_hi > t_lo) || !std::isfinite(t_hi)) throw Infeasible("allocate_bandwidth: deadline bracket collapsed");

    BandwidthAllocation out;
    out.bandwidths_hz.assign(k, 0.0);
    auto split_for = [&](double t_d, std::vector<double>& b) {
        double sum = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            const double slack = t_d - comp[i];
            // Searching past B0 keeps near-budget answers finite when one device takes the whole band.
            b[i] = slack > 0.0 ? bandwidth_for_rate(payload_bits / slack, theta[i], 2.0 * b0) : inf;
            sum += b[i];
        }
        return sum;
    };

    // The upper end of the bracket is always feasible (every device fits in B0/K).
    std::vector<double> trial(k);
    double t_feasible = t_hi;
    for (int it = 1; it <= opts.max_iterations; ++it) {
        const double t_d = 0.5 * (t_lo + t_hi);
        const double sum = split_for(t_d, trial);
        out.iterations = it;
        if (std::abs(sum - b0) <= tol) {
            out.bandwidths_hz = trial;
            out.round_deadline_s = t_d;
            return out;
        }
        if (sum > b0) {
            t_lo = t_d;
        } else {
            t_hi = t_d;
            t_feasible = t_d;
        }
        if (t_hi - t_lo <= 4.0 * std::numeric_limits<double>::epsilon() * t_hi) break;
    }
    const double sum = split_for(t_feasible, trial);
    if (std::abs(sum - b0) <= tol) {
        out.bandwidths_hz = trial;
        out.round_deadline_s = t_feasible;
        return out;
    }
    std::ostringstream os;
    os << "allocate_bandwidth: bandwidth budget not met after " << out.iterations << " iterations (|sum - B0| = "
       << std::abs(sum - b0) << " Hz)";
    throw NonConvergence(os.str(), t_feasible);
}

double round_deadline(std::span<const DeviceProfile> profiles, const NetworkConfig& net, double payload_bits,
                      std::span<const double> bandwidths_hz) {
    if (bandwidths_hz.size() != profiles.size()) throw InvalidInput("round_deadline: one bandwidth per device");
    double t_d = 0.0;
    for (std::size_t i = 0; i < profiles.size(); ++i)
        t_d = std::max(t_d, round_latency(profiles[i], net, payload_bits, bandwidths_hz[i]).total());
    return t_d;
}

double equal_bandwidth_deadline(std::span<const DeviceProfile> profiles, const NetworkConfig& net,
                                double payload_bits) {
    validate_instance(profiles, net);
    const std::vector<double> equal(profiles.size(),
                                    net.total_bandwidth_hz / static_cast<double>(profiles.size()));
    return round_deadline(profiles, net, payload_bits, equal);
}

ScaProblem make_sca_problem(std::span<const DeviceProfile> profiles, const NetworkConfig& net,
                            std::span<const double> bandwidths_hz, std::int64_t d, const FitDerived& h, double q_max) {
    validate_instance(profiles, net);
    if (bandwidths_hz.size() != profiles.size()) throw InvalidInput("make_sca_problem: one bandwidth per device");
    if (d < 1) throw InvalidInput("make_sca_problem: d must be >= 1");
    ScaProblem p;
    p.d = d;
    p.h = h;
    p.q_max = q_max;
    for (std::size_t i = 0; i < profiles.size(); ++i) {
        p.compute_s.push_back(compute_time(profiles[i]));
        p.rates_bps.push_back(ergodic_rate(bandwidths_hz[i], rate_theta(profiles[i], net)));
    }
    return p;
}

double sca_j(const ScaProblem& p, int device, double q) {
    const auto i = static_cast<std::size_t>(device);
    const double k = p.devices();
    const double sqrt_d = std::sqrt(static_cast<double>(p.d));
    return std::log(p.compute_s[i] + payload_bits(p.d, q) / p.rates_bps[i]) + std::log(q * k * p.h.H2 + p.h.H1 * sqrt_d);
}

double sca_j_derivative(const ScaProblem& p, int device, double q) {
    const auto i = static_cast<std::size_t>(device);
    const double k = p.devices();
    const double sqrt_d = std::sqrt(static_cast<double>(p.d));
    const double dd = static_cast<double>(p.d);
    return k * p.h.H2 / (q * k * p.h.H2 + p.h.H1 * sqrt_d) +
           1.0 / (std::numbers::ln2 * (1.0 + q) * (p.rates_bps[i] * p.compute_s[i] / dd + 1.0 + std::log2(1.0 + q)));
}

double sca_objective(const ScaProblem& p, double q) {
    double worst = -inf;
    for (int i = 0; i < p.devices(); ++i) worst = std::max(worst, sca_j(p, i, q));
    return std::exp(worst - std::log(q * p.devices()));
}

double sca_surrogate(const ScaProblem& p, double q_r, double q) {
    if (!(q_r >= p.q_min)) throw InvalidInput("sca_surrogate: expansion point must be >= q_min");
    double worst = -inf;
    for (int i = 0; i < p.devices(); ++i)
        worst = std::max(worst, sca_j(p, i, q_r) + sca_j_derivative(p, i, q_r) * (q - q_r));
    return std::exp(worst - std::log(q * p.devices()));
}

ScaStep sca_step(double q_r, const ScaProblem& p) {
    if (!(q_r >= p.q_min)) throw InvalidInput("sca_step: expansion point must be >= q_min");
    if (p.devices() < 1) throw InvalidInput("sca_step: empty problem");
    const auto k = static_cast<std::size_t>(p.devices());
    std::vector<double> value(k);
    std::vector<double> slope(k);
    for (std::size_t i = 0; i < k; ++i) {
        value[i] = sca_j(p, static_cast<int>(i), q_r);
        slope[i] = sca_j_derivative(p, static_cast<int>(i), q_r);
    }
    const double log_k = std::log(static_cast<double>(k));
    // Log of the surrogate bound; convex in q (max of affine minus a logarithm).
    auto surrogate = [&](double q) {
        double worst = -inf;
        for (std::size_t i = 0; i < k; ++i) worst = std::max(worst, value[i] + slope[i] * (q - q_r));
        return worst - std::log(q) - log_k;
    };
    double q_next = golden_section(surrogate, p.q_min, std::max(p.q_max, q_r));
    // Never step to a point the surrogate rates worse than the expansion point.
    if (surrogate(q_r) <= surrogate(q_next)) q_next = q_r;
    return {q_next, std::exp(surrogate(q_next))};
}

ScaResult solve_quantization(double q0, const ScaProblem& p, double tol, int max_iterations) {
    if (!(q0 >= p.q_min)) throw InvalidInput("solve_quantization: initial q must be >= q_min");
    ScaResult out;
    out.q = q0;
    out.T_tilde = sca_objective(p, q0);
    out.history.push_back(out.T_tilde);
    for (int r = 1; r <= max_iterations; ++r) {
        const auto step = sca_step(out.q, p);
        const double previous = out.T_tilde;
        out.q = step.q_next;
        out.T_tilde = step.T_tilde;
        out.iterations = r;
        out.history.push_back(out.T_tilde);
        if (std::abs(out.T_tilde - previous) <= tol) return out;
    }
    throw NonConvergence("solve_quantization: SCA did not converge", out.q);
}

AllocationPlan plan_for_level(std::span<const DeviceProfile> profiles, const NetworkConfig& net, std::int64_t d,
                              const FitDerived& h, int q, const BisectionOptions& opts) {
    if (q < 2) throw InvalidInput("plan_for_level: q must be >= 2");
    const auto alloc = allocate_bandwidth(profiles, net, payload_bits(d, q), opts);
    AllocationPlan plan;
    plan.q = q;
    plan.bandwidths_hz = alloc.bandwidths_hz;
    plan.round_deadline_s = alloc.round_deadline_s;
    plan.predicted_rounds = rounds_needed(h, q, static_cast<int>(profiles.size()), d);
    plan.predicted_total_s = static_cast<double>(plan.predicted_rounds) * plan.round_deadline_s;
    return plan;
}

JointResult joint_optimize(std::span<const DeviceProfile> profiles, const NetworkConfig& net, std::int64_t d,
                           const FitDerived& h, const JointOptions& opts) {
    validate_instance(profiles, net);
    if (d < 1) throw InvalidInput("joint_optimize: d must be >= 1");
    if (!(opts.q_max >= 2.0)) throw InvalidInput("joint_optimize: q_max must be >= 2");
    const int k = static_cast<int>(profiles.size());

    JointResult out;
    double q = std::clamp(opts.q_init, 2.0, opts.q_max);
    std::vector<double> bandwidths(profiles.size(), net.total_bandwidth_hz / k);
    auto total_time = [&](double level, std::span<const double> b) {
        return rounds_continuous(h, level, k, d) * round_deadline(profiles, net, payload_bits(d, level), b);
    };

    double t_prev = total_time(q, bandwidths);
    out.history.push_back(t_prev);
    double best_t = t_prev;
    double best_q = q;
    double q_two_back = std::numeric_limits<double>::quiet_NaN();

    for (int r = 1; r <= opts.max_outer_iterations; ++r) {
        const auto alloc = allocate_bandwidth(profiles, net, payload_bits(d, q), opts.bisection);
        bandwidths = alloc.bandwidths_hz;
        const auto problem = make_sca_problem(profiles, net, bandwidths, d, h, opts.q_max);
        const double q_prev = q;
        try {
            q = solve_quantization(q, problem, opts.tol_s, opts.max_sca_iterations).q;
        } catch (const NonConvergence& e) {
            // Every SCA step is a descent step, so the last iterate is still usable.
            q = e.last_iterate();
            out.sca_capped = true;
        }
        const double t = total_time(q, bandwidths);
        out.history.push_back(t);
        out.outer_iterations = r;
        if (t < best_t) {
            best_t = t;
            best_q = q;
        }
        if (std::abs(t - t_prev) <= opts.tol_s) break;
        // Period-2 cycle in q: stop and keep the best iterate seen.
        if (std::abs(q - q_two_back) <= 1e-9 * q && std::abs(q - q_prev) > 1e-9 * q) {
            out.oscillation_stopped = true;
            q = best_q;
            break;
        }
        q_two_back = q_prev;
        t_prev = t;
    }
    out.q_alternation = q;

    if (opts.refine) {
        auto reallocated = [&](double level) {
            const auto alloc = allocate_bandwidth(profiles, net, payload_bits(d, level), opts.bisection);
            return rounds_continuous(h, level, k, d) * alloc.round_deadline_s;
        };
        const double u = golden_section([&](double x) { return reallocated(std::exp(x)); }, std::log(2.0),
                                        std::log(opts.q_max), 1e-7);
        const double q_ref = std::clamp(std::exp(u), 2.0, opts.q_max);
        if (reallocated(q_ref) < reallocated(q)) {
            q = q_ref;
            out.refined = true;
        }
    }
    out.q_continuous = q;

    const int upper = static_cast<int>(std::ceil(q - 1e-12));
    AllocationPlan best;
    bool have = false;
    for (int candidate : {upper - 1, upper}) {
        if (candidate < 2) continue;
        auto plan = plan_for_level(profiles, net, d, h, candidate, opts.bisection);
        if (!have || plan.predicted_total_s < best.predicted_total_s) {
            best = std::move(plan);
            have = true;
        }
    }
    if (!have) best = plan_for_level(profiles, net, d, h, 2, opts.bisection);
    out.plan = std::move(best);
    return out;
}

JointResult joint_optimize(std::span<const DeviceProfile> profiles, const NetworkConfig& net, const GapFit& fit,
                           double epsilon, const JointOptions& opts) {
    if (fit.K != 0 && fit.K != static_cast<int>(profiles.size()))
        throw InvalidInput("joint_optimize: fit was estimated for a different number of devices");
    return joint_optimize(profiles, net, fit.d, derive(fit, epsilon), opts);
}

std::vector<SweepRow> brute_force_sweep(std::span<const DeviceProfile> profiles, const NetworkConfig& net,
                                        std::int64_t d, const FitDerived& h, int q_lo, int q_hi,
                                        const BisectionOptions& opts) {
    if (q_lo < 2 || q_hi < q_lo) throw InvalidInput("brute_force_sweep: need 2 <= q_lo <= q_hi");
    std::vector<SweepRow> rows;
    rows.reserve(static_cast<std::size_t>(q_hi - q_lo + 1));
    for (int q = q_lo; q <= q_hi; ++q) {
        const auto plan = plan_for_level(profiles, net, d, h, q, opts);
        rows.push_back({q, plan.round_deadline_s, plan.predicted_rounds, plan.predicted_total_s});
    }
    return rows;
}

const SweepRow& best_row(std::span<const SweepRow> rows) {
    if (rows.empty()) throw InvalidInput("best_row: empty sweep");
    return *std::min_element(rows.begin(), rows.end(),
                             [](const SweepRow& a, const SweepRow& b) { return a.total_s < b.total_s; });
}

void to_json(nlohmann::json& j, const AllocationPlan& plan) {
    j = nlohmann::json{{"q", plan.q},
                       {"b_hz", plan.bandwidths_hz},
                       {"T_d_s", plan.round_deadline_s},
                       {"N_eps", plan.predicted_rounds},
                       {"T_total_s", plan.predicted_total_s}};
}

void from_json(const nlohmann::json& j, AllocationPlan& plan) {
    try {
        j.at("q").get_to(plan.q);
        j.at("b_hz").get_to(plan.bandwidths_hz);
        j.at("T_d_s").get_to(plan.round_deadline_s);
        j.at("N_eps").get_to(plan.predicted_rounds);
        j.at("T_total_s").get_to(plan.predicted_total_s);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("AllocationPlan JSON: ") + e.what());
    }
}

void write_sweep_csv(std::span<const SweepRow> rows, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "q,T_d,N_eps,T_total\n" << std::setprecision(17);
    for (const auto& r : rows) out << r.q << ',' << r.round_deadline_s << ',' << r.rounds << ',' << r.total_s << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace qfeel
