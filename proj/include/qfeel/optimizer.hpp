#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "qfeel/channel.hpp"
#include "qfeel/fitting.hpp"

namespace qfeel {

struct BandwidthAllocation {
    std::vector<double> bandwidths_hz;
    double round_deadline_s = 0.0;
    int iterations = 0;
};

struct BisectionOptions {
    double budget_tol_rel = 1e-6;  // |sum b - B0| <= budget_tol_rel * B0
    int max_iterations = 300;
};

/// Minimum-deadline bandwidth split for a fixed payload (two-layer bisection).
///
/// The outer search runs over the round deadline T_d in
/// [max_k T_k^comp, max_k (T_k^comp + S / R_k(B0 / K))]; for each candidate every
/// device gets the bandwidth at which it finishes exactly at T_d, and the
/// deadline is moved until the bandwidths sum to B0.
BandwidthAllocation allocate_bandwidth(std::span<const DeviceProfile> profiles, const NetworkConfig& net,
                                       double payload_bits, const BisectionOptions& opts = {});

/// Bandwidth at which a device with coefficient `theta` reaches `target_rate`, searching
/// below `max_hz`. Returns +infinity if the rate is out of reach within `max_hz`.
double bandwidth_for_rate(double target_rate, double theta, double max_hz);

/// Slowest-device latency for the given payload and split.
double round_deadline(std::span<const DeviceProfile> profiles, const NetworkConfig& net, double payload_bits,
                      std::span<const double> bandwidths_hz);

/// Deadline when every device gets B0 / K.
double equal_bandwidth_deadline(std::span<const DeviceProfile> profiles, const NetworkConfig& net,
                                double payload_bits);

/// Quantization sub-problem with the bandwidth split held fixed.
struct ScaProblem {
    std::vector<double> compute_s;
    std::vector<double> rates_bps;
    std::int64_t d = 0;
    FitDerived h{};
    double q_min = 2.0;
    double q_max = 4096.0;

    int devices() const noexcept { return static_cast<int>(compute_s.size()); }
};

ScaProblem make_sca_problem(std::span<const DeviceProfile> profiles, const NetworkConfig& net,
                            std::span<const double> bandwidths_hz, std::int64_t d, const FitDerived& h,
                            double q_max = 4096.0);

/// J_k(q) = ln(T_k^comp + (1 + log2(1 + q)) d / R_k) + ln(q K H2 + H1 sqrt d).
double sca_j(const ScaProblem& p, int device, double q);
double sca_j_derivative(const ScaProblem& p, int device, double q);

/// True objective of the relaxed problem: max_k (T_k^comp + T_k^comm(q)) * (sqrt(d)/(qK) H1 + H2).
double sca_objective(const ScaProblem& p, double q);

/// Upper bound on sca_objective built at expansion point q_r:
/// max_k exp(J_k(q_r) + J_k'(q_r)(q - q_r) - ln(qK)). Equal to sca_objective at q = q_r.
double sca_surrogate(const ScaProblem& p, double q_r, double q);

struct ScaStep {
    double q_next = 0.0;
    double T_tilde = 0.0;
};

/// One successive-convex-approximation step: linearize every J_k at q_r and
/// minimize max_k exp(J^_k(q) - ln(qK)) over [q_min, q_max] by golden section.
ScaStep sca_step(double q_r, const ScaProblem& p);

struct ScaResult {
    double q = 0.0;
    double T_tilde = 0.0;
    int iterations = 0;
    std::vector<double> history;  // T~ per iterate, starting from q0
};

/// Iterates sca_step until consecutive T~ differ by at most `tol`.
/// Throws NonConvergence (carrying the last q) after `max_iterations`.
ScaResult solve_quantization(double q0, const ScaProblem& p, double tol = 1e-6, int max_iterations = 200);

struct AllocationPlan {
    int q = 2;
    std::vector<double> bandwidths_hz;
    double round_deadline_s = 0.0;
    std::int64_t predicted_rounds = 0;
    double predicted_total_s = 0.0;
};

struct JointOptions {
    double q_init = 8.0;
    double q_max = 4096.0;
    double tol_s = 1e-6;
    int max_outer_iterations = 100;
    int max_sca_iterations = 200;
    // After the alternation settles, search q directly on N(q) * T_d*(q) with the
    // bandwidth re-allocated at every trial level, and keep the better point.
    bool refine = true;
    BisectionOptions bisection{};
};

struct JointResult {
    AllocationPlan plan;
    double q_continuous = 0.0;   // level that was rounded
    double q_alternation = 0.0;  // where the alternation alone stopped
    bool refined = false;        // true when the refinement search moved q
    int outer_iterations = 0;
    bool oscillation_stopped = false;
    bool sca_capped = false;  // some inner SCA run hit its iteration cap
    std::vector<double> history;  // T(q^(r), b^(r)) with the ceiling-free round count
};

/// Alternates bandwidth allocation and SCA over q, then rounds q to the better of
/// ceil(q^) - 1 and ceil(q^) (never below 2), re-allocating bandwidth for the integer level.
///
/// With the split held fixed every device finishes at the same time at q^(r), so the
/// fixed-split objective has a kink there and the alternation can stop short of the
/// joint optimum. JointOptions::refine adds a golden-section pass over ln q on the
/// re-allocated objective before rounding.
JointResult joint_optimize(std::span<const DeviceProfile> profiles, const NetworkConfig& net, std::int64_t d,
                           const FitDerived& h, const JointOptions& opts = {});

JointResult joint_optimize(std::span<const DeviceProfile> profiles, const NetworkConfig& net, const GapFit& fit,
                           double epsilon, const JointOptions& opts = {});

/// Plan for a fixed integer q with optimal bandwidth.
AllocationPlan plan_for_level(std::span<const DeviceProfile> profiles, const NetworkConfig& net, std::int64_t d,
                              const FitDerived& h, int q, const BisectionOptions& opts = {});

struct SweepRow {
    int q = 0;
    double round_deadline_s = 0.0;
    std::int64_t rounds = 0;
    double total_s = 0.0;
};

/// Integer-q brute force: optimal bandwidth at every q in [q_lo, q_hi].
std::vector<SweepRow> brute_force_sweep(std::span<const DeviceProfile> profiles, const NetworkConfig& net,
                                        std::int64_t d, const FitDerived& h, int q_lo = 2, int q_hi = 64,
                                        const BisectionOptions& opts = {});

const SweepRow& best_row(std::span<const SweepRow> rows);

void to_json(nlohmann::json& j, const AllocationPlan& plan);
void from_json(const nlohmann::json& j, AllocationPlan& plan);
void write_sweep_csv(std::span<const SweepRow> rows, const std::filesystem::path& path);

}  // namespace qfeel
