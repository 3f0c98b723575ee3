#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "qfeel/trainer.hpp"

namespace qfeel {

/// Quantization distortion factor sqrt(d) / (q K) + 1.
double distortion_factor(double q, int k, std::int64_t d);

/// Parameters of the optimality-gap model
///   F(w^(N)) - F* ~= (alpha A + D) / (N + alpha B + C),   alpha = sqrt(d)/(qK) + 1,
/// with Z the fitted estimate of F*.
struct GapFit {
    double A = 0.0;
    double B = 0.0;
    double C = 0.0;
    double D = 0.0;
    double Z = 0.0;
    int q1 = 0;
    int q2 = 0;
    std::int64_t N_tilde = 0;
    std::int64_t d = 0;
    int K = 0;
    double objective = 0.0;  // regression residual at the selected Z

    bool operator==(const GapFit&) const = default;
};

/// Round-count coefficients at a target gap epsilon:
///   H1 = A/eps - B,   H2 = (A + D)/eps - B - C.
struct FitDerived {
    double H1 = 0.0;
    double H2 = 0.0;
    double epsilon = 0.0;
};

struct XYFit {
    double X = 0.0;
    double Y = 0.0;
    double residual = 0.0;  // sum_n ((F_n - Z)(n + Y) - X)^2
};

/// Closed-form least squares for F_n - Z ~= X / (n + Y), n = 1..N~.
/// Throws InfeasibleZ when some F_n <= Z and DegenerateTrace when the normal
/// equations are singular.
XYFit fit_xy_given_z(std::span<const double> loss, double Z);

/// Non-throwing variant used by the Z search.
std::optional<XYFit> try_fit_xy_given_z(std::span<const double> loss, double Z);

/// Uniform search over Z in [lo, hi) followed by one local refinement pass.
/// `hi` defaults to the smallest loss value of both traces. When `candidates`
/// is non-empty it replaces the uniform grid.
struct ZGridSpec {
    std::size_t points = 2000;
    std::size_t refine_factor = 10;
    double lo = 0.0;
    std::optional<double> hi{};
    std::vector<double> candidates{};
};

/// Joint regression objective of both probe traces at a fixed Z, or nullopt if infeasible.
std::optional<double> gap_fit_objective(const LossTrace& trace1, const LossTrace& trace2, double Z);

/// Fits the gap model from two probe traces recorded at distinct quantization levels
/// (taken from trace.q). Throws InvalidInput on mismatched probes and FitFailed
/// when no Z is feasible or the recovered A or B is not positive.
GapFit fit_gap_model(const LossTrace& trace1, const LossTrace& trace2, std::int64_t d, int k,
                     const ZGridSpec& grid = {});

/// Recovers A, B, C, D from the per-probe regression results.
/// Negative C or D is clamped to zero and the partner coefficient refitted.
GapFit recover_parameters(const XYFit& probe1, const XYFit& probe2, double alpha1, double alpha2);

double predict_gap(const GapFit& fit, double q, double n_rounds, int k, std::int64_t d);

FitDerived derive(const GapFit& fit, double epsilon);

/// Ceiling-free round estimate sqrt(d)/(qK) H1 + H2.
double rounds_continuous(const FitDerived& h, double q, int k, std::int64_t d);

/// ceil(alpha (A/eps - B) + D/eps - C); returns 1 when the interior is not positive.
std::int64_t rounds_needed(const GapFit& fit, double q, int k, std::int64_t d, double epsilon);

/// ceil(sqrt(d)/(qK) H1 + H2); returns 1 when the interior is not positive.
std::int64_t rounds_needed(const FitDerived& h, double q, int k, std::int64_t d);

void to_json(nlohmann::json& j, const GapFit& fit);
void from_json(const nlohmann::json& j, GapFit& fit);

}  // namespace qfeel
