#include "qfeel/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "qfeel/errors.hpp"

namespace qfeel {

double distortion_factor(double q, int k, std::int64_t d) {
    if (!(q > 0.0) || k < 1 || d < 1) throw InvalidInput("distortion_factor: need q > 0, K >= 1, d >= 1");
    return std::sqrt(static_cast<double>(d)) / (q * static_cast<double>(k)) + 1.0;
}

namespace {

enum class XYStatus { ok, infeasible, degenerate };

XYStatus solve_xy(std::span<const double> loss, double Z, XYFit& out) {
    const auto n_tilde = loss.size();
    if (n_tilde < 3) return XYStatus::degenerate;
    double sum_psi = 0.0;
    double sum_chi = 0.0;
    for (std::size_t i = 0; i < n_tilde; ++i) {
        const double psi = loss[i] - Z;
        if (!(psi > 0.0)) return XYStatus::infeasible;
        sum_psi += psi;
        sum_chi += psi * static_cast<double>(i + 1);
    }
    const double nd = static_cast<double>(n_tilde);
    const double mean_psi = sum_psi / nd;
    const double mean_chi = sum_chi / nd;
    // Centred normal equations; algebraically the same closed form, without the
    // cancellation in N sum(psi^2) - (sum psi)^2.
    double s_pp = 0.0;
    double s_cp = 0.0;
    double sum_sq = 0.0;
    for (std::size_t i = 0; i < n_tilde; ++i) {
        const double psi = loss[i] - Z;
        const double chi = psi * static_cast<double>(i + 1);
        s_pp += (psi - mean_psi) * (psi - mean_psi);
        s_cp += (chi - mean_chi) * (psi - mean_psi);
        sum_sq += psi * psi;
    }
    if (!(s_pp > 1e-24 * sum_sq)) return XYStatus::degenerate;
    out.Y = -s_cp / s_pp;
    out.X = mean_chi + out.Y * mean_psi;
    double residual = 0.0;
    for (std::size_t i = 0; i < n_tilde; ++i) {
        const double r = (loss[i] - Z) * (static_cast<double>(i + 1) + out.Y) - out.X;
        residual += r * r;
    }
    out.residual = residual;
    return XYStatus::ok;
}

double min_loss(const LossTrace& t) { return *std::min_element(t.loss.begin(), t.loss.end()); }

}  // namespace

XYFit fit_xy_given_z(std::span<const double> loss, double Z) {
    if (loss.size() < 3) throw DegenerateTrace("fit_xy_given_z: need at least 3 rounds");
    XYFit out;
    switch (solve_xy(loss, Z, out)) {
        case XYStatus::ok:
            return out;
        case XYStatus::infeasible:
            throw InfeasibleZ("fit_xy_given_z: some loss value is not above Z");
        case XYStatus::degenerate:
            break;
    }
    throw DegenerateTrace("fit_xy_given_z: loss trace has no variation above Z");
}

std::optional<XYFit> try_fit_xy_given_z(std::span<const double> loss, double Z) {
    XYFit out;
    if (solve_xy(loss, Z, out) != XYStatus::ok) return std::nullopt;
    return out;
}

std::optional<double> gap_fit_objective(const LossTrace& trace1, const LossTrace& trace2, double Z) {
    const auto a = try_fit_xy_given_z(trace1.loss, Z);
    if (!a) return std::nullopt;
    const auto b = try_fit_xy_given_z(trace2.loss, Z);
    if (!b) return std::nullopt;
    return a->residual + b->residual;
}

GapFit recover_parameters(const XYFit& p1, const XYFit& p2, double alpha1, double alpha2) {
    if (alpha1 == alpha2) throw InvalidInput("recover_parameters: probes share the same distortion factor");
    GapFit fit;
    fit.A = (p1.X - p2.X) / (alpha1 - alpha2);
    fit.B = (p1.Y - p2.Y) / (alpha1 - alpha2);
    fit.C = (alpha2 * p1.Y - alpha1 * p2.Y) / (alpha2 - alpha1);
    fit.D = (alpha2 * p1.X - alpha1 * p2.X) / (alpha2 - alpha1);
    const double a2 = alpha1 * alpha1 + alpha2 * alpha2;
    if (fit.C < 0.0) {
        fit.C = 0.0;
        fit.B = (alpha1 * p1.Y + alpha2 * p2.Y) / a2;
    }
    if (fit.D < 0.0) {
        fit.D = 0.0;
        fit.A = (alpha1 * p1.X + alpha2 * p2.X) / a2;
    }
    return fit;
}

GapFit fit_gap_model(const LossTrace& trace1, const LossTrace& trace2, std::int64_t d, int k, const ZGridSpec& grid) {
    if (trace1.q == trace2.q) throw InvalidInput("fit_gap_model: probe quantization levels must differ");
    if (trace1.q < 1 || trace2.q < 1) throw InvalidInput("fit_gap_model: probe traces must be quantized");
    if (trace1.rounds() != trace2.rounds()) throw InvalidInput("fit_gap_model: probe traces differ in length");
    if (trace1.rounds() < 3) throw InvalidInput("fit_gap_model: probe traces need at least 3 rounds");

    const double hi = grid.hi.value_or(std::min(min_loss(trace1), min_loss(trace2)));

    std::vector<double> zs = grid.candidates;
    if (zs.empty()) {
        if (grid.points < 1 || !(hi > grid.lo)) throw InvalidInput("fit_gap_model: empty Z search interval");
        zs.reserve(grid.points);
        for (std::size_t j = 0; j < grid.points; ++j)
            zs.push_back(grid.lo + (hi - grid.lo) * static_cast<double>(j) / static_cast<double>(grid.points));
    }

    double best_z = std::numeric_limits<double>::quiet_NaN();
    double best_obj = std::numeric_limits<double>::infinity();
    auto consider = [&](double z) {
        const auto obj = gap_fit_objective(trace1, trace2, z);
        if (!obj) return;
        // Strict comparison, ties go to the smaller Z.
        if (*obj < best_obj || (*obj == best_obj && z < best_z)) {
            best_obj = *obj;
            best_z = z;
        }
    };
    for (double z : zs) consider(z);
    if (!std::isfinite(best_obj)) throw FitFailed("fit_gap_model: no feasible Z on the search grid");

    if (grid.refine_factor > 1 && grid.candidates.empty()) {
        const double step = (hi - grid.lo) / static_cast<double>(grid.points);
        const double fine = step / static_cast<double>(grid.refine_factor);
        const double centre = best_z;
        const auto half = static_cast<long>(grid.refine_factor);
        for (long j = -half; j <= half; ++j) {
            const double z = centre + fine * static_cast<double>(j);
            if (z < grid.lo || z >= hi) continue;
            consider(z);
        }
    }

    const auto p1 = fit_xy_given_z(trace1.loss, best_z);
    const auto p2 = fit_xy_given_z(trace2.loss, best_z);
    const double alpha1 = distortion_factor(trace1.q, k, d);
    const double alpha2 = distortion_factor(trace2.q, k, d);
    GapFit fit = recover_parameters(p1, p2, alpha1, alpha2);
    fit.Z = best_z;
    fit.q1 = trace1.q;
    fit.q2 = trace2.q;
    fit.N_tilde = static_cast<std::int64_t>(trace1.rounds());
    fit.d = d;
    fit.K = k;
    fit.objective = best_obj;
    if (!(fit.A > 0.0) || !(fit.B > 0.0)) {
        std::ostringstream os;
        os << "fit_gap_model: recovered parameters violate A > 0, B > 0 (A=" << fit.A << ", B=" << fit.B
           << ", Z=" << fit.Z << ")";
        throw FitFailed(os.str());
    }
    return fit;
}

double predict_gap(const GapFit& fit, double q, double n_rounds, int k, std::int64_t d) {
    const double alpha = distortion_factor(q, k, d);
    return (alpha * fit.A + fit.D) / (n_rounds + alpha * fit.B + fit.C);
}

FitDerived derive(const GapFit& fit, double epsilon) {
    if (!(epsilon > 0.0)) throw InvalidInput("derive: epsilon must be positive");
    FitDerived h{fit.A / epsilon - fit.B, (fit.A + fit.D) / epsilon - fit.B - fit.C, epsilon};
    if (!(h.H1 > 0.0) || !(h.H2 > 0.0)) {
        std::ostringstream os;
        os << "derive: epsilon " << epsilon << " is too large for the fitted curve (H1=" << h.H1 << ", H2=" << h.H2
           << ")";
        throw InvalidInput(os.str());
    }
    return h;
}

double rounds_continuous(const FitDerived& h, double q, int k, std::int64_t d) {
    return (distortion_factor(q, k, d) - 1.0) * h.H1 + h.H2;
}

namespace {
std::int64_t ceil_rounds(double interior) {
    if (!(interior > 0.0)) return 1;
    return static_cast<std::int64_t>(std::ceil(interior));
}
}  // namespace

std::int64_t rounds_needed(const GapFit& fit, double q, int k, std::int64_t d, double epsilon) {
    if (!(epsilon > 0.0)) throw InvalidInput("rounds_needed: epsilon must be positive");
    const double alpha = distortion_factor(q, k, d);
    return ceil_rounds(alpha * (fit.A / epsilon - fit.B) + fit.D / epsilon - fit.C);
}

std::int64_t rounds_needed(const FitDerived& h, double q, int k, std::int64_t d) {
    return ceil_rounds(rounds_continuous(h, q, k, d));
}

void to_json(nlohmann::json& j, const GapFit& fit) {
    j = nlohmann::json{{"A", fit.A},   {"B", fit.B},   {"C", fit.C},           {"D", fit.D}, {"Z", fit.Z},
                       {"q1", fit.q1}, {"q2", fit.q2}, {"N_tilde", fit.N_tilde}, {"d", fit.d}, {"K", fit.K}};
}

void from_json(const nlohmann::json& j, GapFit& fit) {
    try {
        j.at("A").get_to(fit.A);
        j.at("B").get_to(fit.B);
        j.at("C").get_to(fit.C);
        j.at("D").get_to(fit.D);
        j.at("Z").get_to(fit.Z);
        j.at("q1").get_to(fit.q1);
        j.at("q2").get_to(fit.q2);
        j.at("N_tilde").get_to(fit.N_tilde);
        j.at("d").get_to(fit.d);
        j.at("K").get_to(fit.K);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("GapFit JSON: ") + e.what());
    }
}

}  // namespace qfeel
