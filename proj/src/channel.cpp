#include "qfeel/channel.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include "qfeel/errors.hpp"

namespace qfeel {

namespace {

constexpr double euler_gamma = 0.57721566490153286060651209008240243;
constexpr int max_terms = 500;

// E1(t) = -gamma - ln t - sum_{k>=1} (-t)^k / (k k!), used for 0 < t <= 1.
double e1_series(double t) {
    const double eps = std::numeric_limits<double>::epsilon();
    double sum = 0.0;
    double term = 1.0;  // (-t)^k / k!
    for (int k = 1; k <= max_terms; ++k) {
        term *= -t / k;
        const double contrib = term / k;
        sum += contrib;
        if (std::abs(contrib) < eps * std::abs(sum)) break;
    }
    return -euler_gamma - std::log(t) - sum;
}

// e^t E1(t) by the modified Lentz evaluation of the continued fraction
//   1/(t+1-) 1/(t+3-) 4/(t+5-) 9/(t+7-) ...   valid for t > 1.
double scaled_e1_fraction(double t) {
    const double eps = std::numeric_limits<double>::epsilon();
    const double tiny = std::numeric_limits<double>::min() / eps;
    double b = t + 1.0;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= max_terms; ++i) {
        const double an = -static_cast<double>(i) * i;
        b += 2.0;
        d = 1.0 / (an * d + b);
        c = b + an / c;
        const double del = c * d;
        h *= del;
        if (std::abs(del - 1.0) <= eps) return h;
    }
    throw NonConvergence("scaled_e1: continued fraction did not converge", t);
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

void validate(const DeviceProfile& p) {
    auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
    if (!positive(p.cpu_hz) || !positive(p.cycles_per_batch) || !positive(p.tx_power_watts) ||
        !positive(p.large_scale_gain)) {
        throw InvalidInput("DeviceProfile: all fields must be finite and strictly positive");
    }
}

void validate(const NetworkConfig& net) {
    if (!(net.total_bandwidth_hz > 0.0) || !std::isfinite(net.total_bandwidth_hz))
        throw InvalidInput("NetworkConfig: total bandwidth must be positive");
    if (!(net.noise_psd_w_per_hz > 0.0) || !std::isfinite(net.noise_psd_w_per_hz))
        throw InvalidInput("NetworkConfig: noise PSD must be positive");
    if (!(net.exclusion_radius_m > 0.0) || !(net.exclusion_radius_m < net.cell_radius_m))
        throw InvalidInput("NetworkConfig: need 0 < exclusion radius < cell radius");
    if (!(net.shadowing_std_db >= 0.0)) throw InvalidInput("NetworkConfig: shadowing std must be >= 0");
}

double db_to_linear(double db) noexcept { return std::pow(10.0, db / 10.0); }
double dbm_to_watts(double dbm) noexcept { return 1e-3 * db_to_linear(dbm); }
double watts_to_dbm(double watts) noexcept { return 10.0 * std::log10(watts / 1e-3); }

double large_scale_gain(double distance_m, double shadowing_db) {
    if (!(distance_m > 0.0) || !std::isfinite(distance_m))
        throw InvalidInput("large_scale_gain: distance must be positive, got " + fmt(distance_m));
    const double path_loss_db = 128.1 + 37.6 * std::log10(distance_m / 1000.0);
    return db_to_linear(-(path_loss_db + shadowing_db));
}

double scaled_e1(double t) {
    if (!(t > 0.0)) throw OutOfDomain("scaled_e1: argument must be positive, got " + fmt(t));
    if (t <= 1.0) return std::exp(t) * e1_series(t);
    return scaled_e1_fraction(t);
}

double exp_integral_ei(double x) {
    if (!(x < 0.0)) throw OutOfDomain("exp_integral_ei: only negative arguments are supported, got " + fmt(x));
    const double t = -x;
    if (t <= 1.0) return -e1_series(t);
    return -scaled_e1_fraction(t) * std::exp(-t);
}

double rate_theta(const DeviceProfile& p, const NetworkConfig& net) {
    return net.noise_psd_w_per_hz / (p.tx_power_watts * p.large_scale_gain);
}

double ergodic_rate(double b_hz, double theta) {
    if (!(b_hz > 0.0) || !(theta > 0.0))
        throw InvalidInput("ergodic_rate: bandwidth and theta must be positive");
    return b_hz / std::numbers::ln2 * scaled_e1(b_hz * theta);
}

double invert_rate(double target_rate, double theta, RateBracket bracket) {
    if (!(target_rate > 0.0)) throw InvalidInput("invert_rate: target rate must be positive");
    double lo = bracket.lo_hz;
    double hi = bracket.hi_hz;
    if (!(lo > 0.0) || !(hi > lo)) throw InvalidInput("invert_rate: need 0 < lo < hi");

    const double r_lo = ergodic_rate(lo, theta);
    const double r_hi = ergodic_rate(hi, theta);
    if (r_lo > target_rate || r_hi < target_rate) {
        throw BracketError("invert_rate: bracket [" + fmt(lo) + ", " + fmt(hi) + "] Hz gives rates [" + fmt(r_lo) +
                           ", " + fmt(r_hi) + "] which do not straddle " + fmt(target_rate));
    }
    if (r_lo == target_rate) return lo;
    if (r_hi == target_rate) return hi;

    // Bisect in log space while the bracket spans decades, then linearly.
    for (int it = 0; it < 400; ++it) {
        const double mid = (hi > 4.0 * lo) ? std::sqrt(lo * hi) : 0.5 * (lo + hi);
        const double r = ergodic_rate(mid, theta);
        if (r == target_rate) return mid;
        if (r < target_rate)
            lo = mid;
        else
            hi = mid;
        if (hi - lo <= 1e-14 * hi) break;
    }
    return 0.5 * (lo + hi);
}

double compute_time(const DeviceProfile& p) { return p.cycles_per_batch / p.cpu_hz; }

double comm_time(double payload_bits, double rate_bps) {
    if (!(payload_bits > 0.0) || !(rate_bps > 0.0)) throw InvalidInput("comm_time: payload and rate must be positive");
    return payload_bits / rate_bps;
}

LatencyBreakdown round_latency(const DeviceProfile& p, const NetworkConfig& net, double payload_bits,
                               double bandwidth_hz) {
    return {compute_time(p), comm_time(payload_bits, ergodic_rate(bandwidth_hz, rate_theta(p, net)))};
}

}  // namespace qfeel
