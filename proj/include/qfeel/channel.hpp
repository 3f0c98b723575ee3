#pragma once

#include <numbers>

namespace qfeel {

/// Per-device compute and radio parameters, all SI.
struct DeviceProfile {
    double cpu_hz = 0.0;            // f_k, cycles per second
    double cycles_per_batch = 0.0;  // nu, cycles to process one minibatch
    double tx_power_watts = 0.0;    // p_k
    double large_scale_gain = 0.0;  // phi_k, linear power gain (path loss and shadowing)

    bool operator==(const DeviceProfile&) const = default;
};

struct NetworkConfig {
    double total_bandwidth_hz = 10e3;         // B0
    double noise_psd_w_per_hz = 3.981071705534972e-21;  // -174 dBm/Hz
    double cell_radius_m = 500.0;
    double exclusion_radius_m = 100.0;
    double shadowing_std_db = 8.0;

    bool operator==(const NetworkConfig&) const = default;
};

struct LatencyBreakdown {
    double compute_s = 0.0;
    double comm_s = 0.0;
    double total() const noexcept { return compute_s + comm_s; }
};

void validate(const DeviceProfile& p);
void validate(const NetworkConfig& net);

double db_to_linear(double db) noexcept;
double dbm_to_watts(double dbm) noexcept;
double watts_to_dbm(double watts) noexcept;

/// Linear large-scale gain for a link of `distance_m` metres with `shadowing_db`
/// of log-normal shadowing, using the 128.1 + 37.6 log10(km) urban macro path loss.
double large_scale_gain(double distance_m, double shadowing_db);

/// Exponential integral Ei(x) for x < 0. Throws OutOfDomain otherwise.
double exp_integral_ei(double x);

/// e^t * E1(t) for t > 0, where E1(t) = -Ei(-t). Stays finite where e^t overflows.
double scaled_e1(double t);

/// Noise-to-signal coefficient theta_k = N0 / (p_k * phi_k), in 1/Hz.
double rate_theta(const DeviceProfile& p, const NetworkConfig& net);

/// Ergodic capacity in bit/s of a fast Rayleigh-fading link with bandwidth
/// `b_hz` and coefficient `theta` (see rate_theta):
///   R = -(b / ln 2) e^{b theta} Ei(-b theta).
double ergodic_rate(double b_hz, double theta);

/// Limit of ergodic_rate as bandwidth grows without bound: 1 / (theta ln 2).
inline double rate_ceiling(double theta) { return 1.0 / (theta * std::numbers::ln2); }

struct RateBracket {
    double lo_hz;
    double hi_hz;
};

/// Bandwidth achieving `target_rate` by bisection inside `bracket`.
/// Throws BracketError when R(lo) > target or R(hi) < target.
double invert_rate(double target_rate, double theta, RateBracket bracket);

double compute_time(const DeviceProfile& p);
double comm_time(double payload_bits, double rate_bps);

LatencyBreakdown round_latency(const DeviceProfile& p, const NetworkConfig& net, double payload_bits,
                               double bandwidth_hz);

}  // namespace qfeel
