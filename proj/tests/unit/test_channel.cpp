#include <doctest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "qfeel/channel.hpp"
#include "qfeel/errors.hpp"
#include "qfeel/quantizer.hpp"

using namespace qfeel;

TEST_SUITE("channel") {

TEST_CASE("path loss and shadowing") {
    CHECK(large_scale_gain(1000.0, 0.0) == doctest::Approx(std::pow(10.0, -12.81)).epsilon(1e-12));
    CHECK(-10.0 * std::log10(large_scale_gain(100.0, 0.0)) == doctest::Approx(90.5).epsilon(1e-12));
    const double pl_db = 128.1 + 37.6 * std::log10(0.5) + 8.0;
    CHECK(large_scale_gain(500.0, 8.0) == doctest::Approx(std::pow(10.0, -pl_db / 10.0)).epsilon(1e-12));
    CHECK_THROWS_AS(large_scale_gain(0.0, 0.0), InvalidInput);
    CHECK_THROWS_AS(large_scale_gain(-5.0, 0.0), InvalidInput);
}

TEST_CASE("dBm conversions") {
    CHECK(dbm_to_watts(-174.0) == doctest::Approx(3.981071705534972e-21).epsilon(1e-12));
    CHECK(dbm_to_watts(1.0) == doctest::Approx(1.2589254117941673e-3).epsilon(1e-12));
    CHECK(watts_to_dbm(dbm_to_watts(13.0)) == doctest::Approx(13.0).epsilon(1e-12));
}

TEST_CASE("exponential integral at negative arguments") {
    CHECK(exp_integral_ei(-1.0) == doctest::Approx(-0.2193839344).epsilon(1e-10));
    CHECK(exp_integral_ei(-10.0) == doctest::Approx(-4.15697e-6).epsilon(1e-5));
    CHECK(exp_integral_ei(-1.0) == doctest::Approx(oracle::ei_quadrature(-1.0)).epsilon(1e-10));
    CHECK(exp_integral_ei(-10.0) == doctest::Approx(oracle::ei_quadrature(-10.0)).epsilon(1e-10));
    const double x = -50.0;
    const double v = exp_integral_ei(x);
    CHECK(v < 0.0);
    CHECK(std::abs(v) <= std::exp(x) / std::abs(x));
    CHECK_THROWS_AS(exp_integral_ei(0.0), OutOfDomain);
    CHECK_THROWS_AS(exp_integral_ei(2.0), OutOfDomain);
}

TEST_CASE("ergodic rate closed form") {
    const double r = ergodic_rate(1.0, 1.0);
    CHECK(r == doctest::Approx(-std::numbers::e * exp_integral_ei(-1.0) / std::numbers::ln2).epsilon(1e-12));
    CHECK(r == doctest::Approx(0.8604).epsilon(1e-4));
    CHECK(r == doctest::Approx(oracle::rate_quadrature(1.0, 1.0)).epsilon(1e-9));
    CHECK(ergodic_rate(1.0, 0.1) > ergodic_rate(1.0, 1.0));
    CHECK(ergodic_rate(2e3, 1e-3) > ergodic_rate(1e3, 1e-3));
    CHECK(oracle::rate_quadrature(2e3, 1e-3) > oracle::rate_quadrature(1e3, 1e-3));
    CHECK_THROWS_AS(ergodic_rate(0.0, 1.0), InvalidInput);
    CHECK_THROWS_AS(ergodic_rate(1.0, -1.0), InvalidInput);
}

TEST_CASE("rate inversion") {
    const double theta = 2e-4;
    const RateBracket bracket{1e-2, 1e4};
    const double b0 = 1234.5;
    const double target = ergodic_rate(b0, theta);
    const double b = invert_rate(target, theta, bracket);
    CHECK(b == doctest::Approx(b0).epsilon(1e-9));
    CHECK(invert_rate(2.0 * target, theta, bracket) > b);
    CHECK(invert_rate(0.8604, 1.0, {1e-3, 1e3}) == doctest::Approx(1.0).epsilon(1e-4));
    CHECK_THROWS_AS(invert_rate(ergodic_rate(2e4, theta), theta, bracket), BracketError);
    CHECK_THROWS_AS(invert_rate(ergodic_rate(1e-3, theta), theta, bracket), BracketError);
}

TEST_CASE("latency components") {
    DeviceProfile p{1e8, 1e8, 1e-3, 1e-12};
    CHECK(compute_time(p) == doctest::Approx(1.0));
    p.cpu_hz = 1e9;
    CHECK(compute_time(p) == doctest::Approx(0.1));
    const double slow = compute_time(p);
    p.cpu_hz *= 2.0;
    CHECK(compute_time(p) == doctest::Approx(slow / 2.0));

    CHECK(comm_time(3072, 3072) == doctest::Approx(1.0));
    CHECK(comm_time(3072, 1024) == doctest::Approx(3.0));

    const NetworkConfig net;
    const double s = payload_bits(1024, 3);
    const double rate = ergodic_rate(500.0, rate_theta(p, net));
    CHECK(comm_time(s, rate) == doctest::Approx(3072.0 / oracle::rate_quadrature(500.0, rate_theta(p, net))).epsilon(1e-8));
    CHECK_THROWS_AS(comm_time(0.0, 1.0), InvalidInput);
    CHECK_THROWS_AS(comm_time(1.0, 0.0), InvalidInput);
}

TEST_CASE("profile and network validation") {
    CHECK_THROWS_AS(validate(DeviceProfile{0.0, 1e8, 1e-3, 1e-12}), InvalidInput);
    NetworkConfig net;
    net.exclusion_radius_m = 600.0;
    CHECK_THROWS_AS(validate(net), InvalidInput);
    CHECK_NOTHROW(validate(NetworkConfig{}));
}

}
