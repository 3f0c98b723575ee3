#include <doctest.h>

#include <algorithm>
#include <random>
#include <vector>

#include "qfeel/trainer.hpp"

using namespace qfeel;

TEST_SUITE("trainer properties") {

TEST_CASE("analytic gradient matches central differences at random points") {
    Rng rng(2718);
    const auto synth = generate_synthetic(24, 64, 0.9, 0.25, rng);
    std::normal_distribution<double> n(0.0, 0.2);
    std::vector<Eigen::Index> batch(64);
    for (Eigen::Index i = 0; i < 64; ++i) batch[static_cast<std::size_t>(i)] = i;
    for (int point = 0; point < 20; ++point) {
        Eigen::VectorXd w(24);
        for (auto& v : w) v = n(rng);
        const double lambda = 1e-6;
        const auto g = local_gradient(w, synth.data, batch, lambda);
        const double h = 1e-6;
        for (Eigen::Index j = 0; j < 24; ++j) {
            Eigen::VectorXd wp = w, wm = w;
            wp[j] += h;
            wm[j] -= h;
            const double fd = (local_loss(wp, synth.data, lambda) - local_loss(wm, synth.data, lambda)) / (2 * h);
            REQUIRE(std::abs(g[j] - fd) <= 1e-5 * std::max(std::abs(fd), 1e-3));
        }
    }
}

TEST_CASE("loss is convex along random chords") {
    Rng rng(6);
    const auto synth = generate_synthetic(16, 300, 0.9, 0.25, rng);
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        Eigen::VectorXd a(16), b(16);
        for (auto& v : a) v = n(rng);
        for (auto& v : b) v = n(rng);
        const double t = u(rng);
        const double mid = local_loss(t * a + (1 - t) * b, synth.data, 1e-6);
        REQUIRE(mid <= t * local_loss(a, synth.data, 1e-6) + (1 - t) * local_loss(b, synth.data, 1e-6) + 1e-12);
    }
}

TEST_CASE("identical seed and configuration give bit-identical traces") {
    Rng rng(12);
    const auto synth = generate_synthetic(32, 1200, 0.9, 0.25, rng);
    const auto shards = shard_dataset(synth.data, 4, rng);
    for (int q : {2, 9}) {
        FeelConfig cfg;
        cfg.q = q;
        cfg.rounds = 15;
        cfg.batch_size = 16;
        cfg.seed = 99;
        REQUIRE(run_feel(shards, cfg).trace.loss == run_feel(shards, cfg).trace.loss);
    }
}

TEST_CASE("median rounds to a loss threshold do not grow with q") {
    // Reduced default experiment: full dimension, fewer samples, five seeds.
    Rng rng(2);
    const auto synth = generate_synthetic(1024, 6000, 0.9, 0.25, rng);
    const auto shards = shard_dataset(synth.data, 6, rng);
    const double threshold = 0.70;
    std::vector<double> medians;
    for (int q : {2, 4, 16}) {
        std::vector<double> rounds;
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            FeelConfig cfg;
            cfg.q = q;
            cfg.rounds = 400;
            cfg.seed = seed;
            cfg.stop = StopRule{0.0, threshold, 1};
            const auto res = run_feel(shards, cfg);
            const auto idx = rounds_to_gap(res.trace, 0.0, threshold);
            rounds.push_back(idx ? static_cast<double>(*idx + 1) : 1e9);
        }
        std::nth_element(rounds.begin(), rounds.begin() + 2, rounds.end());
        medians.push_back(rounds[2]);
    }
    MESSAGE("median rounds at q = 2, 4, 16: " << medians[0] << ", " << medians[1] << ", " << medians[2]);
    CHECK(medians[0] >= medians[1]);
    CHECK(medians[1] >= medians[2]);
}

}
