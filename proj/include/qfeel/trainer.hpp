#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qfeel/quantizer.hpp"
#include "qfeel/random.hpp"

namespace qfeel {

using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Rows of `features` are samples; `labels` holds +1 / -1.
struct Dataset {
    FeatureMatrix features;
    Eigen::VectorXd labels;

    Eigen::Index size() const noexcept { return features.rows(); }
    Eigen::Index dim() const noexcept { return features.cols(); }
};

struct SyntheticData {
    Dataset data;
    Eigen::VectorXd true_model;
};

/// Sparse-magnitude logistic data: dense Gaussian rows, a per-dimension
/// magnitude Theta_j ~ U[0,1] (shrunk by delta1 when Theta_j <= delta2) applied
/// to every row, and labels sgn(x_bar^T w) taken from the dense rows.
SyntheticData generate_synthetic(int d, std::int64_t n_samples, double delta1, double delta2, Rng& rng);

/// Seeded shuffle then a contiguous even split into `k` shards of identical size.
/// Samples beyond k * floor(n / k) are dropped.
std::vector<Dataset> shard_dataset(const Dataset& data, int k, Rng& rng);

/// Mean log2-logistic loss plus lambda * ||w||^2.
double local_loss(const Eigen::VectorXd& w, const Dataset& shard, double lambda);

/// Global objective: average of the local losses.
double global_loss(const Eigen::VectorXd& w, std::span<const Dataset> shards, double lambda);

/// Mean gradient of the log2-logistic loss over the rows listed in `batch`, plus 2 lambda w.
Eigen::VectorXd local_gradient(const Eigen::VectorXd& w, const Dataset& shard, std::span<const Eigen::Index> batch,
                               double lambda);

/// Same as local_gradient over every row of the shard.
Eigen::VectorXd full_gradient(const Eigen::VectorXd& w, const Dataset& shard, double lambda);

/// Fraction of rows whose predicted sign matches the label.
double accuracy(const Eigen::VectorXd& w, const Dataset& data);

/// eta_n = numerator / (n + offset), n counted from 0.
struct LearningRate {
    double numerator = 5.0;
    double offset = 10.0;
    double operator()(std::int64_t n) const noexcept { return numerator / (static_cast<double>(n) + offset); }
};

/// Early stop once F(w^(n)) - f_star <= epsilon and at least min_rounds have run.
struct StopRule {
    double f_star = 0.0;
    double epsilon = 0.0;
    std::int64_t min_rounds = 0;
};

struct FeelConfig {
    int q = 8;
    bool quantize = true;  // false runs plain FedSGD as a reference
    std::int64_t rounds = 100;
    LearningRate schedule{};
    std::int64_t batch_size = 64;
    double lambda = 1e-6;
    std::uint64_t seed = 0;
    std::optional<StopRule> stop{};
    double divergence_factor = 1e3;
};

struct LossTrace {
    std::vector<double> loss;  // loss[i] = F(w^(i+1)), one entry per executed round
    double initial_loss = 0.0; // F(w^(0))
    int q = 0;                 // 0 when unquantized
    std::uint64_t seed = 0;

    std::size_t rounds() const noexcept { return loss.size(); }
    bool operator==(const LossTrace&) const = default;
};

struct FeelResult {
    LossTrace trace;
    Eigen::VectorXd model;
};

/// Quantized FedSGD: every device draws a minibatch from its shard, quantizes its
/// gradient, and the server applies w <- w - eta_n / K * sum_k Q(g_k).
/// Deterministic for a fixed seed. Throws Diverged when the loss exceeds
/// divergence_factor times the initial loss.
FeelResult run_feel(std::span<const Dataset> shards, const FeelConfig& cfg,
                    const std::optional<Eigen::VectorXd>& w0 = std::nullopt);

/// Zero-based index of the first trace entry within epsilon of f_star.
std::optional<std::size_t> rounds_to_gap(const LossTrace& trace, double f_star, double epsilon);
std::optional<std::size_t> rounds_to_gap(std::span<const double> loss, double f_star, double epsilon);

struct ReferenceOptimum {
    double f_star;
    Eigen::VectorXd model;
    std::int64_t iterations;
};

/// Full-batch gradient descent with backtracking until the relative loss change
/// drops below `rel_tol`.
ReferenceOptimum reference_optimum(std::span<const Dataset> shards, double lambda, double rel_tol = 1e-10,
                                   std::int64_t max_iterations = 20000);

/// Pointwise mean of equally long traces.
LossTrace mean_trace(std::span<const LossTrace> traces);

std::string trace_file_name(int q, std::uint64_t seed);
/// CSV with header "round,loss"; round 0 holds the initial loss, round n holds F(w^(n)).
/// read_trace_csv recovers q and seed from a file named by trace_file_name.
void write_trace_csv(const LossTrace& trace, const std::filesystem::path& path);
LossTrace read_trace_csv(const std::filesystem::path& path);

}  // namespace qfeel
