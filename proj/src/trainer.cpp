#include "qfeel/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <regex>
#include <sstream>

#include "qfeel/errors.hpp"

namespace qfeel {

namespace {

constexpr double inv_ln2 = 1.0 / std::numbers::ln2;

// log(1 + e^z) without overflow.
double softplus(double z) noexcept { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

// Logistic function 1 / (1 + e^{-z}).
double sigmoid(double z) noexcept {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

void check_shape(const Eigen::VectorXd& w, const Dataset& shard) {
    if (w.size() != shard.dim()) throw InvalidInput("model dimension does not match dataset dimension");
}

}  // namespace

SyntheticData generate_synthetic(int d, std::int64_t n_samples, double delta1, double delta2, Rng& rng) {
    if (d < 1) throw InvalidInput("generate_synthetic: d must be >= 1");
    if (n_samples < 1) throw InvalidInput("generate_synthetic: need at least one sample");
    if (!(delta1 >= 0.0 && delta1 <= 1.0) || !(delta2 >= 0.0 && delta2 <= 1.0))
        throw InvalidInput("generate_synthetic: delta1 and delta2 must lie in [0, 1]");

    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    Eigen::VectorXd magnitude(d);
    for (int j = 0; j < d; ++j) {
        double theta = unif(rng);
        if (theta <= delta2) theta *= delta1;
        magnitude[j] = theta;
    }
    Eigen::VectorXd w(d);
    for (int j = 0; j < d; ++j) w[j] = normal(rng);

    SyntheticData out;
    out.true_model = w;
    out.data.features.resize(n_samples, d);
    out.data.labels.resize(n_samples);
    Eigen::VectorXd dense(d);
    for (std::int64_t i = 0; i < n_samples; ++i) {
        for (int j = 0; j < d; ++j) dense[j] = normal(rng);
        out.data.labels[i] = dense.dot(w) >= 0.0 ? 1.0 : -1.0;
        out.data.features.row(i) = dense.cwiseProduct(magnitude).transpose();
    }
    return out;
}

std::vector<Dataset> shard_dataset(const Dataset& data, int k, Rng& rng) {
    if (k < 1) throw InvalidInput("shard_dataset: need at least one shard");
    const Eigen::Index per_shard = data.size() / k;
    if (per_shard < 1) throw InvalidInput("shard_dataset: fewer samples than shards");

    std::vector<Eigen::Index> order(static_cast<std::size_t>(data.size()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<Dataset> shards(static_cast<std::size_t>(k));
    for (int s = 0; s < k; ++s) {
        auto& shard = shards[static_cast<std::size_t>(s)];
        shard.features.resize(per_shard, data.dim());
        shard.labels.resize(per_shard);
        for (Eigen::Index i = 0; i < per_shard; ++i) {
            const auto src = order[static_cast<std::size_t>(s * per_shard + i)];
            shard.features.row(i) = data.features.row(src);
            shard.labels[i] = data.labels[src];
        }
    }
    return shards;
}

double local_loss(const Eigen::VectorXd& w, const Dataset& shard, double lambda) {
    check_shape(w, shard);
    const Eigen::VectorXd margins = (shard.features * w).cwiseProduct(shard.labels);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < margins.size(); ++i) sum += softplus(-margins[i]);
    return inv_ln2 * sum / static_cast<double>(shard.size()) + lambda * w.squaredNorm();
}

double global_loss(const Eigen::VectorXd& w, std::span<const Dataset> shards, double lambda) {
    if (shards.empty()) throw InvalidInput("global_loss: no shards");
    double sum = 0.0;
    for (const auto& s : shards) sum += local_loss(w, s, lambda);
    return sum / static_cast<double>(shards.size());
}

Eigen::VectorXd local_gradient(const Eigen::VectorXd& w, const Dataset& shard, std::span<const Eigen::Index> batch,
                               double lambda) {
    check_shape(w, shard);
    if (batch.empty()) throw InvalidInput("local_gradient: empty minibatch");
    Eigen::VectorXd g = Eigen::VectorXd::Zero(w.size());
    for (const auto i : batch) {
        const double y = shard.labels[i];
        const double m = y * shard.features.row(i).dot(w);
        g.noalias() -= (inv_ln2 * sigmoid(-m) * y) * shard.features.row(i).transpose();
    }
    g /= static_cast<double>(batch.size());
    g += 2.0 * lambda * w;
    return g;
}

Eigen::VectorXd full_gradient(const Eigen::VectorXd& w, const Dataset& shard, double lambda) {
    check_shape(w, shard);
    const Eigen::VectorXd margins = (shard.features * w).cwiseProduct(shard.labels);
    Eigen::VectorXd coeff(margins.size());
    for (Eigen::Index i = 0; i < margins.size(); ++i) coeff[i] = -inv_ln2 * sigmoid(-margins[i]) * shard.labels[i];
    Eigen::VectorXd g = shard.features.transpose() * coeff;
    g /= static_cast<double>(shard.size());
    g += 2.0 * lambda * w;
    return g;
}

double accuracy(const Eigen::VectorXd& w, const Dataset& data) {
    check_shape(w, data);
    const Eigen::VectorXd scores = data.features * w;
    Eigen::Index hits = 0;
    for (Eigen::Index i = 0; i < scores.size(); ++i) hits += ((scores[i] >= 0.0 ? 1.0 : -1.0) == data.labels[i]);
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

FeelResult run_feel(std::span<const Dataset> shards, const FeelConfig& cfg, const std::optional<Eigen::VectorXd>& w0) {
    if (shards.empty()) throw InvalidInput("run_feel: need at least one device");
    if (cfg.quantize && cfg.q < 1) throw InvalidInput("run_feel: quantization level must be >= 1");
    if (cfg.rounds < 1) throw InvalidInput("run_feel: rounds must be >= 1");
    if (cfg.batch_size < 1) throw InvalidInput("run_feel: batch size must be >= 1");
    const auto d = shards.front().dim();
    for (const auto& s : shards) {
        if (s.dim() != d) throw InvalidInput("run_feel: shards disagree on dimension");
        if (s.size() < cfg.batch_size) throw InvalidInput("run_feel: batch size exceeds shard size");
    }

    const auto k = shards.size();
    // One independent stream per device so the order of device work never matters.
    std::vector<Rng> device_rng;
    device_rng.reserve(k);
    for (std::size_t i = 0; i < k; ++i) device_rng.emplace_back(derive_seed(cfg.seed, {0xfeedULL, i}));

    Eigen::VectorXd w = w0 ? *w0 : Eigen::VectorXd::Zero(d);
    if (w.size() != d) throw InvalidInput("run_feel: initial model has wrong dimension");

    FeelResult out;
    out.trace.q = cfg.quantize ? cfg.q : 0;
    out.trace.seed = cfg.seed;
    out.trace.initial_loss = global_loss(w, shards, cfg.lambda);
    out.trace.loss.reserve(static_cast<std::size_t>(cfg.rounds));

    std::vector<Eigen::Index> population(static_cast<std::size_t>(shards.front().size()));
    std::iota(population.begin(), population.end(), Eigen::Index{0});
    std::vector<Eigen::Index> batch(static_cast<std::size_t>(cfg.batch_size));
    Eigen::VectorXd aggregate(d);

    for (std::int64_t n = 0; n < cfg.rounds; ++n) {
        aggregate.setZero();
        for (std::size_t dev = 0; dev < k; ++dev) {
            const auto& shard = shards[dev];
            auto& rng = device_rng[dev];
            const auto population_size = static_cast<std::size_t>(shard.size());
            if (population.size() != population_size) {
                population.resize(population_size);
                std::iota(population.begin(), population.end(), Eigen::Index{0});
            }
            std::sample(population.begin(), population.end(), batch.begin(), batch.size(), rng);
            Eigen::VectorXd g = local_gradient(w, shard, batch, cfg.lambda);
            if (cfg.quantize) {
                const auto qg = quantize(std::span<const double>(g.data(), static_cast<std::size_t>(g.size())), cfg.q, rng);
                const auto deq = dequantize(qg);
                aggregate += Eigen::Map<const Eigen::VectorXd>(deq.data(), d);
            } else {
                aggregate += g;
            }
        }
        w -= (cfg.schedule(n) / static_cast<double>(k)) * aggregate;

        const double loss = global_loss(w, shards, cfg.lambda);
        if (!std::isfinite(loss) || loss > cfg.divergence_factor * out.trace.initial_loss) {
            std::ostringstream os;
            os << "run_feel: training diverged at round " << (n + 1) << " (loss " << loss << ")";
            throw Diverged(os.str());
        }
        out.trace.loss.push_back(loss);

        if (cfg.stop && n + 1 >= cfg.stop->min_rounds && loss - cfg.stop->f_star <= cfg.stop->epsilon) break;
    }
    out.model = std::move(w);
    return out;
}

std::optional<std::size_t> rounds_to_gap(std::span<const double> loss, double f_star, double epsilon) {
    for (std::size_t i = 0; i < loss.size(); ++i) {
        if (loss[i] - f_star <= epsilon) return i;
    }
    return std::nullopt;
}

std::optional<std::size_t> rounds_to_gap(const LossTrace& trace, double f_star, double epsilon) {
    return rounds_to_gap(std::span<const double>(trace.loss), f_star, epsilon);
}

ReferenceOptimum reference_optimum(std::span<const Dataset> shards, double lambda, double rel_tol,
                                   std::int64_t max_iterations) {
    if (shards.empty()) throw InvalidInput("reference_optimum: no shards");
    const auto d = shards.front().dim();
    Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
    double f = global_loss(w, shards, lambda);
    double step = 1.0;

    auto grad = [&](const Eigen::VectorXd& x) {
        Eigen::VectorXd g = Eigen::VectorXd::Zero(d);
        for (const auto& s : shards) g += full_gradient(x, s, lambda);
        return Eigen::VectorXd(g / static_cast<double>(shards.size()));
    };

    std::int64_t it = 0;
    for (; it < max_iterations; ++it) {
        const Eigen::VectorXd g = grad(w);
        const double gg = g.squaredNorm();
        if (gg == 0.0) break;
        // Armijo backtracking, starting slightly above the last accepted step.
        step *= 2.0;
        Eigen::VectorXd candidate;
        double f_new = 0.0;
        for (;;) {
            candidate = w - step * g;
            f_new = global_loss(candidate, shards, lambda);
            if (f_new <= f - 0.5 * step * gg || step < 1e-12) break;
            step *= 0.5;
        }
        const double change = std::abs(f - f_new) / std::max(std::abs(f), 1e-300);
        w = std::move(candidate);
        f = f_new;
        if (change < rel_tol) {
            ++it;
            break;
        }
    }
    return {f, std::move(w), it};
}

LossTrace mean_trace(std::span<const LossTrace> traces) {
    if (traces.empty()) throw InvalidInput("mean_trace: no traces");
    LossTrace out = traces.front();
    for (std::size_t t = 1; t < traces.size(); ++t) {
        if (traces[t].loss.size() != out.loss.size()) throw InvalidInput("mean_trace: traces differ in length");
        for (std::size_t i = 0; i < out.loss.size(); ++i) out.loss[i] += traces[t].loss[i];
        out.initial_loss += traces[t].initial_loss;
    }
    const auto n = static_cast<double>(traces.size());
    for (auto& v : out.loss) v /= n;
    out.initial_loss /= n;
    return out;
}

std::string trace_file_name(int q, std::uint64_t seed) {
    return "trace_q" + std::to_string(q) + "_seed" + std::to_string(seed) + ".csv";
}

void write_trace_csv(const LossTrace& trace, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "round,loss\n" << std::setprecision(17);
    out << 0 << ',' << trace.initial_loss << '\n';
    for (std::size_t i = 0; i < trace.loss.size(); ++i) out << (i + 1) << ',' << trace.loss[i] << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

LossTrace read_trace_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    LossTrace trace;
    std::string line;
    if (!std::getline(in, line) || line.rfind("round,loss", 0) != 0)
        throw IoError(path.string() + ": expected header 'round,loss'");
    std::size_t expected = 0;
    try {
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto comma = line.find(',');
            if (comma == std::string::npos) throw IoError(path.string() + ": malformed row '" + line + "'");
            const auto round = std::stoull(line.substr(0, comma));
            const double value = std::stod(line.substr(comma + 1));
            if (expected == 0 && round == 1) expected = 1;  // initial loss row is optional
            if (round != expected) throw IoError(path.string() + ": rounds must be consecutive");
            if (round == 0)
                trace.initial_loss = value;
            else
                trace.loss.push_back(value);
            ++expected;
        }
    } catch (const std::logic_error& e) {
        throw IoError(path.string() + ": unparsable number (" + e.what() + ")");
    }
    static const std::regex name_re(R"(trace_q(\d+)_seed(\d+)\.csv)");
    std::smatch m;
    const auto name = path.filename().string();
    if (std::regex_match(name, m, name_re)) {
        trace.q = std::stoi(m[1].str());
        trace.seed = std::stoull(m[2].str());
    }
    return trace;
}

}  // namespace qfeel
