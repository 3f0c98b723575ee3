#include "qfeel/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "qfeel/errors.hpp"

namespace qfeel {

QuantizedGradient quantize(std::span<const double> g, int q, Rng& rng) {
    if (g.empty()) throw InvalidInput("quantize: empty gradient");
    if (q < 1) throw InvalidInput("quantize: quantization level must be >= 1, got " + std::to_string(q));

    double sq = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!std::isfinite(g[i])) throw InvalidInput("quantize: non-finite entry at index " + std::to_string(i));
        sq += g[i] * g[i];
    }

    QuantizedGradient out;
    out.q = q;
    out.norm = std::sqrt(sq);
    out.signs.assign(g.size(), std::int8_t{1});
    out.levels.assign(g.size(), 0u);
    if (out.norm == 0.0) return out;

    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double qd = static_cast<double>(q);
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (g[i] < 0.0) out.signs[i] = -1;
        const double r = std::clamp(std::abs(g[i]) / out.norm, 0.0, 1.0);
        const double scaled = r * qd;
        // r == 1 lands in the top interval so the upper branch fires with probability 1.
        const auto l = std::clamp(static_cast<int>(std::floor(scaled)), 0, q - 1);
        const double p_up = scaled - l;
        // Draw unconditionally so the stream position does not depend on the data.
        const double u = unif(rng);
        out.levels[i] = static_cast<std::uint32_t>(u < p_up ? l + 1 : l);
    }
    return out;
}

GradientVector dequantize(const QuantizedGradient& qg) {
    GradientVector out(qg.levels.size());
    const double scale = qg.norm / static_cast<double>(qg.q);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = scale * static_cast<double>(qg.signs[i]) * static_cast<double>(qg.levels[i]);
    }
    return out;
}

double payload_bits(std::int64_t d, double q) {
    if (d < 1) throw InvalidInput("payload_bits: dimension must be >= 1");
    if (!(q >= 1.0)) throw InvalidInput("payload_bits: quantization level must be >= 1");
    return (1.0 + std::log2(q + 1.0)) * static_cast<double>(d);
}

}  // namespace qfeel
