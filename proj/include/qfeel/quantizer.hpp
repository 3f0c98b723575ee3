#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "qfeel/random.hpp"

namespace qfeel {

using GradientVector = std::vector<double>;

/// Wire form of a stochastically quantized gradient: the l2 norm of the
/// source vector, one sign per entry and one integer level in [0, q] per entry.
/// Entry i dequantizes to norm * signs[i] * levels[i] / q.
struct QuantizedGradient {
    double norm = 0.0;
    std::vector<std::int8_t> signs;
    std::vector<std::uint32_t> levels;
    int q = 2;

    std::size_t size() const noexcept { return levels.size(); }
    bool operator==(const QuantizedGradient&) const = default;
};

/// Unbiased stochastic quantizer with q uniform intervals on [0, 1].
///
/// For each entry the normalized magnitude r = |g_i| / ||g|| is rounded to
/// one of its two neighbouring grid points l/q and (l+1)/q, picking the upper
/// one with probability r*q - l. A zero vector quantizes to all-zero levels.
/// Throws InvalidInput for an empty vector, non-finite entries or q < 1.
QuantizedGradient quantize(std::span<const double> g, int q, Rng& rng);

GradientVector dequantize(const QuantizedGradient& qg);

/// Upload payload in bits for a d-dimensional gradient at level q:
/// one sign bit plus log2(q + 1) bits per entry. Fractional values are kept.
double payload_bits(std::int64_t d, double q);

}  // namespace qfeel
