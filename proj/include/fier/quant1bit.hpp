#pragma once

// Group-wise 1-bit key quantization and its cost accounting.
//
// Keys are grouped along the token axis within each channel: group (j, gi)
// covers tokens [gi*g, min((gi+1)*g, l)) of channel j. Each group stores a
// midpoint z = (max+min)/2 and half-range s = (max-min)/2; a token's code
// bit is +1 when its value is >= z (ties to +1), and the dequantized value
// is code*s + z. Codes are bit-packed one bit per (token, channel) entry.
//
// Serialized layout (magic "FIER"): header {magic, version u16, l u32,
// d u32, g u32}, then a channel-major table of (s, z) pairs as IEEE 754
// half little-endian, then a row-major bit plane padded to a byte boundary
// per row, LSB-first within each byte; bit 1 means code +1. Group
// parameters are narrowed to half only in this on-disk form; in memory
// they stay full doubles so quantization at g=1 is exactly lossless and
// the per-element error never exceeds the group half-range.

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "fier/core.hpp"

namespace fier {

struct GroupSpec {
    std::size_t group_size = 32;  // tokens per group within one channel
};

struct PackedKeys {
    std::size_t tokens = 0;              // l
    std::size_t dim = 0;                 // d
    std::size_t group_size = 1;          // g
    std::size_t groups_per_channel = 0;  // ceil(l / g)

    // Row-major code bits, ceil(d/64) words per row; bit 1 <=> code +1.
    std::vector<uint64_t> code_words;
    // Group parameters indexed [gi * dim + j] (token-group-major).
    std::vector<double> scales;
    std::vector<double> zeros;

    std::size_t words_per_row() const { return (dim + 63) / 64; }

    bool code_bit(std::size_t token, std::size_t channel) const {
        const uint64_t w = code_words[token * words_per_row() + channel / 64];
        return (w >> (channel % 64)) & 1u;
    }

    double scale_at(std::size_t token, std::size_t channel) const {
        return scales[(token / group_size) * dim + channel];
    }
    double zero_at(std::size_t token, std::size_t channel) const {
        return zeros[(token / group_size) * dim + channel];
    }

    // Serialized payload size: the bit plane plus the parameter table,
    // header excluded. This is what estimation has to read.
    std::size_t code_plane_bytes() const { return tokens * ((dim + 7) / 8); }
    std::size_t param_table_bytes() const { return dim * groups_per_channel * 4; }
    std::size_t payload_bytes() const { return code_plane_bytes() + param_table_bytes(); }
};

inline PackedKeys quantize(const KeyCache& K, const GroupSpec& spec) {
    require(spec.group_size >= 1, "quantize: group size must be >= 1");
    require(K.tokens() >= 1 && K.dim() >= 1, "quantize: empty key cache");
    require(K.data.all_finite(), "quantize: non-finite key entry");

    const std::size_t l = K.tokens(), d = K.dim(), g = spec.group_size;
    PackedKeys pk;
    pk.tokens = l;
    pk.dim = d;
    pk.group_size = g;
    pk.groups_per_channel = (l + g - 1) / g;
    pk.code_words.assign(l * pk.words_per_row(), 0);
    pk.scales.resize(pk.groups_per_channel * d);
    pk.zeros.resize(pk.groups_per_channel * d);

    const std::size_t wpr = pk.words_per_row();
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t gi = 0; gi < pk.groups_per_channel; ++gi) {
            const std::size_t t0 = gi * g;
            const std::size_t t1 = std::min(t0 + g, l);  // final group may be short
            double mn = K.data(t0, j), mx = mn;
            for (std::size_t t = t0 + 1; t < t1; ++t) {
                mn = std::min(mn, K.data(t, j));
                mx = std::max(mx, K.data(t, j));
            }
            const double z = (mx + mn) / 2.0;
            const double s = (mx - mn) / 2.0;
            pk.scales[gi * d + j] = s;
            pk.zeros[gi * d + j] = z;
            for (std::size_t t = t0; t < t1; ++t) {
                // s == 0 groups are constant; all bits stay +1 (canonical).
                if (s == 0.0 || K.data(t, j) >= z) {
                    pk.code_words[t * wpr + j / 64] |= uint64_t{1} << (j % 64);
                }
            }
        }
    }
    return pk;
}

inline KeyCache dequantize(const PackedKeys& pk) {
    KeyCache out;
    out.data = Matrix(pk.tokens, pk.dim);
    for (std::size_t t = 0; t < pk.tokens; ++t) {
        for (std::size_t j = 0; j < pk.dim; ++j) {
            const double s = pk.scale_at(t, j);
            const double z = pk.zero_at(t, j);
            out.data(t, j) = (pk.code_bit(t, j) ? s : -s) + z;
        }
    }
    return out;
}

// q K~^T without materializing K~: each term is q_j * (code*s + z) read
// straight from the bit plane and the group parameter table. Accumulation
// order matches exact_scores over dequantize(pk), so the two routes agree.
inline ScoreVector approx_scores(const QueryVector& q, const PackedKeys& pk) {
    require(q.size() == pk.dim, "approx_scores: query length does not match key dim");
    ScoreVector out;
    out.kind = ScoreKind::logit;
    out.values.resize(pk.tokens);
    const std::size_t wpr = pk.words_per_row();
    for (std::size_t t = 0; t < pk.tokens; ++t) {
        const std::size_t grow = (t / pk.group_size) * pk.dim;
        const uint64_t* words = pk.code_words.data() + t * wpr;
        double acc = 0.0;
        for (std::size_t j = 0; j < pk.dim; ++j) {
            const double s = pk.scales[grow + j];
            const double z = pk.zeros[grow + j];
            const bool bit = (words[j / 64] >> (j % 64)) & 1u;
            acc += q[j] * ((bit ? s : -s) + z);
        }
        out.values[t] = acc;
    }
    return out;
}

// Exact fraction, reduced; the cost accounting never rounds.
struct Rational {
    long long num = 0;
    long long den = 1;

    Rational() = default;
    Rational(long long n, long long d) : num(n), den(d) {
        require(d != 0, "Rational: zero denominator");
        if (den < 0) { num = -num; den = -den; }
        const long long g = std::gcd(num < 0 ? -num : num, den);
        if (g > 1) { num /= g; den /= g; }
    }

    double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }
    friend bool operator==(const Rational& a, const Rational& b) {
        return a.num == b.num && a.den == b.den;
    }
};

// Bytes read for importance estimation over bytes of the full 16-bit key
// cache. Bit counts are kept exact and normalized through the fraction.
struct LoadRatio {
    long long numerator_bits = 0;
    long long denominator_bits = 1;
    bool formula = true;  // false when short groups force exact byte accounting

    Rational ratio() const { return Rational(numerator_bits, denominator_bits); }
    Rational numerator_bytes() const { return Rational(numerator_bits, 8); }
    Rational denominator_bytes() const { return Rational(denominator_bits, 8); }
    double value() const { return ratio().to_double(); }
};

// Per-channel accounting: l code bits plus two 16-bit parameters per group,
// against l 16-bit key values. Equals (1 + 32/g)/16 when g divides l.
inline LoadRatio load_ratio_fier(std::size_t l, std::size_t g) {
    require(l >= 1 && g >= 1, "load_ratio_fier: l and g must be >= 1");
    LoadRatio r;
    const std::size_t groups = (l + g - 1) / g;
    r.numerator_bits = static_cast<long long>(l + groups * 2 * 16);
    r.denominator_bits = static_cast<long long>(l * 16);
    r.formula = (l % g == 0);
    return r;
}

// Quest reads two 16-bit summary vectors per page: ratio 2/L.
inline LoadRatio load_ratio_quest(std::size_t page_size) {
    require(page_size >= 1, "load_ratio_quest: page size must be >= 1");
    LoadRatio r;
    r.numerator_bits = 2 * 16;
    r.denominator_bits = static_cast<long long>(page_size) * 16;
    r.formula = true;
    return r;
}

}  // namespace fier
