#pragma once

// IEEE 754 binary16 conversions. Widening is exact; narrowing rounds to
// nearest, ties to even, and saturates to +/-inf past 65520.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>

namespace fier {

inline double half_to_double(uint16_t h) {
    const uint16_t sign = h & 0x8000u;
    const uint16_t exp  = (h >> 10) & 0x1Fu;
    const uint16_t frac = h & 0x03FFu;

    double mag;
    if (exp == 0) {
        mag = static_cast<double>(frac) * 0x1.0p-24;  // subnormal or zero
    } else if (exp == 31) {
        mag = frac == 0 ? std::numeric_limits<double>::infinity()
                        : std::numeric_limits<double>::quiet_NaN();
    } else {
        mag = std::ldexp(1024.0 + frac, static_cast<int>(exp) - 25);
    }
    return sign ? -mag : mag;
}

inline uint16_t double_to_half(double x) {
    uint64_t bits;
    std::memcpy(&bits, &x, sizeof(bits));
    const uint16_t sign = static_cast<uint16_t>((bits >> 48) & 0x8000u);
    const uint64_t abs = bits & 0x7FFFFFFFFFFFFFFFull;

    if (abs > 0x7FF0000000000000ull) return sign | 0x7E00u;   // NaN
    if (abs >= 0x40EFFE0000000000ull) return sign | 0x7C00u;  // >= 65520 -> inf

    const int exp = static_cast<int>(abs >> 52) - 1023;
    if (exp < -1022) return sign;  // double subnormals are far below half range

    uint64_t sig = (abs & 0xFFFFFFFFFFFFFull) | (1ull << 52);
    // Keep 11 significand bits for normals; shift further into the
    // subnormal range when the exponent is below -14.
    int shift = 42;
    if (exp < -14) shift += -14 - exp;
    if (shift >= 64) return sign;

    uint64_t kept = sig >> shift;
    const uint64_t rem = sig & ((1ull << shift) - 1);
    const uint64_t halfway = 1ull << (shift - 1);
    if (rem > halfway || (rem == halfway && (kept & 1))) ++kept;

    uint16_t out;
    if (exp < -14) {
        out = static_cast<uint16_t>(kept);  // carry into the exponent field is exact
    } else {
        out = static_cast<uint16_t>((static_cast<uint64_t>(exp + 15) << 10) + (kept - 1024));
    }
    return sign | out;
}

// Round a double through binary16 and widen back; used where a value must
// be representable in the on-disk format.
inline double round_through_half(double x) { return half_to_double(double_to_half(x)); }

}  // namespace fier
