#pragma once

// Binary file formats, little-endian throughout.
//
// Cache dump (magic "KVD1"): header {magic, version u16, l u32, d u32,
// dtype u16 (0 = f16, 1 = f32), query_count u32}, then row-major K, then V,
// then the queries. Declared sizes must match the payload byte length
// exactly; anything else is rejected with a diagnostic naming the field.
//
// Packed keys (magic "FIER"): layout described in quant1bit.hpp.
//
// Files are written atomically (temp file + rename).

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fier/core.hpp"
#include "fier/half.hpp"
#include "fier/quant1bit.hpp"

namespace fier {

// Malformed or inconsistent file contents; maps to exit code 2 in the CLI.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class DumpDtype : uint16_t { f16 = 0, f32 = 1 };

struct CacheDump {
    KeyCache keys;
    ValueCache values;
    std::vector<QueryVector> queries;
    DumpDtype dtype = DumpDtype::f16;
};

namespace detail {

inline void put_u16(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

inline void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

struct ByteReader {
    const unsigned char* p;
    std::size_t size;
    std::size_t pos = 0;

    ByteReader(const std::string& s)
        : p(reinterpret_cast<const unsigned char*>(s.data())), size(s.size()) {}

    void need(std::size_t n, const char* field) {
        if (pos + n > size) throw DataError(std::string("truncated file while reading ") + field);
    }
    uint16_t u16(const char* field) {
        need(2, field);
        uint16_t v = static_cast<uint16_t>(p[pos] | (p[pos + 1] << 8));
        pos += 2;
        return v;
    }
    uint32_t u32(const char* field) {
        need(4, field);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
};

inline void put_f32(std::string& out, float f) {
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

}  // namespace detail

inline void atomic_write_file(const std::string& path, const std::string& bytes) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open for writing: " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    fs::rename(tmp, target);
}

// ---- cache dumps ----------------------------------------------------------

inline std::string serialize_cache_dump(const CacheDump& dump) {
    const std::size_t l = dump.keys.tokens(), d = dump.keys.dim();
    require(dump.values.tokens() == l && dump.values.dim() == d,
            "serialize_cache_dump: K and V shapes differ");
    for (const auto& q : dump.queries) {
        require(q.size() == d, "serialize_cache_dump: query length does not match dim");
    }
    std::string out;
    out += "KVD1";
    detail::put_u16(out, 1);  // version
    detail::put_u32(out, static_cast<uint32_t>(l));
    detail::put_u32(out, static_cast<uint32_t>(d));
    detail::put_u16(out, static_cast<uint16_t>(dump.dtype));
    detail::put_u32(out, static_cast<uint32_t>(dump.queries.size()));

    auto put_value = [&](double v) {
        if (dump.dtype == DumpDtype::f16) {
            detail::put_u16(out, double_to_half(v));
        } else {
            detail::put_f32(out, static_cast<float>(v));
        }
    };
    for (double v : dump.keys.data.data()) put_value(v);
    for (double v : dump.values.data.data()) put_value(v);
    for (const auto& q : dump.queries) {
        for (double v : q) put_value(v);
    }
    return out;
}

inline CacheDump parse_cache_dump(const std::string& bytes) {
    detail::ByteReader r(bytes);
    r.need(4, "magic");
    if (std::string(bytes.data(), 4) != "KVD1") throw DataError("bad magic: expected KVD1");
    r.pos = 4;
    const uint16_t version = r.u16("version");
    if (version != 1) throw DataError("unsupported version: " + std::to_string(version));
    const uint32_t l = r.u32("l");
    const uint32_t d = r.u32("d");
    if (l == 0) throw DataError("invalid l: must be >= 1");
    if (d == 0) throw DataError("invalid d: must be >= 1");
    const uint16_t dtype_raw = r.u16("dtype");
    if (dtype_raw > 1) throw DataError("invalid dtype code: " + std::to_string(dtype_raw));
    const DumpDtype dtype = static_cast<DumpDtype>(dtype_raw);
    const uint32_t query_count = r.u32("query_count");

    const std::size_t value_size = dtype == DumpDtype::f16 ? 2 : 4;
    const std::size_t value_count =
        (2 * static_cast<std::size_t>(l) + query_count) * static_cast<std::size_t>(d);
    if (bytes.size() - r.pos != value_count * value_size) {
        throw DataError("payload length mismatch: header declares " +
                        std::to_string(value_count * value_size) + " bytes, found " +
                        std::to_string(bytes.size() - r.pos));
    }

    auto take_value = [&]() -> double {
        if (dtype == DumpDtype::f16) return half_to_double(r.u16("payload"));
        const uint32_t bits = r.u32("payload");
        float f;
        std::memcpy(&f, &bits, 4);
        return static_cast<double>(f);
    };

    CacheDump dump;
    dump.dtype = dtype;
    dump.keys.data = Matrix(l, d);
    dump.values.data = Matrix(l, d);
    for (double& v : dump.keys.data.data()) v = take_value();
    for (double& v : dump.values.data.data()) v = take_value();
    dump.queries.resize(query_count);
    for (auto& q : dump.queries) {
        q.resize(d);
        for (double& v : q) v = take_value();
    }
    return dump;
}

inline void write_cache_dump(const std::string& path, const CacheDump& dump) {
    atomic_write_file(path, serialize_cache_dump(dump));
}

inline CacheDump read_cache_dump(const std::string& path) {
    return parse_cache_dump(detail::read_file(path));
}

// ---- packed keys ----------------------------------------------------------

inline std::string serialize_packed_keys(const PackedKeys& pk) {
    std::string out;
    out += "FIER";
    detail::put_u16(out, 1);  // version
    detail::put_u32(out, static_cast<uint32_t>(pk.tokens));
    detail::put_u32(out, static_cast<uint32_t>(pk.dim));
    detail::put_u32(out, static_cast<uint32_t>(pk.group_size));

    // channel-major (s, z) pairs, IEEE half
    for (std::size_t j = 0; j < pk.dim; ++j) {
        for (std::size_t gi = 0; gi < pk.groups_per_channel; ++gi) {
            detail::put_u16(out, double_to_half(pk.scales[gi * pk.dim + j]));
            detail::put_u16(out, double_to_half(pk.zeros[gi * pk.dim + j]));
        }
    }
    // row-major bit plane, one row padded to a byte boundary, LSB-first
    for (std::size_t t = 0; t < pk.tokens; ++t) {
        const std::size_t row_bytes = (pk.dim + 7) / 8;
        for (std::size_t b = 0; b < row_bytes; ++b) {
            unsigned char byte = 0;
            for (std::size_t bit = 0; bit < 8; ++bit) {
                const std::size_t j = b * 8 + bit;
                if (j < pk.dim && pk.code_bit(t, j)) byte |= static_cast<unsigned char>(1u << bit);
            }
            out.push_back(static_cast<char>(byte));
        }
    }
    return out;
}

inline PackedKeys parse_packed_keys(const std::string& bytes) {
    detail::ByteReader r(bytes);
    r.need(4, "magic");
    if (std::string(bytes.data(), 4) != "FIER") throw DataError("bad magic: expected FIER");
    r.pos = 4;
    const uint16_t version = r.u16("version");
    if (version != 1) throw DataError("unsupported version: " + std::to_string(version));
    const uint32_t l = r.u32("l");
    const uint32_t d = r.u32("d");
    const uint32_t g = r.u32("g");
    if (l == 0) throw DataError("invalid l: must be >= 1");
    if (d == 0) throw DataError("invalid d: must be >= 1");
    if (g == 0) throw DataError("invalid g: must be >= 1");

    PackedKeys pk;
    pk.tokens = l;
    pk.dim = d;
    pk.group_size = g;
    pk.groups_per_channel = (l + g - 1) / g;

    const std::size_t expect = pk.payload_bytes();
    if (bytes.size() - r.pos != expect) {
        throw DataError("payload length mismatch: header declares " + std::to_string(expect) +
                        " bytes, found " + std::to_string(bytes.size() - r.pos));
    }

    pk.scales.resize(pk.groups_per_channel * d);
    pk.zeros.resize(pk.groups_per_channel * d);
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t gi = 0; gi < pk.groups_per_channel; ++gi) {
            pk.scales[gi * d + j] = half_to_double(r.u16("scale"));
            pk.zeros[gi * d + j] = half_to_double(r.u16("zero"));
        }
    }
    pk.code_words.assign(pk.tokens * pk.words_per_row(), 0);
    const std::size_t row_bytes = (d + 7) / 8;
    for (std::size_t t = 0; t < pk.tokens; ++t) {
        r.need(row_bytes, "bit plane");
        for (std::size_t b = 0; b < row_bytes; ++b) {
            const unsigned char byte = r.p[r.pos + b];
            for (std::size_t bit = 0; bit < 8; ++bit) {
                const std::size_t j = b * 8 + bit;
                if (j < d && (byte & (1u << bit))) {
                    pk.code_words[t * pk.words_per_row() + j / 64] |= uint64_t{1} << (j % 64);
                }
            }
        }
        r.pos += row_bytes;
    }
    return pk;
}

inline void write_packed_keys(const std::string& path, const PackedKeys& pk) {
    atomic_write_file(path, serialize_packed_keys(pk));
}

inline PackedKeys read_packed_keys(const std::string& path) {
    return parse_packed_keys(detail::read_file(path));
}

}  // namespace fier
