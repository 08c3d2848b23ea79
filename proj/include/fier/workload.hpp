#pragma once

// Deterministic synthetic workloads. Instances are a pure function of the
// spec (seeded SplitMix64 stream), so a spec replays bit-identically.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fier/core.hpp"
#include "fier/io.hpp"

namespace fier {

struct SplitMix64 {
    uint64_t state = 0;

    explicit SplitMix64(uint64_t seed = 0) : state(seed) {}

    uint64_t next() {
        state += 0x9E3779B97F4A7C15ull;
        uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // index in [0, bound)
    std::size_t below(std::size_t bound) { return static_cast<std::size_t>(next() % bound); }
};

// Marsaglia polar method over the SplitMix64 stream.
struct GaussianRng {
    SplitMix64 rng;
    bool has_spare = false;
    double spare = 0.0;

    explicit GaussianRng(uint64_t seed) : rng(seed) {}

    double next() {
        if (has_spare) {
            has_spare = false;
            return spare;
        }
        double u, v, r2;
        do {
            u = 2.0 * rng.uniform01() - 1.0;
            v = 2.0 * rng.uniform01() - 1.0;
            r2 = u * u + v * v;
        } while (r2 >= 1.0 || r2 == 0.0);
        const double f = std::sqrt(-2.0 * std::log(r2) / r2);
        spare = v * f;
        has_spare = true;
        return u * f;
    }
};

// Derive the seed for trial `index` from a master seed.
inline uint64_t trial_seed(uint64_t master, uint64_t index) {
    SplitMix64 s(master + (index + 1) * 0xD1B54A32D192ED03ull);
    return s.next();
}

enum class Generator { gaussian, planted_spikes, outlier_channels, from_dump };

inline const char* generator_name(Generator g) {
    switch (g) {
        case Generator::gaussian: return "gaussian";
        case Generator::planted_spikes: return "planted_spikes";
        case Generator::outlier_channels: return "outlier_channels";
        case Generator::from_dump: return "from_dump";
    }
    return "?";
}

struct WorkloadSpec {
    std::size_t tokens = 64;  // l
    std::size_t dim = 8;      // d
    Generator generator = Generator::gaussian;
    std::size_t query_count = 1;

    // planted_spikes: per query, spike_count keys are replaced with
    // spike_gain * q / |q|^2 at query-specific positions (disjoint across
    // queries), so each spike's exact logit is spike_gain. Positions avoid
    // the first/last exclusion windows when set.
    std::size_t spike_count = 4;
    double spike_gain = 1e3;
    std::size_t spike_exclude_prefix = 0;
    std::size_t spike_exclude_suffix = 0;

    // outlier_channels: a random subset of channels of all keys is
    // inflated by outlier_scale.
    std::size_t outlier_channel_count = 4;
    double outlier_scale = 8.0;

    uint64_t seed = 0;
    std::string dump_path;  // from_dump only
};

struct WorkloadInstance {
    KeyCache keys;
    ValueCache values;
    std::vector<QueryVector> queries;
};

namespace detail {

// Sample `count` distinct values from `pool` (consumed), Fisher-Yates style.
inline std::vector<std::size_t> sample_distinct(std::vector<std::size_t>& pool,
                                                std::size_t count, SplitMix64& rng) {
    require(count <= pool.size(), "sample_distinct: pool too small");
    std::vector<std::size_t> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t pick = rng.below(pool.size());
        out.push_back(pool[pick]);
        pool[pick] = pool.back();
        pool.pop_back();
    }
    return out;
}

}  // namespace detail

inline WorkloadInstance generate(const WorkloadSpec& spec) {
    if (spec.generator == Generator::from_dump) {
        require(!spec.dump_path.empty(), "generate: from_dump requires a dump path");
        CacheDump dump = read_cache_dump(spec.dump_path);
        if (dump.queries.empty()) throw DataError("dump has no queries");
        WorkloadInstance w;
        w.keys = std::move(dump.keys);
        w.values = std::move(dump.values);
        w.queries = std::move(dump.queries);
        return w;
    }
    require(spec.tokens >= 1 && spec.dim >= 1, "generate: degenerate dims");
    require(spec.query_count >= 1, "generate: need at least one query");

    const std::size_t l = spec.tokens, d = spec.dim;
    GaussianRng gauss(trial_seed(spec.seed, 0x6b6579));  // key/value stream
    SplitMix64 aux(trial_seed(spec.seed, 0x617578));     // positions, channels

    WorkloadInstance w;
    w.keys.data = Matrix(l, d);
    w.values.data = Matrix(l, d);
    for (double& v : w.keys.data.data()) v = gauss.next();
    for (double& v : w.values.data.data()) v = gauss.next();
    w.queries.resize(spec.query_count);
    for (auto& q : w.queries) {
        q.resize(d);
        for (double& v : q) v = gauss.next();
    }

    switch (spec.generator) {
        case Generator::gaussian:
            break;
        case Generator::outlier_channels: {
            const std::size_t count = std::min(spec.outlier_channel_count, d);
            std::vector<std::size_t> pool(d);
            std::iota(pool.begin(), pool.end(), std::size_t{0});
            for (std::size_t j : detail::sample_distinct(pool, count, aux)) {
                for (std::size_t t = 0; t < l; ++t) w.keys.data(t, j) *= spec.outlier_scale;
            }
            break;
        }
        case Generator::planted_spikes: {
            require(spec.spike_exclude_prefix + spec.spike_exclude_suffix < l,
                    "generate: exclusion windows cover the whole cache");
            std::vector<std::size_t> pool;
            for (std::size_t t = spec.spike_exclude_prefix; t < l - spec.spike_exclude_suffix; ++t) {
                pool.push_back(t);
            }
            require(spec.spike_count * spec.query_count <= pool.size(),
                    "generate: not enough positions for the requested spikes");
            for (const QueryVector& q : w.queries) {
                double norm2 = 0.0;
                for (double v : q) norm2 += v * v;
                require(norm2 > 0.0, "generate: zero query");
                const std::vector<std::size_t> spots =
                    detail::sample_distinct(pool, spec.spike_count, aux);
                for (std::size_t t : spots) {
                    for (std::size_t j = 0; j < d; ++j) {
                        w.keys.data(t, j) = spec.spike_gain * q[j] / norm2;
                    }
                }
            }
            break;
        }
        case Generator::from_dump:
            break;  // unreachable
    }
    return w;
}

}  // namespace fier
