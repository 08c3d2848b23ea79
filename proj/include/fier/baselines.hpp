#pragma once

// Page-level retrieval (Quest-style min/max summaries) and the eviction
// baselines, all producing the same Selection contract as the 1-bit path.

#include <cstdint>
#include <vector>

#include "fier/core.hpp"
#include "fier/quant1bit.hpp"

namespace fier {

// Per-page channel-wise extrema of the key cache. The last page may be
// short; summaries cover actual members only.
struct PageSummaries {
    std::size_t page_size = 16;  // L
    std::size_t tokens = 0;      // l
    std::size_t dim = 0;         // d
    Matrix max_vecs;             // ceil(l/L) x d
    Matrix min_vecs;

    std::size_t page_count() const { return max_vecs.rows(); }
    std::size_t page_begin(std::size_t p) const { return p * page_size; }
    std::size_t page_end(std::size_t p) const {
        return std::min(page_begin(p) + page_size, tokens);
    }
};

enum class QuestVariant {
    max_over_channels,  // max_i max(a_max_i, a_min_i): a single channel decides
    sum_over_channels,  // channel sum; the only form with the upper-bound property
};

inline PageSummaries build_page_summaries(const KeyCache& K, std::size_t page_size) {
    require(page_size >= 1, "build_page_summaries: page size must be >= 1");
    const std::size_t l = K.tokens(), d = K.dim();
    PageSummaries ps;
    ps.page_size = page_size;
    ps.tokens = l;
    ps.dim = d;
    const std::size_t pages = (l + page_size - 1) / page_size;
    ps.max_vecs = Matrix(pages, d);
    ps.min_vecs = Matrix(pages, d);
    for (std::size_t p = 0; p < pages; ++p) {
        const std::size_t t0 = ps.page_begin(p), t1 = ps.page_end(p);
        for (std::size_t j = 0; j < d; ++j) {
            double mn = K.data(t0, j), mx = mn;
            for (std::size_t t = t0 + 1; t < t1; ++t) {
                mn = std::min(mn, K.data(t, j));
                mx = std::max(mx, K.data(t, j));
            }
            ps.max_vecs(p, j) = mx;
            ps.min_vecs(p, j) = mn;
        }
    }
    return ps;
}

// Page importance from the summary vectors: per channel take
// max(q_j * kmax_j, q_j * kmin_j), then combine per the variant.
inline std::vector<double> quest_page_scores(const QueryVector& q, const PageSummaries& ps,
                                             QuestVariant variant) {
    require(q.size() == ps.dim, "quest_page_scores: query length does not match dim");
    std::vector<double> out(ps.page_count());
    for (std::size_t p = 0; p < ps.page_count(); ++p) {
        double acc = 0.0;
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < ps.dim; ++j) {
            const double hi = q[j] * ps.max_vecs(p, j);
            const double lo = q[j] * ps.min_vecs(p, j);
            const double term = std::max(hi, lo);
            acc += term;
            best = std::max(best, term);
        }
        out[p] = variant == QuestVariant::sum_over_channels ? acc : best;
    }
    return out;
}

namespace detail {

// Rank pages by (score desc, index asc); take whole pages while they fit,
// then fill the remainder from the next-ranked page's lowest indices.
inline Selection select_by_page_scores(const std::vector<double>& page_scores,
                                       const PageSummaries& ps, std::size_t n) {
    require(n >= 1 && n <= ps.tokens, "page selection: budget out of range");
    std::vector<std::size_t> order(page_scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (page_scores[a] != page_scores[b]) return page_scores[a] > page_scores[b];
        return a < b;
    });
    Selection sel;
    sel.budget = n;
    sel.indices.reserve(n);
    std::size_t taken = 0;
    for (std::size_t p : order) {
        const std::size_t t0 = ps.page_begin(p), t1 = ps.page_end(p);
        const std::size_t size = t1 - t0;
        if (taken + size <= n) {
            for (std::size_t t = t0; t < t1; ++t) sel.indices.push_back(t);
            taken += size;
            if (taken == n) break;
        } else {
            for (std::size_t t = t0; t < t0 + (n - taken); ++t) sel.indices.push_back(t);
            taken = n;
            break;
        }
    }
    std::sort(sel.indices.begin(), sel.indices.end());
    return sel;
}

}  // namespace detail

inline Selection quest_select(const QueryVector& q, const KeyCache& K, const PageSummaries& ps,
                              std::size_t n, QuestVariant variant) {
    require(K.tokens() == ps.tokens && K.dim() == ps.dim,
            "quest_select: summaries do not match cache");
    return detail::select_by_page_scores(quest_page_scores(q, ps, variant), ps, n);
}

// Table-style "w/quant" variant: pages scored by the mean 1-bit estimated
// score of their members, then ranked and filled like quest_select.
inline Selection quest_select_quantized(const QueryVector& q, const PackedKeys& pk,
                                        std::size_t page_size, std::size_t n) {
    require(page_size >= 1, "quest_select_quantized: page size must be >= 1");
    const ScoreVector est = approx_scores(q, pk);
    PageSummaries layout;  // geometry only; no summary vectors needed
    layout.page_size = page_size;
    layout.tokens = pk.tokens;
    layout.dim = pk.dim;
    const std::size_t pages = (pk.tokens + page_size - 1) / page_size;
    layout.max_vecs = Matrix(pages, 0);
    layout.min_vecs = Matrix(pages, 0);
    std::vector<double> page_scores(pages);
    for (std::size_t p = 0; p < pages; ++p) {
        const std::size_t t0 = layout.page_begin(p), t1 = layout.page_end(p);
        double acc = 0.0;
        for (std::size_t t = t0; t < t1; ++t) acc += est.values[t];
        page_scores[p] = acc / static_cast<double>(t1 - t0);
    }
    return detail::select_by_page_scores(page_scores, layout, n);
}

// First `sink` tokens plus the most recent n - sink; query-independent.
inline Selection streaming_llm_select(std::size_t l, std::size_t n, std::size_t sink) {
    require(sink <= n && n <= l && n >= 1, "streaming_llm_select: need sink <= n <= l");
    Selection sel;
    sel.budget = n;
    sel.indices.reserve(n);
    for (std::size_t i = 0; i < sink; ++i) sel.indices.push_back(i);
    for (std::size_t i = l - (n - sink); i < l; ++i) sel.indices.push_back(i);
    return sel;
}

// Accumulated softmax attention mass per token (H2O), plus the
// streaming-llm window knobs for symmetry.
struct EvictionState {
    std::vector<double> cumulative_scores;
    std::size_t sink_count = 4;
    std::size_t recent_count = 0;

    static EvictionState zeros(std::size_t l) {
        EvictionState st;
        st.cumulative_scores.assign(l, 0.0);
        return st;
    }
};

inline EvictionState h2o_accumulate(EvictionState state, const ScoreVector& softmax_scores) {
    require(softmax_scores.kind == ScoreKind::softmax, "h2o_accumulate: scores must be softmax");
    require(softmax_scores.size() == state.cumulative_scores.size(),
            "h2o_accumulate: length mismatch");
    for (std::size_t i = 0; i < softmax_scores.size(); ++i) {
        state.cumulative_scores[i] += softmax_scores.values[i];
    }
    return state;
}

// Last `recent` tokens plus the top n - recent by cumulative score among
// the rest; ties go to the lower index.
inline Selection h2o_select(const EvictionState& state, std::size_t n, std::size_t recent) {
    const std::size_t l = state.cumulative_scores.size();
    require(recent <= n && n >= 1 && n <= l, "h2o_select: need recent <= n <= l");
    Selection sel;
    sel.budget = n;
    const std::size_t head = l - recent;  // candidates outside the recent window
    std::vector<std::size_t> order(head);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double sa = state.cumulative_scores[a], sb = state.cumulative_scores[b];
        if (sa != sb) return sa > sb;
        return a < b;
    });
    sel.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n - recent));
    for (std::size_t i = head; i < l; ++i) sel.indices.push_back(i);
    std::sort(sel.indices.begin(), sel.indices.end());
    return sel;
}

}  // namespace fier
