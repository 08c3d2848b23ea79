#pragma once

// The retrieval engine: 1-bit estimation -> Top-k -> exact attention on the
// selected tokens, behind a policy interface shared with every baseline.
// Quantization and page summaries are hoisted into SideState so one index
// serves many queries; per-query results are unchanged by the hoisting.

#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fier/baselines.hpp"
#include "fier/core.hpp"
#include "fier/quant1bit.hpp"

namespace fier {

enum class PolicyKind { full, oracle, fier, quest, quest_quant, streaming_llm, h2o };

inline const char* policy_name(PolicyKind k) {
    switch (k) {
        case PolicyKind::full: return "full";
        case PolicyKind::oracle: return "oracle";
        case PolicyKind::fier: return "fier";
        case PolicyKind::quest: return "quest";
        case PolicyKind::quest_quant: return "quest_quant";
        case PolicyKind::streaming_llm: return "streaming_llm";
        case PolicyKind::h2o: return "h2o";
    }
    return "?";
}

struct BudgetPolicy {
    PolicyKind kind = PolicyKind::full;
    std::size_t budget = 0;     // token budget n; ignored by `full`
    std::size_t group_size = 32;   // fier, quest_quant
    std::size_t page_size = 16;    // quest, quest_quant
    QuestVariant variant = QuestVariant::sum_over_channels;
    std::size_t sink = 4;       // streaming_llm
    std::size_t recent = 0;     // h2o

    std::string name() const { return policy_name(kind); }

    // Primary knob, as printed in reports.
    std::string knob() const {
        std::ostringstream os;
        switch (kind) {
            case PolicyKind::fier: os << "g=" << group_size; break;
            case PolicyKind::quest:
                os << "L=" << page_size
                   << (variant == QuestVariant::sum_over_channels ? ",sum" : ",max");
                break;
            case PolicyKind::quest_quant: os << "L=" << page_size << ",g=" << group_size; break;
            case PolicyKind::streaming_llm: os << "sink=" << sink; break;
            case PolicyKind::h2o: os << "recent=" << recent; break;
            default: os << "-"; break;
        }
        return os.str();
    }

    // Estimation cost against a full 16-bit key cache.
    LoadRatio load_ratio(std::size_t l) const {
        switch (kind) {
            case PolicyKind::fier:
            case PolicyKind::quest_quant: return load_ratio_fier(l, group_size);
            case PolicyKind::quest: return load_ratio_quest(page_size);
            case PolicyKind::oracle: {
                LoadRatio r;
                r.numerator_bits = 16;
                r.denominator_bits = 16;
                return r;  // reads the full-precision keys
            }
            default: {
                LoadRatio r;
                r.numerator_bits = 0;
                r.denominator_bits = 16;
                return r;  // no key reads at selection time
            }
        }
    }
};

// Policy-specific precomputation shared across queries of one sequence.
// The H2O state is the only mutable element; it belongs to exactly one
// evaluation sequence.
struct SideState {
    std::map<std::size_t, PackedKeys> packed_by_group;
    std::map<std::size_t, PageSummaries> pages_by_size;
    const EvictionState* eviction = nullptr;

    const PackedKeys& packed(std::size_t g) const {
        auto it = packed_by_group.find(g);
        require(it != packed_by_group.end(), "run_policy: missing packed keys in side state");
        return it->second;
    }
    const PageSummaries& pages(std::size_t L) const {
        auto it = pages_by_size.find(L);
        require(it != pages_by_size.end(), "run_policy: missing page summaries in side state");
        return it->second;
    }
};

inline SideState build_side_state(const std::vector<BudgetPolicy>& policies, const KeyCache& K) {
    SideState st;
    for (const BudgetPolicy& p : policies) {
        if (p.kind == PolicyKind::fier || p.kind == PolicyKind::quest_quant) {
            if (!st.packed_by_group.count(p.group_size)) {
                st.packed_by_group.emplace(p.group_size, quantize(K, GroupSpec{p.group_size}));
            }
        }
        if (p.kind == PolicyKind::quest) {
            if (!st.pages_by_size.count(p.page_size)) {
                st.pages_by_size.emplace(p.page_size, build_page_summaries(K, p.page_size));
            }
        }
    }
    return st;
}

struct RetrievalResult {
    Selection selection;
    AttentionOutput output;
    ScoreVector est_scores;  // the scores the policy ranked by; empty if none
    uint64_t bytes_loaded_for_estimation = 0;
};

// Top-n tokens by 1-bit estimated scores.
inline Selection fier_select(const QueryVector& q, const PackedKeys& pk, std::size_t n) {
    require(n >= 1 && n <= pk.tokens, "fier_select: budget out of range");
    return topk_oracle(approx_scores(q, pk), n);
}

// End-to-end workflow: estimate, select, then exact attention on the subset.
inline RetrievalResult fier_attend(const QueryVector& q, const KeyCache& K, const ValueCache& V,
                                   const PackedKeys& pk, std::size_t n) {
    require(pk.tokens == K.tokens() && pk.dim == K.dim(),
            "fier_attend: packed keys do not match cache");
    RetrievalResult r;
    r.est_scores = approx_scores(q, pk);
    r.selection = topk_oracle(r.est_scores, n);
    r.output = gather_attention(q, K, V, r.selection);
    r.bytes_loaded_for_estimation = pk.payload_bytes();
    return r;
}

struct PolicySelection {
    Selection selection;
    ScoreVector est_scores;
    uint64_t bytes_loaded = 0;
};

// The selection half of run_policy; no values needed.
inline PolicySelection select_for_policy(const BudgetPolicy& policy, const QueryVector& q,
                                         const KeyCache& K, const SideState& state) {
    const std::size_t l = K.tokens();
    PolicySelection r;
    if (policy.kind == PolicyKind::full) {
        // Pass-through reference: budget does not apply.
        r.selection.budget = l;
        r.selection.indices.resize(l);
        std::iota(r.selection.indices.begin(), r.selection.indices.end(), std::size_t{0});
        r.est_scores = exact_scores(q, K);
        return r;
    }

    const std::size_t n = policy.budget;
    require(n >= 1 && n <= l, "run_policy: budget out of range for cache");
    switch (policy.kind) {
        case PolicyKind::oracle: {
            r.est_scores = exact_scores(q, K);
            r.selection = topk_oracle(r.est_scores, n);
            r.bytes_loaded = static_cast<uint64_t>(l) * K.dim() * 2;
            break;
        }
        case PolicyKind::fier: {
            const PackedKeys& pk = state.packed(policy.group_size);
            r.est_scores = approx_scores(q, pk);
            r.selection = topk_oracle(r.est_scores, n);
            r.bytes_loaded = pk.payload_bytes();
            break;
        }
        case PolicyKind::quest: {
            const PageSummaries& ps = state.pages(policy.page_size);
            const std::vector<double> page_scores = quest_page_scores(q, ps, policy.variant);
            r.selection = detail::select_by_page_scores(page_scores, ps, n);
            // Broadcast page scores over members for diagnostics.
            r.est_scores.kind = ScoreKind::logit;
            r.est_scores.values.resize(l);
            for (std::size_t p = 0; p < ps.page_count(); ++p) {
                for (std::size_t t = ps.page_begin(p); t < ps.page_end(p); ++t) {
                    r.est_scores.values[t] = page_scores[p];
                }
            }
            r.bytes_loaded = static_cast<uint64_t>(ps.page_count()) * ps.dim * 4;
            break;
        }
        case PolicyKind::quest_quant: {
            const PackedKeys& pk = state.packed(policy.group_size);
            r.selection = quest_select_quantized(q, pk, policy.page_size, n);
            r.est_scores = approx_scores(q, pk);
            r.bytes_loaded = pk.payload_bytes();
            break;
        }
        case PolicyKind::streaming_llm: {
            r.selection = streaming_llm_select(l, n, policy.sink);
            break;
        }
        case PolicyKind::h2o: {
            require(state.eviction != nullptr, "run_policy: h2o requires eviction state");
            r.selection = h2o_select(*state.eviction, n, policy.recent);
            r.est_scores.kind = ScoreKind::logit;
            r.est_scores.values = state.eviction->cumulative_scores;
            break;
        }
        default:
            require(false, "run_policy: unhandled policy");
    }
    return r;
}

inline RetrievalResult run_policy(const BudgetPolicy& policy, const QueryVector& q,
                                  const KeyCache& K, const ValueCache& V,
                                  const SideState& state) {
    PolicySelection ps = select_for_policy(policy, q, K, state);
    RetrievalResult r;
    r.selection = std::move(ps.selection);
    r.est_scores = std::move(ps.est_scores);
    r.bytes_loaded_for_estimation = ps.bytes_loaded;
    r.output = gather_attention(q, K, V, r.selection);
    return r;
}

// Parse "name" or "name:key=value,key=value". Keys: g, L, variant
// (sum|max), sink, recent. Throws std::invalid_argument on unknown names
// or keys; the message lists the valid policy names.
inline BudgetPolicy parse_policy(const std::string& text) {
    BudgetPolicy p;
    const std::size_t colon = text.find(':');
    const std::string name = text.substr(0, colon);
    if (name == "full") p.kind = PolicyKind::full;
    else if (name == "oracle") p.kind = PolicyKind::oracle;
    else if (name == "fier") p.kind = PolicyKind::fier;
    else if (name == "quest") p.kind = PolicyKind::quest;
    else if (name == "quest_quant") p.kind = PolicyKind::quest_quant;
    else if (name == "streaming_llm") p.kind = PolicyKind::streaming_llm;
    else if (name == "h2o") p.kind = PolicyKind::h2o;
    else {
        throw std::invalid_argument(
            "unknown policy '" + name +
            "'; valid names: full, oracle, fier, quest, quest_quant, streaming_llm, h2o");
    }
    if (colon == std::string::npos) return p;

    std::istringstream rest(text.substr(colon + 1));
    std::string item;
    while (std::getline(rest, item, ',')) {
        const std::size_t eq = item.find('=');
        require(eq != std::string::npos, "policy parameter must be key=value: " + item);
        const std::string key = item.substr(0, eq);
        const std::string val = item.substr(eq + 1);
        if (key == "g") p.group_size = std::stoul(val);
        else if (key == "L") p.page_size = std::stoul(val);
        else if (key == "sink") p.sink = std::stoul(val);
        else if (key == "recent") p.recent = std::stoul(val);
        else if (key == "variant") {
            if (val == "sum") p.variant = QuestVariant::sum_over_channels;
            else if (val == "max") p.variant = QuestVariant::max_over_channels;
            else throw std::invalid_argument("variant must be sum or max, got: " + val);
        } else {
            throw std::invalid_argument("unknown policy parameter '" + key + "' in: " + text);
        }
    }
    return p;
}

}  // namespace fier
