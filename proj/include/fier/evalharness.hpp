#pragma once

// Retrieval-quality benchmarking: recall/error/margin metrics and the sweep
// runner. Trials are independent and may run on worker threads; per-trial
// results land in preallocated slots and aggregation walks them in trial
// order, so reports do not depend on scheduling.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "fier/core.hpp"
#include "fier/retrieval.hpp"
#include "fier/workload.hpp"

namespace fier {

// Fraction of the oracle's tokens recovered by a selection of equal budget.
inline double recall(const Selection& selection, const Selection& oracle_sel) {
    require(selection.budget == oracle_sel.budget, "recall: budgets differ");
    std::size_t hit = 0, a = 0, b = 0;
    while (a < selection.indices.size() && b < oracle_sel.indices.size()) {
        if (selection.indices[a] == oracle_sel.indices[b]) { ++hit; ++a; ++b; }
        else if (selection.indices[a] < oracle_sel.indices[b]) ++a;
        else ++b;
    }
    return static_cast<double>(hit) / static_cast<double>(selection.budget);
}

namespace detail {

// Like recall but without the equal-budget precondition; normalized by the
// oracle budget. Used for policies (e.g. full) whose effective budget is l.
inline double overlap_fraction(const Selection& selection, const Selection& oracle_sel) {
    std::size_t hit = 0, a = 0, b = 0;
    while (a < selection.indices.size() && b < oracle_sel.indices.size()) {
        if (selection.indices[a] == oracle_sel.indices[b]) { ++hit; ++a; ++b; }
        else if (selection.indices[a] < oracle_sel.indices[b]) ++a;
        else ++b;
    }
    return static_cast<double>(hit) / static_cast<double>(oracle_sel.budget);
}

}  // namespace detail

struct MarginReport {
    double margin = 0.0;           // gap between k-th and (k+1)-th exact logit
    double max_err = 0.0;          // max_i |exact_i - est_i|
    double l2_loss = 0.0;          // sum of squared score errors
    double hinge_loss = 0.0;       // sum max(0, m/2 - (exact_i - est_i)), signed one-sided form
    double hinge_loss_symmetric = 0.0;  // sum max(0, |exact_i - est_i| - m/2)
};

// Margin and estimation-error diagnostics for one query. Both score vectors
// are unscaled logits; scaling by a shared positive constant would shift m
// and the errors together, leaving the m/2 criterion unchanged.
inline MarginReport margin_and_errors(const QueryVector& q, const KeyCache& K,
                                      const PackedKeys& pk, std::size_t k) {
    require(k >= 1 && k < K.tokens(), "margin_and_errors: need 1 <= k < l");
    const ScoreVector exact = exact_scores(q, K);
    const ScoreVector est = approx_scores(q, pk);

    std::vector<double> sorted = exact.values;
    std::sort(sorted.begin(), sorted.end(), std::greater<double>());

    MarginReport rep;
    rep.margin = sorted[k - 1] - sorted[k];
    const double half_m = rep.margin * 0.5;
    for (std::size_t i = 0; i < exact.size(); ++i) {
        const double err = exact.values[i] - est.values[i];
        rep.max_err = std::max(rep.max_err, std::fabs(err));
        rep.l2_loss += err * err;
        rep.hinge_loss += std::max(0.0, half_m - err);
        rep.hinge_loss_symmetric += std::max(0.0, std::fabs(err) - half_m);
    }
    return rep;
}

// One length-l 0/1 map of selected positions per policy, plus the oracle's.
struct PositionMapRow {
    std::string policy;
    std::vector<uint8_t> map;
};

inline std::vector<PositionMapRow> token_position_map(const QueryVector& q, const KeyCache& K,
                                                      const std::vector<BudgetPolicy>& policies,
                                                      std::size_t n) {
    const std::size_t l = K.tokens();
    require(n >= 1 && n <= l, "token_position_map: budget out of range");
    SideState state = build_side_state(policies, K);
    // Single-query visualization: H2O sees exactly this query's mass.
    EvictionState ev = EvictionState::zeros(l);
    ev = h2o_accumulate(std::move(ev), softmax(exact_scores(q, K)));
    state.eviction = &ev;

    std::vector<PositionMapRow> rows;
    for (BudgetPolicy p : policies) {
        p.budget = n;
        const PolicySelection sel = select_for_policy(p, q, K, state);
        PositionMapRow row;
        row.policy = p.name();
        row.map.assign(l, 0);
        for (std::size_t t : sel.selection.indices) row.map[t] = 1;
        rows.push_back(std::move(row));
    }
    PositionMapRow oracle_row;
    oracle_row.policy = "oracle";
    oracle_row.map.assign(l, 0);
    for (std::size_t t : topk_oracle(exact_scores(q, K), n).indices) oracle_row.map[t] = 1;
    rows.push_back(std::move(oracle_row));
    return rows;
}

struct TrialRecord {
    std::size_t trial = 0;
    std::string policy;
    std::string knob;
    std::size_t budget = 0;
    double recall = 0.0;
    double out_err = 0.0;
    double margin = 0.0;                     // NaN when budget == l
    double max_err = 0.0;                    // NaN for policies without estimates
    uint64_t bytes_loaded = 0;
};

struct AggregateRow {
    std::string policy;
    std::string knob;
    std::size_t budget = 0;
    double load_ratio = 0.0;
    double recall_mean = 0.0;
    double recall_std = 0.0;
    double out_err_mean = 0.0;
    double margin_mean = 0.0;   // NaN when undefined
    double maxerr_mean = 0.0;   // NaN when undefined
    std::size_t trials = 0;
    uint64_t seed = 0;
};

struct RecallReport {
    WorkloadSpec spec;
    std::vector<BudgetPolicy> policies;
    std::vector<std::size_t> budgets;
    std::size_t trials = 0;
    std::vector<TrialRecord> per_trial;   // trial-major, then policy, then budget
    std::vector<AggregateRow> aggregates; // policy-major, then budget
};

inline std::size_t resolve_thread_count(std::size_t jobs) {
    const char* env = std::getenv("FIER_THREADS");
    std::size_t want = 0;  // 0 = auto
    if (env && *env) want = static_cast<std::size_t>(std::strtoull(env, nullptr, 10));
    if (want == 0) want = std::thread::hardware_concurrency();
    if (want == 0) want = 1;
    return std::max<std::size_t>(1, std::min(want, jobs));
}

namespace detail {

struct TrialCell {
    double recall = 0.0;
    double out_err = 0.0;
    double max_err = 0.0;
    bool has_max_err = false;
    uint64_t bytes = 0;
};

struct TrialData {
    std::vector<TrialCell> cells;    // [policy * budgets + budget]
    std::vector<double> margins;     // per budget, mean over queries (NaN at budget == l)
};

inline bool policy_has_estimates(PolicyKind k) {
    return k == PolicyKind::fier || k == PolicyKind::quest || k == PolicyKind::quest_quant ||
           k == PolicyKind::oracle || k == PolicyKind::full;
}

inline TrialData run_trial(const WorkloadSpec& master, uint64_t seed,
                           const std::vector<BudgetPolicy>& policies,
                           const std::vector<std::size_t>& budgets,
                           const WorkloadInstance* fixed) {
    WorkloadInstance local;
    if (fixed == nullptr) {
        WorkloadSpec spec = master;
        spec.seed = seed;
        local = generate(spec);
    }
    const WorkloadInstance& w = fixed ? *fixed : local;
    const std::size_t l = w.keys.tokens();
    const std::size_t nq = w.queries.size();
    const double nan = std::numeric_limits<double>::quiet_NaN();

    for (std::size_t b : budgets) require(b >= 1 && b <= l, "sweep: budget out of range");

    SideState state = build_side_state(policies, w.keys);
    EvictionState ev = EvictionState::zeros(l);
    state.eviction = &ev;

    TrialData out;
    out.cells.assign(policies.size() * budgets.size(), TrialCell{});
    out.margins.assign(budgets.size(), 0.0);

    for (std::size_t qi = 0; qi < nq; ++qi) {
        const QueryVector& q = w.queries[qi];
        const ScoreVector exact = exact_scores(q, w.keys);
        // H2O accumulates each query's softmax mass before selecting for it.
        ev = h2o_accumulate(std::move(ev), softmax(exact));

        std::vector<Selection> oracle_sel(budgets.size());
        for (std::size_t bi = 0; bi < budgets.size(); ++bi) {
            oracle_sel[bi] = topk_oracle(exact, budgets[bi]);
        }
        const Selection all{[&] {
            std::vector<std::size_t> v(l);
            std::iota(v.begin(), v.end(), std::size_t{0});
            return v;
        }(), l};
        const AttentionOutput full_out = gather_attention(q, w.keys, w.values, all);

        std::vector<double> sorted = exact.values;
        std::sort(sorted.begin(), sorted.end(), std::greater<double>());
        for (std::size_t bi = 0; bi < budgets.size(); ++bi) {
            out.margins[bi] += budgets[bi] < l ? sorted[budgets[bi] - 1] - sorted[budgets[bi]] : nan;
        }

        for (std::size_t pi = 0; pi < policies.size(); ++pi) {
            for (std::size_t bi = 0; bi < budgets.size(); ++bi) {
                BudgetPolicy p = policies[pi];
                p.budget = budgets[bi];
                const RetrievalResult r = run_policy(p, q, w.keys, w.values, state);
                TrialCell& cell = out.cells[pi * budgets.size() + bi];
                cell.recall += overlap_fraction(r.selection, oracle_sel[bi]);
                cell.out_err += relative_l2_error(r.output, full_out);
                cell.bytes = r.bytes_loaded_for_estimation;
                if (policy_has_estimates(p.kind) && r.est_scores.size() == l) {
                    cell.has_max_err = true;
                    double me = 0.0;
                    for (std::size_t i = 0; i < l; ++i) {
                        me = std::max(me, std::fabs(exact.values[i] - r.est_scores.values[i]));
                    }
                    cell.max_err += me;
                }
            }
        }
    }
    const double inv = 1.0 / static_cast<double>(nq);
    for (TrialCell& c : out.cells) {
        c.recall *= inv;
        c.out_err *= inv;
        c.max_err *= inv;
    }
    for (double& m : out.margins) m *= inv;
    return out;
}

}  // namespace detail

// Full factorial (policy x budget x trial) evaluation. When `fixed` is
// given (dump-backed workload) every trial replays that instance.
inline RecallReport sweep(const WorkloadSpec& workload, const std::vector<BudgetPolicy>& policies,
                          const std::vector<std::size_t>& budgets, std::size_t trials,
                          const WorkloadInstance* fixed = nullptr) {
    require(trials >= 1, "sweep: need at least one trial");
    require(!policies.empty(), "sweep: need at least one policy");
    require(!budgets.empty(), "sweep: need at least one budget");

    RecallReport report;
    report.spec = workload;
    report.policies = policies;
    report.budgets = budgets;
    report.trials = trials;

    std::vector<detail::TrialData> slots(trials);
    const std::size_t workers = resolve_thread_count(trials);
    if (workers <= 1) {
        for (std::size_t t = 0; t < trials; ++t) {
            slots[t] = detail::run_trial(workload, trial_seed(workload.seed, t), policies,
                                         budgets, fixed);
        }
    } else {
        std::vector<std::thread> pool;
        for (std::size_t wkr = 0; wkr < workers; ++wkr) {
            pool.emplace_back([&, wkr] {
                for (std::size_t t = wkr; t < trials; t += workers) {
                    slots[t] = detail::run_trial(workload, trial_seed(workload.seed, t), policies,
                                                 budgets, fixed);
                }
            });
        }
        for (auto& th : pool) th.join();
    }

    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t t = 0; t < trials; ++t) {
        for (std::size_t pi = 0; pi < policies.size(); ++pi) {
            for (std::size_t bi = 0; bi < budgets.size(); ++bi) {
                const detail::TrialCell& c = slots[t].cells[pi * budgets.size() + bi];
                TrialRecord rec;
                rec.trial = t;
                rec.policy = policies[pi].name();
                rec.knob = policies[pi].knob();
                rec.budget = budgets[bi];
                rec.recall = c.recall;
                rec.out_err = c.out_err;
                rec.margin = slots[t].margins[bi];
                rec.max_err = c.has_max_err ? c.max_err : nan;
                rec.bytes_loaded = c.bytes;
                report.per_trial.push_back(std::move(rec));
            }
        }
    }

    for (std::size_t pi = 0; pi < policies.size(); ++pi) {
        for (std::size_t bi = 0; bi < budgets.size(); ++bi) {
            AggregateRow row;
            row.policy = policies[pi].name();
            row.knob = policies[pi].knob();
            row.budget = budgets[bi];
            row.load_ratio = policies[pi].load_ratio(workload.tokens).value();
            row.trials = trials;
            row.seed = workload.seed;

            double rsum = 0.0, esum = 0.0, msum = 0.0, xsum = 0.0;
            bool has_margin = true, has_maxerr = true;
            for (std::size_t t = 0; t < trials; ++t) {
                const detail::TrialCell& c = slots[t].cells[pi * budgets.size() + bi];
                rsum += c.recall;
                esum += c.out_err;
                if (std::isnan(slots[t].margins[bi])) has_margin = false;
                else msum += slots[t].margins[bi];
                if (!c.has_max_err) has_maxerr = false;
                else xsum += c.max_err;
            }
            const double tn = static_cast<double>(trials);
            row.recall_mean = rsum / tn;
            row.out_err_mean = esum / tn;
            row.margin_mean = has_margin ? msum / tn : nan;
            row.maxerr_mean = has_maxerr ? xsum / tn : nan;

            double var = 0.0;
            for (std::size_t t = 0; t < trials; ++t) {
                const double dev =
                    slots[t].cells[pi * budgets.size() + bi].recall - row.recall_mean;
                var += dev * dev;
            }
            row.recall_std = trials > 1 ? std::sqrt(var / (tn - 1.0)) : 0.0;
            report.aggregates.push_back(std::move(row));
        }
    }
    return report;
}

// ---- report emission -------------------------------------------------------

namespace detail {

inline std::string fmt_double(double v) {
    if (std::isnan(v)) return "";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

}  // namespace detail

inline std::string report_to_csv(const RecallReport& report) {
    std::string out =
        "policy,budget,knob,load_ratio,recall_mean,recall_std,out_err_mean,"
        "margin_mean,maxerr_mean,trials,seed\n";
    for (const AggregateRow& r : report.aggregates) {
        out += r.policy;
        out += ',';
        out += std::to_string(r.budget);
        out += ',';
        out += '"' + r.knob + '"';
        out += ',';
        out += detail::fmt_double(r.load_ratio);
        out += ',';
        out += detail::fmt_double(r.recall_mean);
        out += ',';
        out += detail::fmt_double(r.recall_std);
        out += ',';
        out += detail::fmt_double(r.out_err_mean);
        out += ',';
        out += detail::fmt_double(r.margin_mean);
        out += ',';
        out += detail::fmt_double(r.maxerr_mean);
        out += ',';
        out += std::to_string(r.trials);
        out += ',';
        out += std::to_string(r.seed);
        out += '\n';
    }
    return out;
}

inline nlohmann::json report_to_json(const RecallReport& report) {
    nlohmann::json doc;
    doc["workload"] = {
        {"generator", generator_name(report.spec.generator)},
        {"l", report.spec.tokens},
        {"d", report.spec.dim},
        {"queries", report.spec.query_count},
        {"seed", report.spec.seed},
    };
    doc["trials"] = report.trials;
    nlohmann::json rows = nlohmann::json::array();
    for (const AggregateRow& r : report.aggregates) {
        nlohmann::json row = {
            {"policy", r.policy},
            {"budget", r.budget},
            {"knob", r.knob},
            {"load_ratio", r.load_ratio},
            {"recall_mean", r.recall_mean},
            {"recall_std", r.recall_std},
            {"out_err_mean", r.out_err_mean},
            {"trials", r.trials},
            {"seed", r.seed},
        };
        row["margin_mean"] =
            std::isnan(r.margin_mean) ? nlohmann::json() : nlohmann::json(r.margin_mean);
        row["maxerr_mean"] =
            std::isnan(r.maxerr_mean) ? nlohmann::json() : nlohmann::json(r.maxerr_mean);
        rows.push_back(std::move(row));
    }
    doc["rows"] = std::move(rows);
    return doc;
}

inline std::string position_maps_to_csv(const std::vector<PositionMapRow>& rows) {
    std::string out;
    for (const PositionMapRow& row : rows) {
        out += row.policy;
        for (uint8_t bit : row.map) {
            out += ',';
            out += bit ? '1' : '0';
        }
        out += '\n';
    }
    return out;
}

}  // namespace fier
