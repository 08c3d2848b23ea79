#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <random>

#include "fier/evalharness.hpp"
#include "fier/io.hpp"
#include "helpers.hpp"

using namespace fier;

TEST_CASE("generation is a pure function of the workload spec") {
    WorkloadSpec spec;
    spec.generator = Generator::planted_spikes;
    spec.tokens = 96;
    spec.dim = 8;
    spec.query_count = 3;
    spec.spike_count = 4;
    spec.seed = 7;

    const WorkloadInstance a = generate(spec);
    const WorkloadInstance b = generate(spec);
    REQUIRE(a.keys.data == b.keys.data);
    REQUIRE(a.values.data == b.values.data);
    REQUIRE(a.queries == b.queries);

    spec.seed = 8;
    const WorkloadInstance c = generate(spec);
    REQUIRE_FALSE(a.keys.data == c.keys.data);
}

TEST_CASE("planted spikes own the top exact logits for their query") {
    WorkloadSpec spec;
    spec.generator = Generator::planted_spikes;
    spec.tokens = 256;
    spec.dim = 16;
    spec.query_count = 2;
    spec.spike_count = 8;
    spec.spike_gain = 1e3;
    spec.seed = 21;
    const WorkloadInstance w = generate(spec);

    for (const QueryVector& q : w.queries) {
        const ScoreVector exact = exact_scores(q, w.keys);
        const Selection top = topk_oracle(exact, 8);
        for (std::size_t t : top.indices) {
            REQUIRE(exact.values[t] == Catch::Approx(1e3));  // spikes by construction
        }
        // oracle recall of the spikes is 1 by definition of the oracle
        const Selection again = topk_oracle(exact, 8);
        REQUIRE(recall(again, top) == 1.0);
    }
}

TEST_CASE("spike positions respect exclusion windows") {
    WorkloadSpec spec;
    spec.generator = Generator::planted_spikes;
    spec.tokens = 128;
    spec.dim = 8;
    spec.query_count = 2;
    spec.spike_count = 8;
    spec.spike_gain = 1e3;
    spec.spike_exclude_prefix = 10;
    spec.spike_exclude_suffix = 20;
    spec.seed = 33;
    const WorkloadInstance w = generate(spec);
    for (const QueryVector& q : w.queries) {
        const ScoreVector exact = exact_scores(q, w.keys);
        for (std::size_t t : topk_oracle(exact, 8).indices) {
            REQUIRE(t >= 10);
            REQUIRE(t < 128 - 20);
        }
    }
}

TEST_CASE("outlier channels are inflated consistently") {
    WorkloadSpec base;
    base.generator = Generator::gaussian;
    base.tokens = 64;
    base.dim = 8;
    base.seed = 5;
    WorkloadSpec out = base;
    out.generator = Generator::outlier_channels;
    out.outlier_channel_count = 2;
    out.outlier_scale = 8.0;

    const WorkloadInstance g = generate(base);
    const WorkloadInstance o = generate(out);
    std::size_t inflated = 0;
    for (std::size_t j = 0; j < 8; ++j) {
        bool all_scaled = true, all_same = true;
        for (std::size_t t = 0; t < 64; ++t) {
            if (o.keys.data(t, j) != 8.0 * g.keys.data(t, j)) all_scaled = false;
            if (o.keys.data(t, j) != g.keys.data(t, j)) all_same = false;
        }
        REQUIRE((all_scaled || all_same));
        if (all_scaled && !all_same) ++inflated;
    }
    REQUIRE(inflated == 2);
}

TEST_CASE("recall counts the overlap fraction") {
    auto sel = [](std::initializer_list<std::size_t> ids, std::size_t budget) {
        Selection s;
        s.indices = ids;
        s.budget = budget;
        return s;
    };
    REQUIRE(recall(sel({1, 2, 3, 4}, 4), sel({1, 2, 3, 4}, 4)) == 1.0);
    REQUIRE(recall(sel({0, 1}, 2), sel({2, 3}, 2)) == 0.0);
    REQUIRE(recall(sel({1, 2, 3, 4}, 4), sel({3, 4, 5, 6}, 4)) == 0.5);
    REQUIRE_THROWS_AS(recall(sel({1}, 1), sel({1, 2}, 2)), std::invalid_argument);
}

TEST_CASE("margin_and_errors hand-checked values") {
    // exact [5,3,1] via q=[1], keys as single channels; k=1 -> m = 5-3
    KeyCache K;
    K.data = Matrix(3, 1);
    K.data(0, 0) = 5;
    K.data(1, 0) = 3;
    K.data(2, 0) = 1;
    const PackedKeys exact_pk = quantize(K, GroupSpec{1});
    const MarginReport m1 = margin_and_errors({1}, K, exact_pk, 1);
    REQUIRE(m1.margin == 2.0);
    REQUIRE(m1.max_err == 0.0);
    REQUIRE(m1.l2_loss == 0.0);
    REQUIRE(m1.hinge_loss_symmetric == 0.0);

    REQUIRE_THROWS_AS(margin_and_errors({1}, K, exact_pk, 3), std::invalid_argument);
}

TEST_CASE("margin_and_errors with a perturbed estimate") {
    // exact [4,1], approx [3.5,1.2]: m=3, max_err=0.5, l2=0.29,
    // symmetric hinge=0, one-sided hinge = (1.5-0.5) + (1.5+0.2) = 2.7
    KeyCache K;
    K.data = Matrix(2, 1);
    K.data(0, 0) = 4;
    K.data(1, 0) = 1;
    PackedKeys pk = quantize(K, GroupSpec{1});
    pk.zeros[0] = 3.5;  // forge the estimate: g=1 dequant returns zeros
    pk.zeros[1] = 1.2;
    const MarginReport rep = margin_and_errors({1}, K, pk, 1);
    REQUIRE(rep.margin == 3.0);
    REQUIRE(rep.max_err == 0.5);
    REQUIRE(rep.l2_loss == Catch::Approx(0.29));
    REQUIRE(rep.hinge_loss_symmetric == 0.0);
    REQUIRE(rep.hinge_loss == Catch::Approx(2.7));
}

TEST_CASE("sweep with the full policy recalls everything") {
    WorkloadSpec spec;
    spec.tokens = 64;
    spec.dim = 8;
    spec.seed = 1;
    const std::vector<BudgetPolicy> policies = {parse_policy("full")};
    const RecallReport rep = sweep(spec, policies, {8, 16}, 3);
    REQUIRE(rep.aggregates.size() == 2);
    for (const AggregateRow& row : rep.aggregates) {
        REQUIRE(row.recall_mean == 1.0);
        REQUIRE(row.recall_std == 0.0);
        REQUIRE(row.out_err_mean == 0.0);
    }
}

TEST_CASE("sweep aggregates replay bit-identically under a fixed seed") {
    WorkloadSpec spec;
    spec.generator = Generator::outlier_channels;
    spec.tokens = 128;
    spec.dim = 16;
    spec.seed = 99;
    std::vector<BudgetPolicy> policies = {parse_policy("fier:g=16"), parse_policy("quest:L=8"),
                                          parse_policy("h2o"), parse_policy("streaming_llm")};
    const RecallReport a = sweep(spec, policies, {16, 32}, 5);
    const RecallReport b = sweep(spec, policies, {16, 32}, 5);
    REQUIRE(report_to_csv(a) == report_to_csv(b));
    REQUIRE(report_to_json(a).dump() == report_to_json(b).dump());
}

TEST_CASE("sweep carries exact load ratios for the standard knob set") {
    WorkloadSpec spec;
    spec.tokens = 1024;
    spec.dim = 16;
    spec.seed = 3;
    std::vector<BudgetPolicy> policies = {
        parse_policy("quest:L=32"),  parse_policy("quest:L=16"),  parse_policy("quest:L=8"),
        parse_policy("fier:g=256"), parse_policy("fier:g=128"), parse_policy("fier:g=32"),
    };
    const RecallReport rep = sweep(spec, policies, {64}, 1);
    std::vector<double> ratios;
    for (const AggregateRow& row : rep.aggregates) ratios.push_back(row.load_ratio);
    REQUIRE(ratios == std::vector<double>{0.0625, 0.125, 0.25, 0.0703125, 0.078125, 0.125});
}

TEST_CASE("margin implication holds across sweep trials") {
    WorkloadSpec spec;
    spec.generator = Generator::planted_spikes;
    spec.tokens = 128;
    spec.dim = 16;
    spec.spike_count = 4;
    spec.spike_gain = 1e3;
    spec.seed = 17;
    std::vector<BudgetPolicy> policies = {parse_policy("fier:g=32")};
    const RecallReport rep = sweep(spec, policies, {4}, 40);
    std::size_t qualifying = 0;
    for (const TrialRecord& t : rep.per_trial) {
        if (!std::isnan(t.max_err) && t.max_err < t.margin / 2.0) {
            ++qualifying;
            REQUIRE(t.recall == 1.0);
        }
    }
    REQUIRE(qualifying > 20);
}

TEST_CASE("quantized page scoring at L=1 recalls exactly like fier") {
    WorkloadSpec spec;
    spec.tokens = 96;
    spec.dim = 8;
    spec.seed = 23;
    std::vector<BudgetPolicy> policies = {parse_policy("fier:g=8"),
                                          parse_policy("quest_quant:L=1,g=8")};
    const RecallReport rep = sweep(spec, policies, {8, 24}, 10);
    REQUIRE(rep.aggregates.size() == 4);
    // rows are policy-major: fier at budgets {8,24}, then quest_quant
    REQUIRE(rep.aggregates[0].recall_mean == rep.aggregates[2].recall_mean);
    REQUIRE(rep.aggregates[1].recall_mean == rep.aggregates[3].recall_mean);
}

TEST_CASE("oracle recall is 1 and no policy beats it") {
    WorkloadSpec spec;
    spec.tokens = 64;
    spec.dim = 8;
    spec.seed = 31;
    std::vector<BudgetPolicy> policies = {parse_policy("oracle"), parse_policy("fier:g=8"),
                                          parse_policy("quest:L=8")};
    const RecallReport rep = sweep(spec, policies, {8}, 10);
    REQUIRE(rep.aggregates[0].recall_mean == 1.0);
    for (const AggregateRow& row : rep.aggregates) REQUIRE(row.recall_mean <= 1.0);
}

TEST_CASE("mean recall grows with budget for oracle and streaming llm") {
    WorkloadSpec spec;
    spec.tokens = 256;
    spec.dim = 8;
    spec.seed = 41;
    std::vector<BudgetPolicy> policies = {parse_policy("oracle"),
                                          parse_policy("streaming_llm:sink=4")};
    const RecallReport rep = sweep(spec, policies, {16, 64, 192}, 60);
    // oracle rows: always exactly 1
    REQUIRE(rep.aggregates[0].recall_mean == 1.0);
    REQUIRE(rep.aggregates[1].recall_mean == 1.0);
    REQUIRE(rep.aggregates[2].recall_mean == 1.0);
    // streaming llm mean recall: supersets in budget push the mean up
    REQUIRE(rep.aggregates[3].recall_mean < rep.aggregates[4].recall_mean);
    REQUIRE(rep.aggregates[4].recall_mean < rep.aggregates[5].recall_mean);
}

TEST_CASE("csv layout is stable and quoted") {
    WorkloadSpec spec;
    spec.tokens = 32;
    spec.dim = 4;
    spec.seed = 2;
    const RecallReport rep = sweep(spec, {parse_policy("quest:L=4")}, {4}, 2);
    const std::string csv = report_to_csv(rep);
    REQUIRE(csv.rfind("policy,budget,knob,load_ratio,recall_mean,recall_std,out_err_mean,"
                      "margin_mean,maxerr_mean,trials,seed\n", 0) == 0);
    REQUIRE(csv.find("quest,4,\"L=4,sum\",0.5,") != std::string::npos);
}

TEST_CASE("position maps cover selections and include the oracle row") {
    std::mt19937_64 rng(51);
    KeyCache K{testref::random_matrix(128, 8, rng)};
    ValueCache V{testref::random_matrix(128, 8, rng)};
    const QueryVector q = testref::random_vector(8, rng);
    std::vector<BudgetPolicy> policies = {parse_policy("fier:g=16"), parse_policy("full"),
                                          parse_policy("streaming_llm")};
    const std::vector<PositionMapRow> rows = token_position_map(q, K, policies, 16);
    REQUIRE(rows.size() == policies.size() + 1);

    // oracle row has exactly n ones
    std::size_t oracle_ones = 0;
    for (uint8_t b : rows.back().map) oracle_ones += b;
    REQUIRE(rows.back().policy == "oracle");
    REQUIRE(oracle_ones == 16);

    // full row is all ones
    for (uint8_t b : rows[1].map) REQUIRE(b == 1);

    // maps agree with run_policy selections
    SideState state = build_side_state(policies, K);
    EvictionState ev = EvictionState::zeros(128);
    ev = h2o_accumulate(std::move(ev), softmax(exact_scores(q, K)));
    state.eviction = &ev;
    BudgetPolicy fp = policies[0];
    fp.budget = 16;
    const RetrievalResult r = run_policy(fp, q, K, V, state);
    std::vector<uint8_t> expect(128, 0);
    for (std::size_t t : r.selection.indices) expect[t] = 1;
    REQUIRE(rows[0].map == expect);

    const std::string csv = position_maps_to_csv(rows);
    REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 4);
}

TEST_CASE("from_dump workloads load the dumped instance") {
    const std::string path =
        (std::filesystem::temp_directory_path() / "fier_harness_dump.kvd").string();
    std::mt19937_64 rng(61);
    CacheDump dump;
    dump.keys.data = testref::random_matrix(24, 4, rng);
    dump.values.data = testref::random_matrix(24, 4, rng);
    dump.queries = {testref::random_vector(4, rng)};
    write_cache_dump(path, dump);

    WorkloadSpec spec;
    spec.generator = Generator::from_dump;
    spec.dump_path = path;
    const WorkloadInstance w = generate(spec);
    REQUIRE(w.keys.tokens() == 24);
    REQUIRE(w.queries.size() == 1);
    // values are exactly the f16-widened dump payload
    const CacheDump reread = read_cache_dump(path);
    REQUIRE(w.keys.data == reread.keys.data);
    std::filesystem::remove(path);

    WorkloadSpec empty = spec;
    empty.dump_path.clear();
    REQUIRE_THROWS_WITH(generate(empty), Catch::Matchers::ContainsSubstring("dump path"));
}

TEST_CASE("sweep honors FIER_THREADS without changing results") {
    WorkloadSpec spec;
    spec.tokens = 96;
    spec.dim = 8;
    spec.seed = 77;
    std::vector<BudgetPolicy> policies = {parse_policy("fier:g=8"), parse_policy("h2o")};

    setenv("FIER_THREADS", "1", 1);
    const RecallReport serial = sweep(spec, policies, {8, 32}, 8);
    setenv("FIER_THREADS", "4", 1);
    const RecallReport parallel = sweep(spec, policies, {8, 32}, 8);
    unsetenv("FIER_THREADS");
    REQUIRE(report_to_csv(serial) == report_to_csv(parallel));
}
