// Benchmark CLI: cache-dump ingestion, 1-bit index building, policy sweeps,
// and position-map dumps. Exit codes: 0 success, 1 usage error, 2 data error.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fier/fier.hpp"

namespace {

struct WorkloadFlags {
    std::string dump_path;
    std::string gen = "gaussian";
    std::size_t l = 1024;
    std::size_t d = 64;
    std::size_t queries = 1;
    std::size_t spikes = 64;
    double spike_gain = 1e3;
    std::size_t spike_exclude_prefix = 0;
    std::size_t spike_exclude_suffix = 0;
    std::size_t outlier_channels = 4;
    double outlier_scale = 8.0;
    uint64_t seed = 0;
};

void add_workload_flags(CLI::App* cmd, WorkloadFlags& w) {
    cmd->add_option("--dump", w.dump_path, "read the instance from a KVD1 cache dump");
    cmd->add_option("--gen", w.gen, "workload generator: gaussian|planted_spikes|outlier_channels")
        ->check(CLI::IsMember({"gaussian", "planted_spikes", "outlier_channels"}));
    cmd->add_option("--l", w.l, "token count");
    cmd->add_option("--d", w.d, "head dimension");
    cmd->add_option("--queries", w.queries, "queries per instance");
    cmd->add_option("--spikes", w.spikes, "planted spikes per query");
    cmd->add_option("--spike-gain", w.spike_gain, "planted spike logit");
    cmd->add_option("--spike-exclude-prefix", w.spike_exclude_prefix,
                    "keep spikes out of the first N positions");
    cmd->add_option("--spike-exclude-suffix", w.spike_exclude_suffix,
                    "keep spikes out of the last N positions");
    cmd->add_option("--outlier-channels", w.outlier_channels, "inflated channel count");
    cmd->add_option("--outlier-scale", w.outlier_scale, "outlier channel factor");
    cmd->add_option("--seed", w.seed, "master seed");
}

fier::WorkloadSpec to_spec(const WorkloadFlags& w) {
    fier::WorkloadSpec spec;
    spec.tokens = w.l;
    spec.dim = w.d;
    spec.query_count = w.queries;
    spec.spike_count = w.spikes;
    spec.spike_gain = w.spike_gain;
    spec.spike_exclude_prefix = w.spike_exclude_prefix;
    spec.spike_exclude_suffix = w.spike_exclude_suffix;
    spec.outlier_channel_count = w.outlier_channels;
    spec.outlier_scale = w.outlier_scale;
    spec.seed = w.seed;
    if (w.gen == "gaussian") spec.generator = fier::Generator::gaussian;
    else if (w.gen == "planted_spikes") spec.generator = fier::Generator::planted_spikes;
    else if (w.gen == "outlier_channels") spec.generator = fier::Generator::outlier_channels;
    return spec;
}

// Resolve the instance: either generated or loaded from a dump.
std::optional<fier::WorkloadInstance> load_fixed(const WorkloadFlags& w, fier::WorkloadSpec& spec) {
    if (w.dump_path.empty()) return std::nullopt;
    const fier::CacheDump dump = fier::read_cache_dump(w.dump_path);
    if (dump.queries.empty()) throw fier::DataError("dump has no queries");
    spec.generator = fier::Generator::from_dump;
    spec.dump_path = w.dump_path;
    spec.tokens = dump.keys.tokens();
    spec.dim = dump.keys.dim();
    spec.query_count = dump.queries.size();
    fier::WorkloadInstance inst;
    inst.keys = dump.keys;
    inst.values = dump.values;
    inst.queries = dump.queries;
    return inst;
}

std::vector<fier::BudgetPolicy> parse_policies(const std::vector<std::string>& names) {
    std::vector<fier::BudgetPolicy> out;
    out.reserve(names.size());
    for (const std::string& text : names) out.push_back(fier::parse_policy(text));
    return out;
}

int cmd_quantize(const std::string& input, std::size_t g, const std::string& output) {
    const fier::CacheDump dump = fier::read_cache_dump(input);
    const fier::PackedKeys pk = fier::quantize(dump.keys, fier::GroupSpec{g});
    fier::write_packed_keys(output, pk);

    const std::size_t l = pk.tokens, d = pk.dim;
    const fier::Rational counted(static_cast<long long>(pk.payload_bytes()),
                                 static_cast<long long>(l * d * 2));
    const fier::LoadRatio formula = fier::load_ratio_fier(l, g);
    std::printf("packed %zu tokens x %zu channels at g=%zu -> %s (%zu bytes)\n", l, d, g,
                output.c_str(), fier::serialize_packed_keys(pk).size());
    std::printf("counted load ratio: %lld/%lld = %.10g\n", counted.num, counted.den,
                counted.to_double());
    std::printf("formula load ratio (1+32/g)/16: %.10g%s\n", formula.value(),
                formula.formula ? "" : " (short final group; counted bytes are authoritative)");

    // Reconstruction check against the dump keys.
    const fier::KeyCache back = fier::dequantize(pk);
    double max_abs = 0.0;
    for (std::size_t i = 0; i < back.data.data().size(); ++i) {
        max_abs = std::max(max_abs, std::fabs(back.data.data()[i] - dump.keys.data.data()[i]));
    }
    if (max_abs == 0.0) std::printf("round trip: lossless\n");
    else std::printf("round trip: max |K~ - K| = %.10g\n", max_abs);
    return 0;
}

std::vector<std::size_t> parse_budgets(const std::string& text) {
    std::vector<std::size_t> out;
    std::istringstream is(text);
    std::string item;
    while (std::getline(is, item, ',')) {
        if (!item.empty()) out.push_back(std::stoul(item));
    }
    if (out.empty()) throw std::invalid_argument("--budgets: need at least one value");
    return out;
}

int cmd_bench(const WorkloadFlags& w, const std::vector<std::string>& policy_texts,
              const std::string& budgets_text, std::size_t trials, const std::string& out_path,
              std::string format) {
    fier::WorkloadSpec spec = to_spec(w);
    const std::optional<fier::WorkloadInstance> fixed = load_fixed(w, spec);
    const std::vector<fier::BudgetPolicy> policies = parse_policies(policy_texts);
    const std::vector<std::size_t> budgets = parse_budgets(budgets_text);

    const fier::RecallReport report =
        fier::sweep(spec, policies, budgets, trials, fixed ? &*fixed : nullptr);

    if (format.empty()) {
        format = out_path.size() >= 5 && out_path.substr(out_path.size() - 5) == ".json" ? "json"
                                                                                         : "csv";
    }
    if (format == "json") {
        fier::atomic_write_file(out_path, fier::report_to_json(report).dump(2) + "\n");
    } else {
        fier::atomic_write_file(out_path, fier::report_to_csv(report));
    }
    std::printf("wrote %s (%zu aggregate rows, %zu trials)\n", out_path.c_str(),
                report.aggregates.size(), trials);
    return 0;
}

int cmd_posmap(const WorkloadFlags& w, const std::vector<std::string>& policy_texts,
               std::size_t budget, const std::string& out_path) {
    fier::WorkloadSpec spec = to_spec(w);
    const std::optional<fier::WorkloadInstance> fixed = load_fixed(w, spec);
    const std::vector<fier::BudgetPolicy> policies = parse_policies(policy_texts);

    fier::WorkloadInstance inst = fixed ? *fixed : fier::generate(spec);
    const fier::QueryVector& q = inst.queries.front();
    const std::vector<fier::PositionMapRow> rows =
        fier::token_position_map(q, inst.keys, policies, budget);
    fier::atomic_write_file(out_path, fier::position_maps_to_csv(rows));

    const fier::Selection oracle = fier::topk_oracle(fier::exact_scores(q, inst.keys), budget);
    for (std::size_t i = 0; i < policies.size(); ++i) {
        fier::Selection sel;
        sel.budget = budget;
        for (std::size_t t = 0; t < rows[i].map.size(); ++t) {
            if (rows[i].map[t]) sel.indices.push_back(t);
        }
        double r;
        if (sel.indices.size() == budget) {
            r = fier::recall(sel, oracle);
        } else {
            sel.budget = sel.indices.size();
            r = static_cast<double>([&] {
                    std::size_t hits = 0;
                    for (std::size_t t : oracle.indices) hits += rows[i].map[t];
                    return hits;
                }()) /
                static_cast<double>(budget);
        }
        std::printf("policy=%s recall=%.10g\n", policies[i].name().c_str(), r);
    }
    std::printf("wrote %s (%zu rows)\n", out_path.c_str(), rows.size());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"token-level KV cache retrieval benchmark"};
    app.require_subcommand(1);

    // quantize
    std::string q_input, q_output;
    std::size_t q_group = 32;
    CLI::App* quant = app.add_subcommand("quantize", "pack a dump's keys into a 1-bit index");
    quant->add_option("input", q_input, "KVD1 cache dump")->required();
    quant->add_option("-g,--group", q_group, "group size (tokens per group per channel)");
    quant->add_option("-o,--out", q_output, "output packed index path")->required();

    // bench
    WorkloadFlags bench_w;
    std::vector<std::string> bench_policies;
    std::string bench_budgets = "64";
    std::size_t bench_trials = 100;
    std::string bench_out = "report.csv";
    std::string bench_format;
    CLI::App* bench = app.add_subcommand("bench", "run a policy sweep and write a report");
    add_workload_flags(bench, bench_w);
    bench->add_option("--policy,--policies", bench_policies,
                      "policy spec, repeatable (e.g. fier:g=32, quest:L=16)")
        ->required();
    bench->add_option("--budgets", bench_budgets, "comma-separated token budgets");
    bench->add_option("--trials", bench_trials, "trial count");
    bench->add_option("--out", bench_out, "report path (.csv or .json)");
    bench->add_option("--format", bench_format, "force csv or json")
        ->check(CLI::IsMember({"csv", "json"}));

    // posmap
    WorkloadFlags pos_w;
    std::vector<std::string> pos_policies;
    std::size_t pos_budget = 64;
    std::string pos_out = "posmap.csv";
    CLI::App* posmap = app.add_subcommand("posmap", "dump per-policy selected-position maps");
    add_workload_flags(posmap, pos_w);
    posmap->add_option("--policy,--policies", pos_policies, "policy spec, repeatable")->required();
    posmap->add_option("--budget", pos_budget, "token budget");
    posmap->add_option("--out", pos_out, "output CSV path");

    try {
        app.parse(argc, argv);
        if (quant->parsed()) return cmd_quantize(q_input, q_group, q_output);
        if (bench->parsed()) {
            return cmd_bench(bench_w, bench_policies, bench_budgets, bench_trials, bench_out,
                             bench_format);
        }
        if (posmap->parsed()) return cmd_posmap(pos_w, pos_policies, pos_budget, pos_out);
        return 1;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    } catch (const fier::DataError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
