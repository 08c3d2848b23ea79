#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>

#include "fier/fier.hpp"
#include "helpers.hpp"

using namespace fier;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string output;  // stdout + stderr
};

RunResult run_cli(const std::string& args) {
    const std::string out_path =
        (fs::temp_directory_path() / ("fier_cli_out_" + std::to_string(::getpid()))).string();
    const std::string cmd = std::string(FIER_CLI_PATH) + " " + args + " > " + out_path + " 2>&1";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(out_path);
    r.output.assign((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    fs::remove(out_path);
    return r;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct TempDir {
    fs::path dir;
    TempDir() {
        dir = fs::temp_directory_path() / ("fier_cli_test_" + std::to_string(::getpid()));
        fs::create_directories(dir);
    }
    ~TempDir() { fs::remove_all(dir); }
    std::string path(const char* name) const { return (dir / name).string(); }
};

}  // namespace

TEST_CASE("quantize prints the exact load ratio and writes a loadable index") {
    TempDir tmp;
    std::mt19937_64 rng(1);
    CacheDump dump;
    dump.keys.data = testref::random_matrix(4096, 128, rng);
    dump.values.data = testref::random_matrix(4096, 128, rng);
    dump.queries = {testref::random_vector(128, rng)};
    dump.dtype = DumpDtype::f16;
    write_cache_dump(tmp.path("cache.kvd"), dump);

    const RunResult r =
        run_cli("quantize " + tmp.path("cache.kvd") + " -g 32 -o " + tmp.path("keys.fpk"));
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.output.find("= 0.125") != std::string::npos);
    REQUIRE(r.output.find("0.125") != std::string::npos);

    // result reproducible by direct library calls
    const PackedKeys from_file = read_packed_keys(tmp.path("keys.fpk"));
    const CacheDump loaded = read_cache_dump(tmp.path("cache.kvd"));
    const PackedKeys direct = quantize(loaded.keys, GroupSpec{32});
    REQUIRE(serialize_packed_keys(direct) == serialize_packed_keys(from_file));
}

TEST_CASE("quantize at g=1 reports a lossless round trip for f16 dumps") {
    TempDir tmp;
    std::mt19937_64 rng(2);
    CacheDump dump;
    dump.keys.data = testref::random_matrix(64, 8, rng);
    dump.values.data = testref::random_matrix(64, 8, rng);
    dump.dtype = DumpDtype::f16;
    write_cache_dump(tmp.path("cache.kvd"), dump);

    const RunResult r =
        run_cli("quantize " + tmp.path("cache.kvd") + " -g 1 -o " + tmp.path("keys.fpk"));
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.output.find("round trip: lossless") != std::string::npos);
}

TEST_CASE("quantize rejects a truncated dump with exit 2") {
    TempDir tmp;
    std::mt19937_64 rng(3);
    CacheDump dump;
    dump.keys.data = testref::random_matrix(16, 4, rng);
    dump.values.data = testref::random_matrix(16, 4, rng);
    std::string bytes = serialize_cache_dump(dump);
    bytes.resize(bytes.size() - 5);
    {
        std::ofstream out(tmp.path("broken.kvd"), std::ios::binary);
        out << bytes;
    }
    const RunResult r =
        run_cli("quantize " + tmp.path("broken.kvd") + " -g 4 -o " + tmp.path("keys.fpk"));
    REQUIRE(r.exit_code == 2);
    REQUIRE(r.output.find("payload length mismatch") != std::string::npos);
    REQUIRE_FALSE(fs::exists(tmp.path("keys.fpk")));
}

TEST_CASE("bench rejects unknown policies with exit 1 listing the names") {
    TempDir tmp;
    const RunResult r = run_cli("bench --policy bogus --out " + tmp.path("r.csv"));
    REQUIRE(r.exit_code == 1);
    REQUIRE(r.output.find("valid names") != std::string::npos);
    REQUIRE(r.output.find("fier") != std::string::npos);
}

TEST_CASE("bench with the full policy reports recall 1 everywhere") {
    TempDir tmp;
    const RunResult r = run_cli("bench --gen gaussian --l 64 --d 8 --policy full --budgets 8 "
                                "--trials 3 --seed 5 --out " +
                                tmp.path("r.csv"));
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    const std::string csv = slurp(tmp.path("r.csv"));
    REQUIRE(csv.find("full,8,\"-\",0,1,0,0,") != std::string::npos);
}

TEST_CASE("bench is byte-identical across runs with the same seed") {
    TempDir tmp;
    const std::string flags = "bench --gen outlier_channels --l 256 --d 16 --queries 2 "
                              "--policy fier:g=32 --policy quest:L=16 --policy h2o "
                              "--budgets 16,64 --trials 5 --seed 42 --out ";
    REQUIRE(run_cli(flags + tmp.path("a.csv")).exit_code == 0);
    REQUIRE(run_cli(flags + tmp.path("b.csv")).exit_code == 0);
    const std::string a = slurp(tmp.path("a.csv"));
    REQUIRE_FALSE(a.empty());
    REQUIRE(a == slurp(tmp.path("b.csv")));
}

TEST_CASE("bench emits matching json when asked") {
    TempDir tmp;
    const std::string flags = "bench --l 64 --d 8 --policy fier:g=8 --budgets 8 --trials 2 "
                              "--seed 9 --out ";
    REQUIRE(run_cli(flags + tmp.path("r.json")).exit_code == 0);
    const std::string text = slurp(tmp.path("r.json"));
    const auto doc = nlohmann::json::parse(text);
    REQUIRE(doc["rows"].size() == 1);
    REQUIRE(doc["rows"][0]["policy"] == "fier");
    REQUIRE(doc["rows"][0]["load_ratio"] == 0.3125);  // (1+32/8)/16
}

TEST_CASE("bench matches a direct library sweep") {
    TempDir tmp;
    const RunResult r = run_cli("bench --gen gaussian --l 128 --d 8 --policy fier:g=16 "
                                "--budgets 16 --trials 4 --seed 11 --out " +
                                tmp.path("cli.csv"));
    REQUIRE(r.exit_code == 0);

    WorkloadSpec spec;
    spec.generator = Generator::gaussian;
    spec.tokens = 128;
    spec.dim = 8;
    spec.query_count = 1;
    spec.seed = 11;
    const RecallReport rep = sweep(spec, {parse_policy("fier:g=16")}, {16}, 4);
    REQUIRE(slurp(tmp.path("cli.csv")) == report_to_csv(rep));
}

TEST_CASE("bench reads instances from a dump") {
    TempDir tmp;
    std::mt19937_64 rng(4);
    CacheDump dump;
    dump.keys.data = testref::random_matrix(64, 8, rng);
    dump.values.data = testref::random_matrix(64, 8, rng);
    dump.queries = {testref::random_vector(8, rng), testref::random_vector(8, rng)};
    write_cache_dump(tmp.path("cache.kvd"), dump);

    const RunResult r = run_cli("bench --dump " + tmp.path("cache.kvd") +
                                " --policy oracle --budgets 8 --trials 2 --out " +
                                tmp.path("r.csv"));
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    REQUIRE(slurp(tmp.path("r.csv")).find("oracle,8") != std::string::npos);

    // a dump without queries is a data error
    CacheDump empty = dump;
    empty.queries.clear();
    write_cache_dump(tmp.path("noq.kvd"), empty);
    const RunResult r2 = run_cli("bench --dump " + tmp.path("noq.kvd") +
                                 " --policy oracle --budgets 8 --out " + tmp.path("r2.csv"));
    REQUIRE(r2.exit_code == 2);
}

TEST_CASE("posmap writes one row per policy plus the oracle") {
    TempDir tmp;
    const RunResult r = run_cli("posmap --gen planted_spikes --l 128 --d 8 --spikes 8 "
                                "--seed 3 --policy fier:g=16 --policy streaming_llm "
                                "--budget 8 --out " +
                                tmp.path("maps.csv"));
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    const std::string csv = slurp(tmp.path("maps.csv"));
    REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 3);  // 2 policies + oracle

    // oracle row sums to the budget
    const std::size_t oracle_pos = csv.rfind("oracle");
    REQUIRE(oracle_pos != std::string::npos);
    std::size_t ones = 0;
    for (std::size_t i = oracle_pos; i < csv.size(); ++i) ones += csv[i] == '1';
    REQUIRE(ones == 8);
    REQUIRE(r.output.find("policy=fier recall=") != std::string::npos);
}

TEST_CASE("usage errors exit with 1") {
    REQUIRE(run_cli("bench --out x.csv").exit_code == 1);       // missing --policy
    REQUIRE(run_cli("nonsense").exit_code == 1);                // unknown subcommand
    REQUIRE(run_cli("").exit_code == 1);                        // subcommand required
    REQUIRE(run_cli("--help").exit_code == 0);
}
