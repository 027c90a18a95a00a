#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <set>

#include "dartlab/config.hpp"
#include "dartlab/csvio.hpp"
#include "dartlab/errors.hpp"
#include "dartlab/rng.hpp"
#include "dartlab/runner.hpp"

using namespace dartlab;

namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir(const std::string& tag) : path(fs::temp_directory_path() / ("dartlab_" + tag)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

}  // namespace

TEST_CASE("derive_seed: deterministic, label-sensitive, collision-free") {
    CHECK(derive_seed(42, "branch:1") == derive_seed(42, "branch:1"));
    CHECK(derive_seed(42, "branch:1") != derive_seed(42, "branch:2"));
    CHECK(derive_seed(42, "branch:1") != derive_seed(43, "branch:1"));

    std::set<std::uint64_t> seen;
    for (int i = 0; i < 100000; ++i) seen.insert(derive_seed(7, "label:" + std::to_string(i)));
    CHECK(seen.size() == 100000);
}

TEST_CASE("derive_seed avalanche: flipping one label bit changes about half the output") {
    double total = 0.0;
    const int trials = 2000;
    for (int i = 0; i < trials; ++i) {
        std::string a = "probe:" + std::to_string(i);
        std::string b = a;
        b.back() ^= 1;  // single-bit change in the label
        total += __builtin_popcountll(derive_seed(1, a) ^ derive_seed(1, b));
    }
    CHECK(total / trials > 24.0);
    CHECK(total / trials < 40.0);
}

TEST_CASE("kv parsing: comments, whitespace, malformed lines") {
    auto kv = parse_kv_text("# comment\n a.b = 3 \n\nc=hello # tail\n");
    CHECK(kv.at("a.b") == "3");
    CHECK(kv.at("c") == "hello");
    CHECK_THROWS_AS(parse_kv_text("not a pair\n"), ConfigError);
}

TEST_CASE("params: typed reads, constraints, unknown-key rejection") {
    Params p(parse_kv_text("x = 3\ny = 2.5\nflag = true\nlist = 1,2,4\n"));
    CHECK(p.get_int("x", 0, 0, 10) == 3);
    CHECK(p.get_real("y", 0.0) == 2.5);
    CHECK(p.get_bool("flag", false));
    CHECK(p.get_int_list("list", {}) == std::vector<long long>{1, 2, 4});
    CHECK(p.get_int("missing", 7, 0, 10) == 7);  // default fills in
    p.reject_unknown();

    Params bad(parse_kv_text("x = eleven\n"));
    CHECK_THROWS_AS(bad.get_int("x", 0, 0, 10), ConfigError);
    Params range(parse_kv_text("x = 100\n"));
    CHECK_THROWS_AS(range.get_int("x", 0, 0, 10), ConfigError);
    Params extra(parse_kv_text("mystery = 1\n"));
    CHECK_THROWS_AS(extra.reject_unknown(), ConfigError);
}

TEST_CASE("parse_config: kind required, precedence of overrides") {
    CHECK_THROWS_AS(parse_config("", {}), ConfigError);
    ExperimentConfig cfg = parse_config("", {"kind=prop1", "prop1.seeds=2"});
    CHECK(cfg.kind == "prop1");
    CHECK(cfg.kv.at("prop1.seeds") == "2");
    CHECK_THROWS_AS(parse_config("", {"kind=frobnicate"}), ConfigError);

    // later overrides win
    ExperimentConfig cfg2 = parse_config("", {"kind=prop1", "prop1.seeds=2", "prop1.seeds=5"});
    CHECK(cfg2.kv.at("prop1.seeds") == "5");
}

TEST_CASE("validate: defaults fill in, constraint violations are named") {
    ExperimentConfig cfg = parse_config("", {"kind=dart"});
    std::string echo = validate_config(cfg);
    CHECK(echo.find("dart.lambda") != std::string::npos);
    CHECK(echo.find("dart.E = 60") != std::string::npos);

    ExperimentConfig bad = parse_config("", {"kind=dart", "dart.lambda=0"});
    CHECK_THROWS_WITH_AS(validate_config(bad),
                         doctest::Contains("dart.lambda"), ConfigError);
}

TEST_CASE("resolved config round-trips through the parser") {
    ExperimentConfig cfg =
        parse_config("", {"kind=prop2", "prop2.n=6", "prop2.d=512", "prop2.m_sweep=1,2"});
    std::string echo = validate_config(cfg);
    // reparse the canonical text: identical resolution
    auto kv = parse_kv_text(echo);
    std::vector<std::string> overrides;
    for (auto& [k, v] : kv) overrides.push_back(k + "=" + v);
    ExperimentConfig cfg2 = parse_config("", overrides);
    CHECK(validate_config(cfg2) == echo);
}

TEST_CASE("run_experiment: smoke run writes artifacts; reruns are byte-identical") {
    TempDir dir("smoke");
    ExperimentConfig cfg = parse_config(
        "", {"kind=prop2", "prop2.n=6", "prop2.d=1024", "prop2.K=2", "prop2.C=4",
             "prop2.m_sweep=1,2", "prop2.seeds=2", "prop2.horizon=40", "prop2.snapshots=60",
             "out=" + dir.str() + "/a", "master_seed=5"});
    run_experiment(cfg);
    CHECK(fs::exists(dir.path / "a" / "prop2.csv"));
    CHECK(fs::exists(dir.path / "a" / "prop2.json"));
    CHECK(fs::exists(dir.path / "a" / "summary.json"));

    ExperimentConfig cfg2 = cfg;
    cfg2.out_dir = dir.str() + "/b";
    run_experiment(cfg2);
    CHECK(read_text_file(dir.str() + "/a/prop2.csv") == read_text_file(dir.str() + "/b/prop2.csv"));

    // summary echoes every default that influenced the run
    std::string summary = read_text_file(dir.str() + "/a/summary.json");
    CHECK(summary.find("prop2.theta_conv") != std::string::npos);
    CHECK(summary.find("prop2.loss_mode") != std::string::npos);
}

TEST_CASE("run_experiment: erm kind emits run.csv with the documented schema") {
    TempDir dir("erm");
    ExperimentConfig cfg = parse_config(
        "", {"kind=erm", "erm.K=2", "erm.d=16", "erm.n=24", "erm.C=2", "erm.E=4",
             "erm.batch_size=12", "out=" + dir.str(), "master_seed=9"});
    run_experiment(cfg);
    CsvTable run = read_csv(dir.str() + "/run.csv");
    CHECK(run.header ==
          std::vector<std::string>{"epoch", "lr", "branch", "loss", "eval_acc", "event"});
    CHECK(run.rows.size() == 4);
    CHECK(fs::exists(dir.path / "final.dlp"));
}

TEST_CASE("csv writer: header-only file, parse-back, schema mismatch naming") {
    TempDir dir("csv");
    std::string path = dir.str() + "/t.csv";
    {
        CsvWriter csv({"a", "b"}, path);
        csv.close();
    }
    CHECK(read_text_file(path) == "a,b\n");

    {
        CsvWriter csv({"a", "b"}, path);
        csv.row({1.0 / 3.0, (long long)7});
        csv.close();
    }
    CsvTable t = read_csv(path);
    REQUIRE(t.rows.size() == 1);
    CHECK(std::stod(t.rows[0][0]) == 1.0 / 3.0);  // 17 digits round-trip
    CHECK(t.rows[0][1] == "7");

    CsvWriter bad({"a", "b"}, path);
    CHECK_THROWS_WITH_AS(bad.row({1.0}), doctest::Contains("'b'"), ConfigError);
}

TEST_CASE("invalid kind is rejected with the kind named") {
    CHECK_THROWS_WITH_AS(parse_config("", {"kind=warp"}), doctest::Contains("warp"), ConfigError);
}
