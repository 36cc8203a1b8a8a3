#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch_root() {
    static fs::path root = [] {
        fs::path p = fs::temp_directory_path() / "seqrec_cli_tests";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return root;
}

RunResult run_cli(const std::string& args) {
    static int counter = 0;
    fs::path out = scratch_root() / ("out" + std::to_string(counter) + ".txt");
    fs::path err = scratch_root() / ("err" + std::to_string(counter) + ".txt");
    ++counter;
    std::string cmd = std::string(SEQREC_BIN) + " " + args + " >" + out.string() + " 2>" + err.string();
    int rc = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WEXITSTATUS(rc);
    r.out = slurp(out.string());
    r.err = slurp(err.string());
    return r;
}

/// train_log.jsonl with the wall-clock field removed, for determinism diffs.
std::string log_without_seconds(const std::string& path) {
    std::ifstream in(path);
    std::string line, out;
    while (std::getline(in, line)) {
        json j = json::parse(line);
        j.erase("seconds");
        out += j.dump() + "\n";
    }
    return out;
}

std::string make_config(const fs::path& dir, const std::string& dataset, const std::string& run_dir,
                        const std::string& mechanism, int max_epochs, uint64_t seed = 11) {
    json j;
    j["model"] = {{"backbone", "dot_product"}, {"mechanism", mechanism}, {"d", 16},    {"n", 10},
                  {"heads", 1},                {"layers", 1},            {"dropout", 0.1},
                  {"learning_rate", 0.003},    {"seed", seed}};
    j["data"] = {{"dataset", dataset}};
    j["run_dir"] = run_dir;
    j["train"] = {{"batch_size", 32}, {"max_epochs", max_epochs}, {"patience", 50}};
    j["eval"] = {{"topn", {1, 5, 10}}, {"mode", "full"}};
    static int cfg_counter = 0;
    fs::path p = dir / ("cfg" + std::to_string(cfg_counter++) + ".json");
    std::ofstream(p) << j.dump(2);
    return p.string();
}

std::string prepared_dataset() {
    static std::string path = [] {
        fs::path dir = scratch_root() / "ds";
        RunResult r = run_cli("prepare --synthetic --users 120 --items 40 --seq-len 12 --strength 0.9 "
                              "--seed 7 --max-len 10 --output " +
                              dir.string());
        REQUIRE(r.exit_code == 0);
        return (dir / "dataset.json").string();
    }();
    return path;
}

}  // namespace

TEST_CASE("help text snapshots") {
    for (const auto& [args, golden] :
         std::vector<std::pair<std::string, std::string>>{{"--help", "help_main.txt"},
                                                          {"prepare --help", "help_prepare.txt"},
                                                          {"train --help", "help_train.txt"},
                                                          {"eval --help", "help_eval.txt"},
                                                          {"export-attention --help", "help_export.txt"},
                                                          {"bench --help", "help_bench.txt"}}) {
        RunResult r = run_cli(args);
        CHECK(r.exit_code == 0);
        std::string expect = slurp(std::string(GOLDEN_DIR) + "/" + golden);
        REQUIRE_FALSE(expect.empty());
        CHECK(r.out == expect);
    }
}

TEST_CASE("prepare writes dataset and table-shaped stats") {
    std::string ds = prepared_dataset();
    CHECK(fs::exists(ds));
    json stats = json::parse(slurp((fs::path(ds).parent_path() / "stats.json").string()));
    CHECK(stats.contains("users"));
    CHECK(stats.contains("items"));
    CHECK(stats.contains("interactions"));
    CHECK(stats.contains("density"));
    CHECK(stats.contains("dataset_hash"));
    CHECK(stats["planted_rule"]["measured_frequency"].get<double>() == doctest::Approx(0.9).epsilon(0.05));
}

TEST_CASE("prepare errors: missing input file exits 1 with a message") {
    RunResult r = run_cli("prepare --input /nonexistent/file.csv --output " +
                          (scratch_root() / "bad").string());
    CHECK(r.exit_code == 1);
    CHECK(r.err.find("error:") != std::string::npos);
}

TEST_CASE("config with unknown keys is rejected") {
    fs::path cfg = scratch_root() / "bad_cfg.json";
    std::ofstream(cfg) << R"({"model": {"d": 8}, "data": {"dataset": "x"}, "run_dir": "y", "typo_key": 1})";
    RunResult r = run_cli("train --config " + cfg.string());
    CHECK(r.exit_code == 1);
    CHECK(r.err.find("typo_key") != std::string::npos);
}

TEST_CASE("train is reproducible and run dirs carry provenance") {
    std::string ds = prepared_dataset();
    fs::path runs = scratch_root();
    std::string cfg_a = make_config(runs, ds, (runs / "run_a").string(), "simp", 4);
    std::string cfg_b = make_config(runs, ds, (runs / "run_b").string(), "simp", 4);
    REQUIRE(run_cli("train --config " + cfg_a).exit_code == 0);
    REQUIRE(run_cli("train --config " + cfg_b).exit_code == 0);

    std::string log_a = log_without_seconds((runs / "run_a" / "train_log.jsonl").string());
    std::string log_b = log_without_seconds((runs / "run_b" / "train_log.jsonl").string());
    REQUIRE_FALSE(log_a.empty());
    CHECK(log_a == log_b);
    CHECK(slurp((runs / "run_a" / "checkpoint_best.json").string()) ==
          slurp((runs / "run_b" / "checkpoint_best.json").string()));

    for (const char* f : {"resolved_config.json", "provenance.json", "state.json",
                          "checkpoint_best.json", "checkpoint_last.json", "train_log.jsonl"})
        CHECK(fs::exists(runs / "run_a" / f));
    json prov = json::parse(slurp((runs / "run_a" / "provenance.json").string()));
    json stats = json::parse(slurp((fs::path(ds).parent_path() / "stats.json").string()));
    CHECK(prov["dataset_hash"] == stats["dataset_hash"]);
    CHECK(prov.contains("seed"));
}

TEST_CASE("interrupted run resumes from the last checkpoint") {
    std::string ds = prepared_dataset();
    fs::path runs = scratch_root();

    // uninterrupted 5-epoch reference
    std::string cfg_full = make_config(runs, ds, (runs / "run_full").string(), "none", 5, 21);
    REQUIRE(run_cli("train --config " + cfg_full).exit_code == 0);

    // same seed: 2 epochs, then resume in the same run dir up to 5
    std::string cfg_part = make_config(runs, ds, (runs / "run_part").string(), "none", 2, 21);
    REQUIRE(run_cli("train --config " + cfg_part).exit_code == 0);
    std::string cfg_more = make_config(runs, ds, (runs / "run_part").string(), "none", 5, 21);
    RunResult resumed = run_cli("train --config " + cfg_more);
    REQUIRE(resumed.exit_code == 0);
    CHECK(resumed.out.find("resuming") != std::string::npos);

    CHECK(log_without_seconds((runs / "run_full" / "train_log.jsonl").string()) ==
          log_without_seconds((runs / "run_part" / "train_log.jsonl").string()));
    CHECK(slurp((runs / "run_full" / "checkpoint_last.json").string()) ==
          slurp((runs / "run_part" / "checkpoint_last.json").string()));
}

TEST_CASE("config templates differing only in the mechanism key both run") {
    std::string ds = prepared_dataset();
    fs::path runs = scratch_root();
    std::string cfg_none = make_config(runs, ds, (runs / "run_m_none").string(), "none", 1);
    std::string cfg_simp = make_config(runs, ds, (runs / "run_m_simp").string(), "simp", 1);
    json a = json::parse(slurp(cfg_none)), b = json::parse(slurp(cfg_simp));
    a["model"].erase("mechanism");
    b["model"].erase("mechanism");
    a.erase("run_dir");
    b.erase("run_dir");
    CHECK(a == b);  // identical templates apart from mechanism and run_dir
    CHECK(run_cli("train --config " + cfg_none).exit_code == 0);
    CHECK(run_cli("train --config " + cfg_simp).exit_code == 0);
}

TEST_CASE("eval writes a parsable metrics report") {
    std::string ds = prepared_dataset();
    fs::path runs = scratch_root();
    std::string cfg = make_config(runs, ds, (runs / "run_eval").string(), "simp", 3);
    REQUIRE(run_cli("train --config " + cfg).exit_code == 0);
    fs::path metrics = runs / "metrics.json";
    RunResult r = run_cli("eval --checkpoint " + (runs / "run_eval" / "checkpoint_best.json").string() +
                          " --data " + ds + " --split test --topn 1,5,10 --mode full --output " +
                          metrics.string());
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.find("Recall@N") != std::string::npos);
    json j = json::parse(slurp(metrics.string()));
    CHECK(j["ranking_mode"] == "full");
    CHECK(j["num_users_evaluated"].get<int>() == 120);
    CHECK(j["metrics"].contains("5"));
    double r5 = j["metrics"]["5"]["recall"].get<double>();
    double n5 = j["metrics"]["5"]["ndcg"].get<double>();
    CHECK(r5 >= n5);
    CHECK(n5 > 0.0);

    RunResult sampled = run_cli("eval --checkpoint " +
                                (runs / "run_eval" / "checkpoint_best.json").string() + " --data " + ds +
                                " --split valid --mode sampled:20 --seed 5");
    CHECK(sampled.exit_code == 0);
    CHECK(sampled.out.find("sampled:20") != std::string::npos);

    RunResult bad = run_cli("eval --checkpoint " + (runs / "run_eval" / "checkpoint_best.json").string() +
                            " --data " + ds + " --split nonsense");
    CHECK(bad.exit_code == 1);
}

TEST_CASE("export-attention writes contractual CSVs and PGMs") {
    std::string ds = prepared_dataset();
    fs::path runs = scratch_root();
    std::string cfg = make_config(runs, ds, (runs / "run_export").string(), "add", 2);
    REQUIRE(run_cli("train --config " + cfg).exit_code == 0);
    fs::path out = runs / "attn";
    RunResult r = run_cli("export-attention --checkpoint " +
                          (runs / "run_export" / "checkpoint_best.json").string() + " --data " + ds +
                          " --user u5 --layer 0 --head 0 --last 6 --output " + out.string());
    REQUIRE(r.exit_code == 0);
    for (const char* f : {"A.csv", "B.csv", "weights.csv", "A.pgm", "B.pgm", "weights.pgm"})
        CHECK(fs::exists(out / f));

    // weights rows: k rows of n columns, each row sums to 1
    std::ifstream w((out / "weights.csv").string());
    std::string line;
    int rows = 0;
    while (std::getline(w, line)) {
        std::stringstream ss(line);
        std::string cell;
        double sum = 0;
        int cols = 0;
        while (std::getline(ss, cell, ',')) {
            sum += std::stod(cell);
            ++cols;
        }
        CHECK(cols == 10);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
        ++rows;
    }
    CHECK(rows == 6);

    std::string pgm = slurp((out / "A.pgm").string());
    CHECK(pgm.substr(0, 9) == "P5\n6 6\n25");  // header P5, 6x6, 255

    RunResult bad = run_cli("export-attention --checkpoint " +
                            (runs / "run_export" / "checkpoint_best.json").string() + " --data " + ds +
                            " --user nobody --output " + out.string());
    CHECK(bad.exit_code == 1);
}

TEST_CASE("bench negative control: a tampered gradient fails loudly") {
    fs::path report = scratch_root() / "tampered.json";
    RunResult r = run_cli("bench --suite acceptance --only 1 --tamper --work-dir " +
                          (scratch_root() / "bench_work").string() + " --output " + report.string());
    CHECK(r.exit_code == 2);
    CHECK(r.out.find("FAIL") != std::string::npos);
    json j = json::parse(slurp(report.string()));
    CHECK(j["all_pass"] == false);
    CHECK(j["criteria"][0]["name"] == "gradient_integrity");
    CHECK(j["criteria"][0]["pass"] == false);

    // the untampered criterion passes and reports wall-clock per criterion
    fs::path report2 = scratch_root() / "clean.json";
    RunResult ok = run_cli("bench --suite acceptance --only 7 --output " + report2.string());
    CHECK(ok.exit_code == 0);
    json j2 = json::parse(slurp(report2.string()));
    CHECK(j2["all_pass"] == true);
    CHECK(j2["criteria"][0]["seconds"].is_number());
}

TEST_CASE("running without a subcommand is a usage error") {
    RunResult r = run_cli("");
    CHECK(r.exit_code != 0);
}
