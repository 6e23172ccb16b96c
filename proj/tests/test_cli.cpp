// End-to-end tests for the command-line tool. The binary path arrives via
// the MODAS_CLI_PATH environment variable (set by the build files), and each
// run works inside its own scratch directory.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "json.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::string cli_path() {
    const char* p = std::getenv("MODAS_CLI_PATH");
    EXPECT_NE(p, nullptr) << "MODAS_CLI_PATH must point at the built binary";
    return p ? p : "";
}

struct CmdResult {
    int code = -1;
    std::string out;
};

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Runs the tool with stdout captured and stderr discarded to a file.
CmdResult run_cli(const std::string& args) {
    static int invocation = 0;
    const fs::path dir = fs::path(testing::TempDir()) / ("cli_io_" + std::to_string(invocation++));
    fs::create_directories(dir);
    const fs::path out_file = dir / "stdout.txt";
    const std::string cmd =
        cli_path() + " " + args + " > " + out_file.string() + " 2> " + (dir / "stderr.txt").string();
    const int raw = std::system(cmd.c_str());
    CmdResult res;
    res.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    res.out = slurp(out_file);
    return res;
}

std::string write_file(const std::string& name, const std::string& content) {
    const std::string path = testing::TempDir() + name;
    std::ofstream out(path, std::ios::binary);
    out << content;
    return path;
}

std::string smoke_config(const std::string& extra_search = "") {
    return write_file("cli_smoke" + std::to_string(std::hash<std::string>{}(extra_search)) + ".json",
                      R"({"data": {"kind": "moons", "n": 120, "noise": 0.15, "seed": 9},
                          "search": {"steps": 50, "batch_size": 16, "seed": 3)" +
                          extra_search + "}}");
}

std::vector<ordered_json> read_runlog(const fs::path& path) {
    std::ifstream in(path);
    std::vector<ordered_json> records;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) records.push_back(ordered_json::parse(line));
    }
    return records;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::path(testing::TempDir()) / name;
    fs::remove_all(dir);
    return dir;
}

}  // namespace

TEST(Cli, SearchWritesAllFourArtifacts) {
    const fs::path out = fresh_dir("cli_run_artifacts");
    const CmdResult r =
        run_cli("search --config " + smoke_config() + " --out " + out.string());
    ASSERT_EQ(r.code, 0);

    EXPECT_TRUE(fs::exists(out / "genotype.json"));
    EXPECT_TRUE(fs::exists(out / "alpha.json"));
    EXPECT_TRUE(fs::exists(out / "resolved-config.json"));
    ASSERT_TRUE(fs::exists(out / "runlog.jsonl"));

    const auto records = read_runlog(out / "runlog.jsonl");
    ASSERT_EQ(records.size(), 50u);
    const std::vector<std::string> keys = {"t",     "l_val", "psi",           "nhat",
                                           "gamma", "grad_theta_norm", "clean_acc", "robust_acc"};
    for (std::size_t i = 0; i < records.size(); ++i) {
        EXPECT_EQ(records[i]["t"].get<int>(), static_cast<int>(i) + 1);
        ASSERT_EQ(records[i].size(), keys.size());
        for (const std::string& k : keys) EXPECT_TRUE(records[i].contains(k)) << k;
    }
    // spot the accuracy cadence: absent mid-run, present on schedule
    EXPECT_TRUE(records[0]["clean_acc"].is_null());
    EXPECT_FALSE(records[4]["clean_acc"].is_null());
    EXPECT_FALSE(records[49]["robust_acc"].is_null());

    const ordered_json geno = ordered_json::parse(slurp(out / "genotype.json"));
    EXPECT_EQ(geno["space"]["nodes"].get<int>(), 6);
    EXPECT_EQ(geno["edges"].size(), 9u);
}

TEST(Cli, RepeatedSearchIsByteIdentical) {
    const std::string cfg = smoke_config();
    const fs::path out1 = fresh_dir("cli_det_a");
    const fs::path out2 = fresh_dir("cli_det_b");
    ASSERT_EQ(run_cli("search --config " + cfg + " --out " + out1.string()).code, 0);
    ASSERT_EQ(run_cli("search --config " + cfg + " --out " + out2.string()).code, 0);

    EXPECT_EQ(slurp(out1 / "genotype.json"), slurp(out2 / "genotype.json"));
    EXPECT_EQ(slurp(out1 / "runlog.jsonl"), slurp(out2 / "runlog.jsonl"));
    EXPECT_EQ(slurp(out1 / "alpha.json"), slurp(out2 / "alpha.json"));
    EXPECT_EQ(slurp(out1 / "resolved-config.json"), slurp(out2 / "resolved-config.json"));

    // a different seed must change the trajectory
    const fs::path out3 = fresh_dir("cli_det_c");
    ASSERT_EQ(run_cli("search --config " + cfg + " --out " + out3.string() + " --seed 99").code, 0);
    EXPECT_NE(slurp(out1 / "runlog.jsonl"), slurp(out3 / "runlog.jsonl"));
}

TEST(Cli, MgdaOffForcesEqualWeights) {
    const std::string cfg = smoke_config(R"(, "use_mgda": false)");
    const fs::path out = fresh_dir("cli_mgda_off");
    ASSERT_EQ(run_cli("search --config " + cfg + " --out " + out.string()).code, 0);
    const auto records = read_runlog(out / "runlog.jsonl");
    ASSERT_EQ(records.size(), 50u);
    for (const auto& r : records) EXPECT_EQ(r["gamma"].get<double>(), 0.5);

    // the --no-mgda flag must behave exactly like the config key
    const fs::path out2 = fresh_dir("cli_mgda_flag");
    ASSERT_EQ(run_cli("search --config " + smoke_config() + " --out " + out2.string() +
                      " --no-mgda")
                  .code,
              0);
    EXPECT_EQ(slurp(out / "runlog.jsonl"), slurp(out2 / "runlog.jsonl"));
}

TEST(Cli, EvalAtZeroRadiusTiesRobustToClean) {
    const std::string cfg = write_file(
        "cli_eval_eps0.json",
        R"({"data": {"kind": "moons", "n": 120, "noise": 0.15, "seed": 9},
            "search": {"steps": 60, "batch_size": 16, "seed": 3},
            "attack": {"epsilon": 0.0}})");
    const fs::path out = fresh_dir("cli_eval_run");
    ASSERT_EQ(run_cli("search --config " + cfg + " --out " + out.string()).code, 0);

    const CmdResult r = run_cli("eval --config " + cfg + " --genotype " +
                                (out / "genotype.json").string());
    ASSERT_EQ(r.code, 0);
    const ordered_json metrics = ordered_json::parse(r.out);
    ASSERT_EQ(metrics.size(), 4u);
    ASSERT_TRUE(metrics.contains("clean_err"));
    ASSERT_TRUE(metrics.contains("param_count"));
    ASSERT_TRUE(metrics.contains("head_param_count"));
    ASSERT_TRUE(metrics.contains("robust_acc"));
    // zero-radius attack cannot move anything
    EXPECT_EQ(metrics["robust_acc"].get<double>(), 1.0 - metrics["clean_err"].get<double>());
    EXPECT_GE(metrics["param_count"].get<long>(), 0);
    EXPECT_GT(metrics["head_param_count"].get<long>(), 0);
}

TEST(Cli, ExportReproducesTheSearchGenotype) {
    const std::string cfg = smoke_config();
    const fs::path out = fresh_dir("cli_export_run");
    ASSERT_EQ(run_cli("search --config " + cfg + " --out " + out.string()).code, 0);

    const CmdResult r =
        run_cli("export --config " + cfg + " --alpha " + (out / "alpha.json").string());
    ASSERT_EQ(r.code, 0);
    EXPECT_EQ(r.out, slurp(out / "genotype.json"));

    // --out writes the same bytes to a file instead
    const fs::path exported = fs::path(testing::TempDir()) / "cli_exported_genotype.json";
    ASSERT_EQ(run_cli("export --config " + cfg + " --alpha " + (out / "alpha.json").string() +
                      " --out " + exported.string())
                  .code,
              0);
    EXPECT_EQ(slurp(exported), slurp(out / "genotype.json"));
}

TEST(Cli, AttackSweepIsOrderedAndAnchored) {
    const std::string cfg = smoke_config();
    const fs::path out = fresh_dir("cli_attack_run");
    ASSERT_EQ(run_cli("search --config " + cfg + " --out " + out.string()).code, 0);

    const CmdResult r = run_cli("attack --config " + cfg + " --genotype " +
                                (out / "genotype.json").string());
    ASSERT_EQ(r.code, 0);
    const ordered_json report = ordered_json::parse(r.out);
    ASSERT_EQ(report["sweep"].size(), 5u);
    EXPECT_EQ(report["sweep"][0]["epsilon"].get<double>(), 0.0);
    EXPECT_EQ(report["sweep"][2]["epsilon"].get<double>(), 0.1);
    // the zero-radius row is exactly the clean accuracy
    EXPECT_EQ(report["sweep"][0]["robust_acc"].get<double>(),
              1.0 - report["clean_err"].get<double>());
    for (int k = 1; k < 5; ++k) {
        EXPECT_LE(report["sweep"][k]["robust_acc"].get<double>(),
                  report["sweep"][k - 1]["robust_acc"].get<double>() + 1e-12);
    }
}

TEST(Cli, GradcheckPassesAndTighteningFails) {
    const CmdResult ok = run_cli("gradcheck");
    EXPECT_EQ(ok.code, 0);
    int pass_lines = 0;
    std::istringstream ss(ok.out);
    std::string line;
    while (std::getline(ss, line)) {
        if (line.find("PASS") != std::string::npos) ++pass_lines;
    }
    EXPECT_EQ(pass_lines, 5);  // the documented oracle list

    const CmdResult tight = run_cli("gradcheck --tol 1e-15");
    EXPECT_EQ(tight.code, 1);
    EXPECT_NE(tight.out.find("FAIL"), std::string::npos);
}

TEST(Cli, UsageAndConfigProblemsExitTwo) {
    EXPECT_EQ(run_cli("").code, 2);                      // missing subcommand
    EXPECT_EQ(run_cli("frobnicate").code, 2);            // unknown subcommand
    EXPECT_EQ(run_cli("search --config /no/such/file.json --out /tmp/cli_nowhere").code, 2);
    EXPECT_EQ(run_cli("--help").code, 0);

    const std::string bad = write_file("cli_bad_key.json", R"({"bogus": 1})");
    EXPECT_EQ(run_cli("search --config " + bad + " --out /tmp/cli_nowhere").code, 2);

    // a genotype from a different space is a config problem, not a crash
    const std::string cfg = smoke_config();
    const fs::path out = fresh_dir("cli_mismatch_run");
    ASSERT_EQ(run_cli("search --config " + cfg + " --out " + out.string()).code, 0);
    const std::string wide = write_file(
        "cli_wide_space.json",
        R"({"data": {"kind": "moons", "n": 120, "seed": 9},
            "space": {"width": 3}, "search": {"steps": 10, "batch_size": 16}})");
    EXPECT_EQ(run_cli("eval --config " + wide + " --genotype " +
                      (out / "genotype.json").string())
                  .code,
              2);
}

TEST(Cli, DivergenceExitsThreeWithStepIndex) {
    const std::string cfg = write_file(
        "cli_diverge.json",
        R"({"data": {"kind": "moons", "n": 60, "seed": 9},
            "search": {"steps": 30, "eta_theta": 1000000.0, "batch_size": 16}})");
    const fs::path out = fresh_dir("cli_diverge_run");
    static int invocation = 9000;
    const fs::path dir = fs::path(testing::TempDir()) / ("cli_io_" + std::to_string(invocation++));
    fs::create_directories(dir);
    const std::string cmd = cli_path() + " search --config " + cfg + " --out " + out.string() +
                            " > /dev/null 2> " + (dir / "stderr.txt").string();
    const int raw = std::system(cmd.c_str());
    EXPECT_EQ(WEXITSTATUS(raw), 3);
    const std::string err = slurp(dir / "stderr.txt");
    EXPECT_NE(err.find("step"), std::string::npos) << err;
    // the partial run directory still holds a replayable config
    EXPECT_TRUE(fs::exists(out / "resolved-config.json"));
}
