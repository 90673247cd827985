#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "homopursuit/cli.hpp"
#include "homopursuit/io.hpp"
#include "support.hpp"

using namespace homopursuit;
using homopursuit::io::json;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

fs::path write_config(const fs::path& dir, const std::string& name, const json& j) {
    const fs::path p = dir / name;
    io::write_json(p, j);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

double metric(const fs::path& metrics_csv, const std::string& column) {
    std::istringstream in(slurp(metrics_csv));
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    std::istringstream hs(header), rs(row);
    std::string h, v;
    while (std::getline(hs, h, ',') && std::getline(rs, v, ',')) {
        if (h == column) return std::strtod(v.c_str(), nullptr);
    }
    ADD_FAILURE() << "no column " << column;
    return 0.0;
}

const json kDatasetCfg = {{"experiment", "dataset"}, {"p1", 6}, {"p2", 6}, {"n", 3}, {"m", 40},
                          {"ranks", {{"r", 1}, {"K1", 2}, {"K2", 2}}}, {"core_scale", {5.0}},
                          {"noise_sd", 0.0}, {"rbar", 3}, {"seed", 21}};

// Noiseless synthetic dataset shared by the fit / eval tests.
fs::path dataset_root() {
    static const fs::path root = [] {
        const fs::path dir = hp_test::scratch_dir("cli_dataset");
        const fs::path cfg = write_config(dir, "sim.json", kDatasetCfg);
        const Result r = run({"simulate", "--config", cfg.string(), "--out", (dir / "sim").string()});
        EXPECT_EQ(r.code, 0) << r.err;
        return dir / "sim";
    }();
    return root;
}

}  // namespace

TEST(Cli, UsageErrors) {
    EXPECT_EQ(run({}).code, 2);
    EXPECT_EQ(run({"frobnicate"}).code, 2);
    EXPECT_EQ(run({"simulate"}).code, 2);
    EXPECT_EQ(run({"simulate", "--threads", "0", "--config", "x", "--out", "y"}).code, 2);
    EXPECT_EQ(run({"fit", "--help"}).code, 0);
}

TEST(Cli, MalformedConfigWritesNothing) {
    const fs::path dir = hp_test::scratch_dir("cli_malformed");
    std::ofstream(dir / "bad.json") << "{\"experiment\": ";
    const Result r = run({"simulate", "--config", (dir / "bad.json").string(), "--out", (dir / "out").string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_FALSE(fs::exists(dir / "out"));
    EXPECT_NE(r.err.find("bad.json"), std::string::npos);
}

TEST(Cli, UnknownKeyRejected) {
    const fs::path dir = hp_test::scratch_dir("cli_unknown");
    json cfg = kDatasetCfg;
    cfg["nosie_sd"] = 1.0;
    const fs::path p = write_config(dir, "c.json", cfg);
    const Result r = run({"simulate", "--config", p.string(), "--out", (dir / "out").string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("nosie_sd"), std::string::npos);
    EXPECT_FALSE(fs::exists(dir / "out"));
}

TEST(Cli, InvalidCellRejectedBeforeOutput) {
    const fs::path dir = hp_test::scratch_dir("cli_cells");
    const json cfg = {{"experiment", "rank"}, {"p1", 6}, {"p2", 6}, {"grid", {{"n", {4, 0}}}}};
    const fs::path p = write_config(dir, "c.json", cfg);
    EXPECT_EQ(run({"simulate", "--config", p.string(), "--out", (dir / "out").string()}).code, 2);
    EXPECT_FALSE(fs::exists(dir / "out"));
}

TEST(Cli, SimulateDatasetIsSelfDescribing) {
    const fs::path sim = dataset_root();
    for (const char* f : {"manifest.json", "config.json", "records.json", "summary.csv", "data/manifest.json",
                          "data/X_3.csv", "truth/theta.bin", "truth/theta.meta.json"}) {
        EXPECT_TRUE(fs::exists(sim / f)) << f;
    }
    const json man = io::read_json(sim / "manifest.json");
    EXPECT_EQ(man["command"], "simulate");
    EXPECT_EQ(man["status"], "ok");
    EXPECT_EQ(man["version"], io::kVersion);
    EXPECT_EQ(man["seed"], 21);
    EXPECT_FALSE(man["finished_at"].is_null());
    const json echo = io::read_json(sim / "config.json");
    EXPECT_EQ(echo["n"], 3);
    EXPECT_EQ(echo["noise_sd"], 0.0);
    EXPECT_EQ(slurp(sim / "summary.csv").substr(0, 36), "n,m,p1,p2,model,setting,seed,norm_B\n");
}

TEST(Cli, FitEvalNoiselessAutoRanks) {
    const fs::path sim = dataset_root();
    const fs::path dir = hp_test::scratch_dir("cli_fit_auto");
    const fs::path cfg = write_config(dir, "fit.json", {{"algorithm", "homo"}, {"ranks", "auto"}, {"rbar", 3},
                                                        {"tol", 0.0}, {"max_iters", 400}});
    Result r = run({"fit", "--config", cfg.string(), "--data", (sim / "data").string(), "--out",
                    (dir / "fit").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const json sel = io::read_json(dir / "fit" / "selection.json");
    EXPECT_EQ(sel["r"], 1);
    EXPECT_EQ(sel["K1"], 2);
    EXPECT_EQ(sel["K2"], 2);
    for (const char* f : {"theta.bin", "theta.meta.json", "loss_trace.csv", "summary.csv", "config.json"}) {
        EXPECT_TRUE(fs::exists(dir / "fit" / f)) << f;
    }
    EXPECT_EQ(slurp(dir / "fit" / "loss_trace.csv").substr(0, 10), "iter,loss\n");

    r = run({"eval", "--fit", (dir / "fit").string(), "--truth", (sim / "truth").string(), "--out",
             (dir / "eval").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_LT(metric(dir / "eval" / "metrics.csv", "relative_error"), 1e-6);
    EXPECT_LT(metric(dir / "eval" / "metrics.csv", "proj_error_C"), 1e-10);
}

TEST(Cli, EvalTruthAgainstItselfAndAGauge) {
    const fs::path sim = dataset_root();
    const fs::path dir = hp_test::scratch_dir("cli_eval");
    Result r = run({"eval", "--fit", (sim / "truth").string(), "--truth", (sim / "truth").string(), "--out",
                    (dir / "self").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const fs::path m = dir / "self" / "metrics.csv";
    EXPECT_LT(metric(m, "total_error"), 1e-10);
    EXPECT_LT(metric(m, "proj_error_C"), 1e-10);
    EXPECT_LT(metric(m, "dist_sq"), 1e-10);
    EXPECT_NE(slurp(m).find("upper_bound"), std::string::npos);

    std::mt19937_64 rng(5);
    const io::ThetaFiles truth = io::read_theta(sim / "truth");
    const hp_test::Gauge g = hp_test::random_gauge(2, 2, 1, 3, rng);
    io::write_theta(dir / "gauged", hp_test::apply_gauge(truth.shared, g));
    r = run({"eval", "--fit", (dir / "gauged").string(), "--truth", (sim / "truth").string(), "--out",
             (dir / "gauge_eval").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const fs::path mg = dir / "gauge_eval" / "metrics.csv";
    EXPECT_LT(metric(mg, "total_error"), 1e-10);
    EXPECT_LT(metric(mg, "proj_error_C"), 1e-10);
    EXPECT_LT(metric(mg, "proj_error_R"), 1e-10);
}

TEST(Cli, EvalDimensionMismatch) {
    const fs::path sim = dataset_root();
    const fs::path dir = hp_test::scratch_dir("cli_eval_dims");
    std::mt19937_64 rng(6);
    io::write_theta(dir / "other", hp_test::random_params(5, 6, 2, 2, 1, 3, rng));
    const Result r = run({"eval", "--fit", (dir / "other").string(), "--truth", (sim / "truth").string(), "--out",
                          (dir / "e").string()});
    EXPECT_EQ(r.code, 2);
}

TEST(Cli, FitMissingDatasetFileNamed) {
    const fs::path sim = dataset_root();
    const fs::path dir = hp_test::scratch_dir("cli_missing");
    fs::copy(sim / "data", dir / "data");
    fs::remove(dir / "data" / "X_2.csv");
    const fs::path cfg = write_config(dir, "fit.json", {{"algorithm", "homo"}, {"ranks", {{"r", 1}, {"K1", 2}, {"K2", 2}}}});
    const Result r = run({"fit", "--config", cfg.string(), "--data", (dir / "data").string(), "--out",
                          (dir / "fit").string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("X_2.csv"), std::string::npos);
}

TEST(Cli, FitConfigValidation) {
    const fs::path sim = dataset_root();
    const fs::path dir = hp_test::scratch_dir("cli_fitcfg");
    const std::string data = (sim / "data").string();
    const auto code = [&](const json& cfg) {
        const fs::path p = write_config(dir, "c.json", cfg);
        return run({"fit", "--config", p.string(), "--data", data, "--out", (dir / "o").string()}).code;
    };
    EXPECT_EQ(code({{"algorithm", "homo-sparse"}, {"ranks", "auto"}}), 2);
    EXPECT_EQ(code({{"algorithm", "homo"}, {"sparsity", {{"s1", 2}, {"s2", 2}}}}), 2);
    EXPECT_EQ(code({{"algorithm", "homo"}, {"ranks", {{"r", 1}}}}), 2);
    EXPECT_EQ(code({{"algorithm", "homo"}, {"ranks", {{"r", 1}, {"K1", 9}, {"K2", 2}}}}), 2);
    EXPECT_EQ(code({{"algorithm", "lasso"}}), 2);
    EXPECT_EQ(code({{"algorithm", "homo"}, {"ranks", {{"r", 1}, {"K1", 2}, {"K2", 2}}}, {"damping", -1.0}}), 2);
    EXPECT_EQ(code({{"algorithm", "homo"}, {"step", 0.1}}), 2);
}

TEST(Cli, HeteroOnSingleIndividual) {
    const fs::path dir = hp_test::scratch_dir("cli_n1");
    json cfg = kDatasetCfg;
    cfg["n"] = 1;
    cfg["m"] = 80;
    cfg["ranks"] = {{"r", 1}, {"K1", 1}, {"K2", 1}};
    const fs::path sc = write_config(dir, "sim.json", cfg);
    ASSERT_EQ(run({"simulate", "--config", sc.string(), "--out", (dir / "sim").string()}).code, 0);
    const fs::path fc = write_config(dir, "fit.json", {{"algorithm", "hetero"}, {"ranks", {{"r", 1}}}, {"tol", 0.0},
                                                       {"max_iters", 300}});
    const Result r = run({"fit", "--config", fc.string(), "--data", (dir / "sim" / "data").string(), "--out",
                          (dir / "fit").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const io::ThetaFiles t = io::read_theta(dir / "fit");
    EXPECT_EQ(t.layout, "individual");
    EXPECT_EQ(t.individual.n(), 1);
    EXPECT_TRUE(fs::exists(dir / "fit" / "individual_fits.csv"));
    const Result e = run({"eval", "--fit", (dir / "fit").string(), "--truth", (dir / "sim" / "truth").string(),
                          "--out", (dir / "eval").string()});
    ASSERT_EQ(e.code, 0) << e.err;
    EXPECT_LT(metric(dir / "eval" / "metrics.csv", "relative_error"), 1e-6);
    EXPECT_NE(slurp(dir / "eval" / "metrics.csv").find("unavailable"), std::string::npos);
}

TEST(Cli, SparseFitWritesActiveRows) {
    const fs::path sim = dataset_root();
    const fs::path dir = hp_test::scratch_dir("cli_sparse");
    const fs::path fc = write_config(dir, "fit.json", {{"algorithm", "homo-sparse"},
                                                       {"ranks", {{"r", 1}, {"K1", 2}, {"K2", 2}}},
                                                       {"sparsity", {{"s1", 6}, {"s2", 6}}}});
    const Result r = run({"fit", "--config", fc.string(), "--data", (sim / "data").string(), "--out",
                          (dir / "fit").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const json rows = io::read_json(dir / "fit" / "active_rows.json");
    EXPECT_EQ(rows["S1"].size(), 6u);
}

TEST(Cli, DivergenceExitCode) {
    const fs::path sim = dataset_root();
    const fs::path dir = hp_test::scratch_dir("cli_diverge");
    const fs::path fc = write_config(dir, "fit.json", {{"algorithm", "homo"}, {"ranks", {{"r", 1}, {"K1", 2}, {"K2", 2}}},
                                                       {"eta", 1e8}, {"max_iters", 200}});
    const Result r = run({"fit", "--config", fc.string(), "--data", (sim / "data").string(), "--out",
                          (dir / "fit").string()});
    EXPECT_EQ(r.code, 4);
    EXPECT_NE(r.err.find("eta"), std::string::npos);
    EXPECT_EQ(io::read_json(dir / "fit" / "manifest.json")["status"], "failed");
}

TEST(Cli, RanksCommand) {
    const fs::path sim = dataset_root();
    const fs::path dir = hp_test::scratch_dir("cli_ranks");
    const fs::path fc = write_config(dir, "r.json", {{"rbar", 3}});
    const Result r = run({"ranks", "--config", fc.string(), "--data", (sim / "data").string(), "--out",
                          (dir / "out").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(slurp(dir / "out" / "summary.csv"), "r,K1,K2\n1,2,2\n");
    EXPECT_EQ(io::read_json(dir / "out" / "ranks.json")["ratios_r"].size(), 2u);
}

TEST(Cli, RankAndRateSummariesAreThreadIndependent) {
    const fs::path dir = hp_test::scratch_dir("cli_threads");
    const json rank = {{"experiment", "rank"}, {"p1", 6}, {"p2", 6}, {"n", 4}, {"m", 60}, {"reps", 3},
                       {"ranks", {{"r", 1}, {"K1", 2}, {"K2", 2}}}, {"core_scale", {5.0}}, {"rbar", 3},
                       {"support", 4}, {"max_iters", 50}, {"grid", {{"setting", {"dense", "first_five_rows"}}}}};
    const json rate = {{"experiment", "rate"}, {"p1", 6}, {"p2", 6}, {"n", 4}, {"m", 60}, {"reps", 2},
                       {"ranks", {{"r", 1}, {"K1", 2}, {"K2", 2}}}, {"core_scale", {5.0}}, {"rbar", 3},
                       {"max_iters", 50}, {"axis", "n"}, {"values", {4, 8}}, {"oracle_ranks", true}};
    for (const auto& [name, cfg] : {std::pair{"rank", rank}, std::pair{"rate", rate}}) {
        const fs::path p = write_config(dir, std::string(name) + ".json", cfg);
        std::vector<std::string> outputs;
        for (const char* threads : {"1", "3"}) {
            const fs::path out = dir / (std::string(name) + threads);
            const Result r = run({"simulate", "--config", p.string(), "--out", out.string(), "--threads", threads,
                                  "--seed", "77"});
            ASSERT_EQ(r.code, 0) << r.err;
            outputs.push_back(slurp(out / "summary.csv"));
        }
        EXPECT_EQ(outputs[0], outputs[1]) << name;
        EXPECT_FALSE(outputs[0].empty());
    }
    EXPECT_EQ(io::read_json(dir / "rank1" / "manifest.json")["seed"], 77);
    EXPECT_TRUE(fs::exists(dir / "rate1" / "slopes.csv"));
    EXPECT_EQ(slurp(dir / "rank1" / "summary.csv").substr(0, 40), "n,m,setting,reps,failures,prop_correct\n4");
}

TEST(Cli, BinaryExitCodes) {
    const fs::path dir = hp_test::scratch_dir("cli_binary");
    std::ofstream(dir / "bad.json") << "[";
    const std::string bin = HOMOPURSUIT_CLI_PATH;
    const auto status = [&](const std::string& args) {
        const int s = std::system((bin + " " + args + " >/dev/null 2>&1").c_str());
        return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
    };
    EXPECT_EQ(status("simulate --config " + (dir / "bad.json").string() + " --out " + (dir / "o").string()), 2);
    EXPECT_EQ(status("--help"), 0);
}
