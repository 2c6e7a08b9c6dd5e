/// @file test_cli.cpp
/// @brief Drives the command line tool through its subcommands end to end and
///        checks exit codes, emitted files and the resolved-config echo.

#include <catch2/catch_amalgamated.hpp>

#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Scratch directory for one test case, removed on destruction.
struct ScratchDir {
    fs::path path;

    ScratchDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("afb_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~ScratchDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

struct RunResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string first_line(const std::string& s) {
    return s.substr(0, s.find('\n'));
}

/// Last nonempty line; errors land after the config echo on stderr.
std::string last_line(const std::string& s) {
    const std::size_t end = s.find_last_not_of('\n');
    if (end == std::string::npos)
        return {};
    const std::size_t start = s.find_last_of('\n', end);
    const std::size_t from = start == std::string::npos ? 0 : start + 1;
    return s.substr(from, end - from + 1);
}

/// Runs the tool with a shell argument string, capturing exit code and both
/// streams. An env prefix like "AFB_SEED=7" applies to the child only.
RunResult run_cli(const ScratchDir& dir, const std::string& args,
                  const std::string& env = "") {
    const fs::path out_file = dir.path / "run_stdout.txt";
    const fs::path err_file = dir.path / "run_stderr.txt";
    std::string cmd;
    if (!env.empty())
        cmd += env + " ";
    cmd += std::string(AFB_CLI_PATH) + " " + args;
    cmd += " >" + out_file.string() + " 2>" + err_file.string();
    const int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    REQUIRE(WIFEXITED(status));
    RunResult r;
    r.exit_code = WEXITSTATUS(status);
    r.out = slurp(out_file);
    r.err = slurp(err_file);
    return r;
}

} // namespace

// ============================================================================
// Argument handling
// ============================================================================

TEST_CASE("help exits cleanly", "[cli]") {
    ScratchDir dir;
    const RunResult r = run_cli(dir, "eval --help");
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.out.find("--test-dir") != std::string::npos);
}

TEST_CASE("usage errors exit with code 1", "[cli]") {
    ScratchDir dir;

    SECTION("unknown flag") {
        const RunResult r = run_cli(dir, "gradcheck --bogus 3");
        REQUIRE(r.exit_code == 1);
        REQUIRE(json::parse(first_line(r.err)).at("type") == "usage");
    }
    SECTION("missing required option") {
        const RunResult r = run_cli(dir, "fit-stats --out stats.json");
        REQUIRE(r.exit_code == 1);
    }
    SECTION("no subcommand") {
        const RunResult r = run_cli(dir, "");
        REQUIRE(r.exit_code == 1);
    }
    SECTION("model name outside the known set") {
        const RunResult r = run_cli(dir, "gradcheck --model perceptron");
        REQUIRE(r.exit_code == 1);
    }
}

TEST_CASE("data errors exit with code 2", "[cli]") {
    ScratchDir dir;
    const fs::path missing = dir.path / "no_such_dir";
    const RunResult r = run_cli(dir, "fit-stats --train-dir " + missing.string() +
                                         " --out " + (dir.path / "s.json").string());
    REQUIRE(r.exit_code == 2);
    REQUIRE(json::parse(last_line(r.err)).at("type") == "data");
}

// ============================================================================
// Seed resolution
// ============================================================================

TEST_CASE("AFB_SEED overrides the seed flag", "[cli]") {
    ScratchDir dir;
    const std::string gen_args = "gen-synthetic --case cylinder --n-samples 1 --seed 3 "
                                 "--segments 12 --volume-nodes 36 --out-dir " +
                                 (dir.path / "d").string();

    const RunResult base = run_cli(dir, gen_args);
    REQUIRE(base.exit_code == 0);
    REQUIRE(json::parse(first_line(base.err)).at("seed").get<std::uint64_t>() == 3);

    const RunResult forced = run_cli(dir, gen_args, "AFB_SEED=7");
    REQUIRE(forced.exit_code == 0);
    REQUIRE(json::parse(first_line(forced.err)).at("seed").get<std::uint64_t>() == 7);

    const RunResult broken = run_cli(dir, gen_args, "AFB_SEED=7q");
    REQUIRE(broken.exit_code == 2);
}

// ============================================================================
// End-to-end pipeline
// ============================================================================

TEST_CASE("subcommands chain into a full pipeline", "[cli]") {
    ScratchDir dir;
    const std::string data = (dir.path / "data").string();
    const std::string stats = (dir.path / "stats.json").string();
    const std::string ckpt = (dir.path / "model.ckpt").string();
    const std::string report = (dir.path / "report.csv").string();

    const RunResult gen =
        run_cli(dir, "gen-synthetic --case cylinder --n-samples 5 --seed 11 "
                     "--segments 12 --volume-nodes 36 --out-dir " +
                         data);
    REQUIRE(gen.exit_code == 0);
    REQUIRE(fs::exists(dir.path / "data" / "case_0000.afm"));
    REQUIRE(fs::exists(dir.path / "data" / "case_0004.afm"));

    const RunResult graph =
        run_cli(dir, "build-graph --in " + data + "/case_0000.afm --radius 0.3 "
                     "--max-neighbors 16 --out " +
                         (dir.path / "graph.json").string());
    REQUIRE(graph.exit_code == 0);
    {
        const json g = json::parse(slurp(dir.path / "graph.json"));
        REQUIRE(g.at("node_count").get<std::size_t>() == 48);
        REQUIRE(g.at("radius").get<double>() == 0.3);
        REQUIRE(g.at("edge_count").get<std::size_t>() > 0);
        REQUIRE(g.at("edges").size() == g.at("edge_count").get<std::size_t>());
    }

    const RunResult fit = run_cli(dir, "fit-stats --train-dir " + data + " --out " + stats);
    REQUIRE(fit.exit_code == 0);
    REQUIRE(fs::exists(stats));

    const RunResult train =
        run_cli(dir, "train --train-dir " + data + " --stats " + stats +
                         " --model graphsage --epochs 4 --subsample 32 --radius 0.3 "
                         "--max-neighbors 16 --seed 1 --deterministic --out " +
                         ckpt);
    REQUIRE(train.exit_code == 0);
    REQUIRE(fs::exists(ckpt));
    REQUIRE(fs::exists(ckpt + ".config.json"));
    {
        std::ifstream hist(ckpt + ".history.jsonl");
        std::string line;
        std::size_t lines = 0;
        double last_loss = 0.0;
        while (std::getline(hist, line)) {
            const json h = json::parse(line);
            last_loss = h.at("loss").get<double>();
            ++lines;
        }
        REQUIRE(lines == 4);
        REQUIRE(std::isfinite(last_loss));
    }

    const RunResult ev =
        run_cli(dir, "eval --test-dir " + data + " --ckpt " + ckpt + " --stats " + stats +
                         " --radius 0.3 --max-neighbors 16 --deterministic --report " +
                         report);
    REQUIRE(ev.exit_code == 0);
    {
        const std::string csv = slurp(report);
        REQUIRE(csv.rfind("model,lv_mean,lv_std,ls_mean,ls_std,"
                          "xwss_mse_mean,xwss_mse_std,ywss_mse_mean,ywss_mse_std,"
                          "xwp_mse_mean,xwp_mse_std,ywp_mse_mean,ywp_mse_std,"
                          "param_count,train_time_s,infer_time_s_per_sample\n",
                          0) == 0);
        REQUIRE(csv.find("graphsage,") != std::string::npos);
        const json rep = json::parse(slurp(report + ".json"));
        REQUIRE(rep.at("rows").size() == 1);
        REQUIRE(rep.at("rows")[0].at("param_count").get<std::uint64_t>() == 29028);
        const std::string samples_csv = slurp(report + ".samples.csv");
        REQUIRE(samples_csv.rfind("model,seed,sample,lv,ls,"
                                  "xwss_se,ywss_se,xwp_se,ywp_se,infer_time_s\n",
                                  0) == 0);
    }

    const RunResult forces =
        run_cli(dir, "forces --sample " + data + "/case_0001.afm --field true --out " +
                         (dir.path / "forces.csv").string());
    REQUIRE(forces.exit_code == 0);
    {
        const json f = json::parse(first_line(forces.out));
        REQUIRE(std::isfinite(f.at("drag").get<double>()));
        REQUIRE(std::isfinite(f.at("lift").get<double>()));
        REQUIRE(f.at("integral_tau").size() == 2);
        const std::string csv = slurp(dir.path / "forces.csv");
        REQUIRE(csv.rfind("node,x,y,tau_x,tau_y,wp_x,wp_y\n", 0) == 0);
    }

    const RunResult pred_forces =
        run_cli(dir, "forces --sample " + data + "/case_0001.afm --field " + ckpt +
                         " --stats " + stats + " --radius 0.3 --max-neighbors 16 "
                         "--out " +
                         (dir.path / "forces_pred.csv").string());
    REQUIRE(pred_forces.exit_code == 0);
    REQUIRE(std::isfinite(
        json::parse(first_line(pred_forces.out)).at("lift").get<double>()));

    const RunResult no_stats =
        run_cli(dir, "forces --sample " + data + "/case_0001.afm --field " + ckpt +
                         " --out " + (dir.path / "forces_bad.csv").string());
    REQUIRE(no_stats.exit_code == 2);
}

TEST_CASE("gradient check subcommand reports a pass", "[cli]") {
    ScratchDir dir;
    const RunResult r = run_cli(dir, "gradcheck --model graphsage --seed 4 --checks 60");
    REQUIRE(r.exit_code == 0);
    const json j = json::parse(first_line(r.out));
    REQUIRE(j.at("model") == "graphsage");
    // At least one entry per tensor is probed, so the count can overshoot.
    REQUIRE(j.at("checked").get<std::size_t>() >= 60);
    REQUIRE(j.at("passed").get<bool>());
    REQUIRE(j.at("max_rel_err").get<double>() < 1e-4);
}

TEST_CASE("training without a stats file writes one next to the checkpoint", "[cli]") {
    ScratchDir dir;
    const std::string data = (dir.path / "data").string();
    const std::string ckpt = (dir.path / "m.ckpt").string();
    REQUIRE(run_cli(dir, "gen-synthetic --case cylinder --n-samples 2 --seed 21 "
                         "--segments 12 --volume-nodes 36 --out-dir " +
                             data)
                .exit_code == 0);
    const RunResult train =
        run_cli(dir, "train --train-dir " + data +
                         " --model graphsage --epochs 2 --subsample 24 --radius 0.3 "
                         "--max-neighbors 16 --deterministic --out " +
                         ckpt);
    REQUIRE(train.exit_code == 0);
    REQUIRE(fs::exists(ckpt + ".stats.json"));
    const json cfg = json::parse(first_line(train.err));
    REQUIRE(cfg.at("subcommand") == "train");
    REQUIRE(cfg.at("threads").get<unsigned>() == 1);
}
