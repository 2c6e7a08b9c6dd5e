/// @file test_pipeline.cpp
/// @brief Composite loss contract, feature gathering, the training loop and
///        report aggregation / serialization.

#include <catch2/catch_amalgamated.hpp>

#include <afb/afb.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include <json.hpp>

using namespace afb;
namespace fs = std::filesystem;

namespace {

std::vector<MeshSample> tiny_corpus(std::size_t count, std::uint64_t seed) {
    std::vector<MeshSample> out;
    Rng rng(mix_seed(seed, seed_tag::gen_case));
    for (std::size_t i = 0; i < count; ++i) {
        CaseSpec spec;
        spec.kind = CaseSpec::Kind::cylinder;
        spec.u_inf = rng.uniform(10.0, 50.0);
        spec.circulation = rng.uniform(-10.0, 10.0);
        spec.scale = 0.5;
        spec.segments = 16;
        spec.volume_nodes = 64;
        spec.seed = rng.next_u64();
        spec.nut_bump = true;
        out.push_back(gen_case(spec));
    }
    return out;
}

fs::path temp_path(const std::string& stem) {
    static int counter = 0;
    return fs::temp_directory_path() /
           (stem + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
}

} // namespace

// ============================================================================
// Loss contract
// ============================================================================

TEST_CASE("composite loss equals an independent double loop", "[pipeline]") {
    Rng rng(1);
    Matrix pred = Matrix::uniform(20, 4, -2.0, 2.0, rng);
    Matrix target = Matrix::uniform(20, 4, -2.0, 2.0, rng);
    std::vector<std::uint8_t> mask(20, 0);
    for (int i : {2, 5, 11, 17})
        mask[i] = 1;

    for (double lambda : {0.0, 1.0, 10.0}) {
        const LossParts parts = compute_loss(pred, target, mask, lambda);

        double sv = 0.0, ss = 0.0;
        for (int i = 0; i < 20; ++i) {
            double d2 = 0.0;
            for (int c = 0; c < 4; ++c)
                d2 += (pred.at(i, c) - target.at(i, c)) * (pred.at(i, c) - target.at(i, c));
            (mask[i] ? ss : sv) += d2;
        }
        REQUIRE(parts.volume == Catch::Approx(sv / 16.0).epsilon(1e-14));
        REQUIRE(parts.surface == Catch::Approx(ss / 4.0).epsilon(1e-14));
        REQUIRE(parts.total == parts.volume + lambda * parts.surface);
    }
}

TEST_CASE("zero lambda ignores surface predictions entirely", "[pipeline]") {
    Rng rng(2);
    Matrix pred = Matrix::uniform(12, 4, -1.0, 1.0, rng);
    Matrix target = Matrix::uniform(12, 4, -1.0, 1.0, rng);
    std::vector<std::uint8_t> mask(12, 0);
    mask[3] = mask[8] = 1;

    const LossParts before = compute_loss(pred, target, mask, 0.0);
    Matrix perturbed = pred;
    perturbed.at(3, 0) += 100.0;
    perturbed.at(8, 2) -= 50.0;
    const LossParts after = compute_loss(perturbed, target, mask, 0.0);
    REQUIRE(after.total == before.total);
    REQUIRE(after.volume == before.volume);

    SECTION("the tape loss agrees with the value-level one") {
        Tape t;
        double lv = 0.0, ls = 0.0;
        const int node = t.masked_sq_loss(t.leaf(pred), target, mask, 0.0, &lv, &ls);
        REQUIRE(t.value(node).at(0, 0) == before.total);
        REQUIRE(lv == before.volume);
        REQUIRE(ls == before.surface);
    }
}

TEST_CASE("loss requires a volume node and tolerates no surface", "[pipeline]") {
    Matrix pred = Matrix::zeros(3, 4);
    Matrix target = Matrix::zeros(3, 4);
    REQUIRE_THROWS_AS(
        compute_loss(pred, target, std::vector<std::uint8_t>(3, 1), 1.0),
        ArgumentError);
    const LossParts parts =
        compute_loss(pred, target, std::vector<std::uint8_t>(3, 0), 7.0);
    REQUIRE(parts.surface == 0.0);
}

// ============================================================================
// Feature gathering
// ============================================================================

TEST_CASE("gathered nodes carry normalized features and targets", "[pipeline]") {
    const auto corpus = tiny_corpus(2, 3);
    const NormStats st = fit_norm_stats(corpus);
    const MeshSample& s = corpus[0];
    const std::vector<std::uint32_t> idx{0, 5, 9};
    const auto nodes = detail::gather_nodes(s, idx, st);

    REQUIRE(nodes.x.rows == 3);
    REQUIRE(nodes.y.rows == 3);
    REQUIRE(nodes.mask.size() == 3);
    REQUIRE(nodes.points.size() == 3);
    for (int r = 0; r < 3; ++r) {
        const std::uint32_t i = idx[r];
        const auto zx = normalize_inputs(input_features(s, i), st);
        const auto zy = normalize_targets(s.targets[i], s.surface_mask[i] != 0, st);
        for (int c = 0; c < 4; ++c) {
            REQUIRE(nodes.x.at(r, c) == zx[c]);
            REQUIRE(nodes.y.at(r, c) == zy[c]);
        }
        REQUIRE(nodes.mask[r] == s.surface_mask[i]);
        REQUIRE(nodes.points[r].x == s.node_pos[i].x);
    }
}

// ============================================================================
// Training loop
// ============================================================================

TEST_CASE("short training run descends and logs history", "[pipeline]") {
    const auto corpus = tiny_corpus(4, 7);
    ModelConfig mc;
    mc.kind = ModelKind::graphsage;
    TrainConfig tc;
    tc.epochs = 8;
    tc.subsample_nodes = 64;
    tc.max_lr = 3e-3;
    tc.seed = 1;

    const fs::path hist = temp_path("history.jsonl");
    const TrainResult res = train(mc, corpus, tc, hist);

    REQUIRE(res.history.size() == 8);
    for (const EpochStats& e : res.history) {
        REQUIRE(std::isfinite(e.loss));
        REQUIRE(e.lr > 0.0);
    }
    REQUIRE(res.history.back().loss < res.history.front().loss);
    REQUIRE(res.train_time_s > 0.0);

    SECTION("history file holds one json object per epoch") {
        std::ifstream in(hist);
        std::string line;
        int rows = 0;
        while (std::getline(in, line)) {
            const auto j = nlohmann::json::parse(line);
            REQUIRE(j.at("epoch").get<int>() == rows);
            REQUIRE(j.contains("loss"));
            REQUIRE(j.contains("loss_volume"));
            REQUIRE(j.contains("loss_surface"));
            REQUIRE(j.contains("lr"));
            ++rows;
        }
        REQUIRE(rows == 8);
    }
    fs::remove(hist);
}

TEST_CASE("deterministic training runs are bitwise identical", "[pipeline]") {
    const auto corpus = tiny_corpus(3, 11);
    ModelConfig mc;
    mc.kind = ModelKind::graphsage;
    TrainConfig tc;
    tc.epochs = 3;
    tc.subsample_nodes = 48;
    tc.seed = 5;
    tc.deterministic = true;

    TrainResult a = train(mc, corpus, tc);
    TrainResult b = train(mc, corpus, tc);
    REQUIRE(a.train_time_s == 0.0);
    REQUIRE(b.train_time_s == 0.0);

    auto ra = collect_params(a.params);
    auto rb = collect_params(b.params);
    for (std::size_t i = 0; i < ra.size(); ++i)
        REQUIRE(ra[i].tensor->a == rb[i].tensor->a);
    for (std::size_t i = 0; i < a.params.trunk_bn.size(); ++i) {
        REQUIRE(a.params.trunk_bn[i].running_mean == b.params.trunk_bn[i].running_mean);
        REQUIRE(a.params.trunk_bn[i].running_var == b.params.trunk_bn[i].running_var);
    }
    for (std::size_t e = 0; e < a.history.size(); ++e)
        REQUIRE(a.history[e].loss == b.history[e].loss);

    SECTION("a different seed changes the trajectory") {
        TrainConfig tc2 = tc;
        tc2.seed = 6;
        const TrainResult c = train(mc, corpus, tc2);
        REQUIRE(c.history.back().loss != a.history.back().loss);
    }
}

TEST_CASE("training argument validation", "[pipeline]") {
    const auto corpus = tiny_corpus(1, 13);
    ModelConfig mc;
    TrainConfig tc;
    REQUIRE_THROWS_AS(train(mc, {}, tc), ArgumentError);
    tc.epochs = 0;
    REQUIRE_THROWS_AS(train(mc, corpus, tc), ArgumentError);
}

// ============================================================================
// Evaluation and reports
// ============================================================================

TEST_CASE("evaluation produces finite metrics for every sample", "[pipeline]") {
    const auto corpus = tiny_corpus(3, 17);
    ModelConfig mc;
    mc.kind = ModelKind::graphsage;
    TrainConfig tc;
    tc.epochs = 2;
    tc.subsample_nodes = 48;
    TrainResult res = train(mc, corpus, tc);

    EvalConfig ec;
    std::vector<SampleMetrics> per_sample;
    const RunScores scores =
        evaluate_model(res.params, corpus, res.stats, ec, PhysicsConfig{}, &per_sample);

    REQUIRE(scores.model == "graphsage");
    REQUIRE(scores.params == 29028);
    REQUIRE(per_sample.size() == 3);
    for (const SampleMetrics& m : per_sample) {
        REQUIRE(std::isfinite(m.loss_volume));
        REQUIRE(std::isfinite(m.loss_surface));
        REQUIRE(m.xwss_se >= 0.0);
        REQUIRE(m.prediction.size() == corpus[0].node_count());
        REQUIRE(m.infer_time_s >= 0.0);
    }
    REQUIRE(scores.lv ==
            Catch::Approx((per_sample[0].loss_volume + per_sample[1].loss_volume +
                           per_sample[2].loss_volume) /
                          3.0)
                .epsilon(1e-14));
}

TEST_CASE("aggregation computes population statistics per model", "[pipeline]") {
    RunScores a, b, c;
    a.model = b.model = c.model = "gno";
    a.params = b.params = c.params = 100;
    a.lv = 1.0;
    b.lv = 2.0;
    c.lv = 3.0;
    a.train_time_s = 10.0;
    b.train_time_s = 20.0;
    c.train_time_s = 30.0;
    const ScoreRow row = aggregate_runs({a, b, c});
    REQUIRE(row.lv_mean == Catch::Approx(2.0));
    REQUIRE(row.lv_std == Catch::Approx(std::sqrt(2.0 / 3.0)));
    REQUIRE(row.train_time_s == Catch::Approx(20.0));

    SECTION("mixed architectures are rejected") {
        b.model = "mgno";
        REQUIRE_THROWS_AS(aggregate_runs({a, b}), ArgumentError);
    }
    SECTION("empty run list is rejected") {
        REQUIRE_THROWS_AS(aggregate_runs({}), ArgumentError);
    }
}

TEST_CASE("report files carry the full schema", "[pipeline]") {
    ScoreRow row;
    row.model = "graphsage";
    row.lv_mean = 0.125;
    row.lv_std = 0.0625;
    row.params = 29028;
    row.train_time_s = 12.5;
    row.infer_time_s_per_sample = 0.25;

    SampleRow sr;
    sr.model = "graphsage";
    sr.seed = 1;
    sr.sample = 2;
    sr.lv = 0.125;

    const fs::path path = temp_path("report.csv");
    write_report({row}, {sr}, path);

    std::ifstream in(path);
    std::string header, line;
    std::getline(in, header);
    REQUIRE(header ==
            "model,lv_mean,lv_std,ls_mean,ls_std,"
            "xwss_mse_mean,xwss_mse_std,ywss_mse_mean,ywss_mse_std,"
            "xwp_mse_mean,xwp_mse_std,ywp_mse_mean,ywp_mse_std,"
            "param_count,train_time_s,infer_time_s_per_sample");
    REQUIRE(std::getline(in, line));
    REQUIRE(line.rfind("graphsage,0.125,0.0625,", 0) == 0);

    SECTION("json companion mirrors the rows") {
        std::ifstream jin(path.string() + ".json");
        nlohmann::json j;
        jin >> j;
        REQUIRE(j.at("rows").is_array());
        REQUIRE(j.at("rows").size() == 1);
        REQUIRE(j.at("rows")[0].at("model") == "graphsage");
        REQUIRE(j.at("rows")[0].at("lv_mean").get<double>() == 0.125);
        REQUIRE(j.at("rows")[0].at("param_count").get<std::uint64_t>() == 29028);
    }
    SECTION("per-sample table lists each run row") {
        std::ifstream sin(path.string() + ".samples.csv");
        std::string sheader, srow;
        std::getline(sin, sheader);
        REQUIRE(sheader ==
                "model,seed,sample,lv,ls,xwss_se,ywss_se,xwp_se,ywp_se,infer_time_s");
        REQUIRE(std::getline(sin, srow));
        REQUIRE(srow.rfind("graphsage,1,2,0.125,", 0) == 0);
    }
    fs::remove(path);
    fs::remove(path.string() + ".json");
    fs::remove(path.string() + ".samples.csv");
}
