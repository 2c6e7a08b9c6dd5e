#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "afb/error.hpp"
#include "afb/forces.hpp"
#include "afb/graph.hpp"
#include "afb/matrix.hpp"
#include "afb/mesh.hpp"
#include "afb/models.hpp"
#include "afb/nn.hpp"
#include "afb/rng.hpp"
#include "afb/stats.hpp"
#include "afb/tape.hpp"

namespace afb {

struct LossParts {
    double total = 0.0;
    double volume = 0.0;
    double surface = 0.0;
};

/// Composite loss over normalized predictions: mean squared 4-vector error
/// over volume nodes plus lambda times the same over surface nodes. Surface
/// term is zero when no surface node is present; at least one volume node is
/// required. Matches the differentiable loss on the tape term for term.
inline LossParts compute_loss(const Matrix& pred, const Matrix& target,
                              const std::vector<std::uint8_t>& surface_mask,
                              double lambda) {
    if (!pred.same_shape(target))
        throw ShapeError("compute_loss: prediction and target shapes differ");
    if (surface_mask.size() != static_cast<std::size_t>(pred.rows))
        throw ShapeError("compute_loss: mask length does not match rows");
    long long nv = 0, ns = 0;
    for (std::uint8_t m : surface_mask)
        (m ? ns : nv)++;
    if (nv == 0)
        throw ArgumentError("compute_loss: at least one volume node required");
    double sv = 0.0, ss = 0.0;
    for (int i = 0; i < pred.rows; ++i) {
        const double* pr = pred.row(i);
        const double* tr = target.row(i);
        double d2 = 0.0;
        for (int j = 0; j < pred.cols; ++j) {
            const double d = pr[j] - tr[j];
            d2 += d * d;
        }
        (surface_mask[i] ? ss : sv) += d2;
    }
    LossParts out;
    out.volume = sv / static_cast<double>(nv);
    out.surface = ns > 0 ? ss / static_cast<double>(ns) : 0.0;
    out.total = out.volume + lambda * out.surface;
    return out;
}

struct TrainConfig {
    int epochs = 400;
    std::size_t subsample_nodes = 1600;  ///< clamped to the sample's node count
    double radius = 0.1;
    std::uint32_t train_cap = 64;
    double max_lr = 3e-3;
    double lambda = 1.0;
    std::uint64_t seed = 0;
    bool deterministic = false;  ///< zero recorded wall times
};

struct EvalConfig {
    double radius = 0.1;
    std::uint32_t cap = 512;
    double lambda = 1.0;
    std::uint64_t seed = 0;
    bool deterministic = false;
};

struct EpochStats {
    int epoch = 0;
    double loss = 0.0;
    double loss_volume = 0.0;
    double loss_surface = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    ModelParams params;
    NormStats stats;
    std::vector<EpochStats> history;
    double train_time_s = 0.0;
};

namespace detail {

/// Node features, targets (both normalized), mask and positions for a subset
/// of a sample's nodes, in the order the indices are given.
struct GatheredNodes {
    Matrix x;
    Matrix y;
    std::vector<std::uint8_t> mask;
    std::vector<Vec2> points;
};

inline GatheredNodes gather_nodes(const MeshSample& s,
                                  const std::vector<std::uint32_t>& idx,
                                  const NormStats& st) {
    GatheredNodes g;
    const int n = static_cast<int>(idx.size());
    g.x = Matrix(n, 4);
    g.y = Matrix(n, 4);
    g.mask.resize(idx.size());
    g.points.resize(idx.size());
    for (int r = 0; r < n; ++r) {
        const std::uint32_t i = idx[static_cast<std::size_t>(r)];
        const bool surf = s.surface_mask[i] != 0;
        const auto xin = normalize_inputs(input_features(s, i), st);
        const auto yt = normalize_targets(s.targets[i], surf, st);
        for (int c = 0; c < 4; ++c) {
            g.x.at(r, c) = xin[static_cast<std::size_t>(c)];
            g.y.at(r, c) = yt[static_cast<std::size_t>(c)];
        }
        g.mask[static_cast<std::size_t>(r)] = surf ? 1 : 0;
        g.points[static_cast<std::size_t>(r)] = s.node_pos[i];
    }
    return g;
}

/// Owns whichever connectivity object the model kind needs and hands out a
/// GraphInput view of it. Must stay alive while the tape built on it is used.
struct BuiltGraph {
    RadiusGraph graph;
    ScaleHierarchy hierarchy;
    bool uses_hierarchy = false;

    GraphInput input() const {
        GraphInput in;
        if (uses_hierarchy)
            in.hierarchy = &hierarchy;
        else
            in.graph = &graph;
        return in;
    }
};

inline BuiltGraph build_graph_input(const ModelConfig& mc, const std::vector<Vec2>& pts,
                                    double radius, std::uint32_t cap, std::uint64_t seed) {
    BuiltGraph bg;
    switch (mc.kind) {
    case ModelKind::graphsage:
    case ModelKind::gno:
        bg.graph = build_radius_graph(pts, radius, cap, seed);
        break;
    case ModelKind::graph_unet: {
        const std::vector<std::uint32_t> caps(mc.unet_radii.size(), cap);
        bg.hierarchy = pooling_hierarchy(pts, mc.unet_ratios, mc.unet_radii, caps, seed, true);
        bg.uses_hierarchy = true;
        break;
    }
    case ModelKind::mgno: {
        const std::vector<std::uint32_t> caps(mc.mgno_radii.size(), cap);
        bg.hierarchy = pooling_hierarchy(pts, mc.mgno_ratios, mc.mgno_radii, caps, seed, false);
        bg.uses_hierarchy = true;
        break;
    }
    }
    return bg;
}

inline std::string format_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace detail

/// Train a fresh model on the given samples. Normalization statistics are fit
/// on the full training set before any subsampling, unless pre-fit statistics
/// are supplied. Each step draws its own node subset and neighbor graph from
/// seeds mixed with (epoch, sample index), so runs with equal seeds are
/// bitwise reproducible. Throws DivergenceError the moment a loss stops being
/// finite.
inline TrainResult train(const ModelConfig& mc, const std::vector<MeshSample>& train_set,
                         const TrainConfig& cfg,
                         const std::filesystem::path& history_path = {},
                         const NormStats* stats_in = nullptr) {
    if (train_set.empty())
        throw ArgumentError("train: empty training set");
    if (cfg.epochs < 1)
        throw ArgumentError("train: epochs must be >= 1");
    if (cfg.subsample_nodes < 1)
        throw ArgumentError("train: subsample_nodes must be >= 1");

    TrainResult res;
    res.stats = stats_in ? *stats_in : fit_norm_stats(train_set);
    res.params = build_model(mc, cfg.seed);

    const std::vector<ParamRef> refs = collect_params(res.params);
    const std::vector<BatchNormParams*> bns = collect_bns(res.params);
    std::vector<AdamState> adam(refs.size());

    std::ofstream hist;
    if (!history_path.empty()) {
        hist.open(history_path, std::ios::trunc);
        if (!hist)
            throw IoError("train: cannot open history file " + history_path.string());
    }

    const double total_steps =
        static_cast<double>(cfg.epochs) * static_cast<double>(train_set.size());
    std::uint64_t global_step = 0;
    const auto t0 = std::chrono::steady_clock::now();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double ep_loss = 0.0, ep_lv = 0.0, ep_ls = 0.0, last_lr = 0.0;
        for (std::size_t si = 0; si < train_set.size(); ++si) {
            const MeshSample& ms = train_set[si];
            const std::uint64_t step_seed =
                mix_seed(cfg.seed, seed_tag::train_step,
                         static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(si));
            const std::size_t n = std::min(cfg.subsample_nodes, ms.node_count());
            const auto idx = subsample(ms, n, step_seed);
            const auto nodes = detail::gather_nodes(ms, idx, res.stats);
            const auto bg = detail::build_graph_input(mc, nodes.points, cfg.radius,
                                                      cfg.train_cap, step_seed);

            Tape tape;
            BnUpdates updates;
            const int pred = model_forward(tape, res.params, nodes.x, bg.input(),
                                           Mode::train, &updates);
            double lv = 0.0, ls = 0.0;
            const int loss = tape.masked_sq_loss(pred, nodes.y, nodes.mask, cfg.lambda,
                                                 &lv, &ls);
            const double lval = tape.value(loss).at(0, 0);
            if (!std::isfinite(lval))
                throw DivergenceError("train: non-finite loss at epoch " +
                                      std::to_string(epoch) + ", sample " +
                                      std::to_string(si));
            tape.backward(loss);

            const double lr = one_cycle_lr(static_cast<double>(global_step), total_steps,
                                           cfg.max_lr);
            for (std::size_t pi = 0; pi < refs.size(); ++pi) {
                const Matrix g = tape.grad_for(*refs[pi].tensor);
                adam_step(*refs[pi].tensor, g, adam[pi],
                          static_cast<long long>(global_step) + 1, lr);
            }
            commit_bn_updates(bns, updates, mc.bn_momentum);
            ++global_step;
            ep_loss += lval;
            ep_lv += lv;
            ep_ls += ls;
            last_lr = lr;
        }
        const double inv = 1.0 / static_cast<double>(train_set.size());
        EpochStats es{epoch, ep_loss * inv, ep_lv * inv, ep_ls * inv, last_lr};
        res.history.push_back(es);
        if (hist.is_open()) {
            nlohmann::json line;
            line["epoch"] = es.epoch;
            line["loss"] = es.loss;
            line["loss_volume"] = es.loss_volume;
            line["loss_surface"] = es.loss_surface;
            line["lr"] = es.lr;
            hist << line.dump() << "\n";
        }
    }
    if (!cfg.deterministic) {
        const auto t1 = std::chrono::steady_clock::now();
        res.train_time_s = std::chrono::duration<double>(t1 - t0).count();
    }
    return res;
}

/// Per-test-sample evaluation record. Squared errors compare the boundary
/// integrals of shear and pressure computed from the predicted field against
/// the same integrals from the sample's stored targets.
struct SampleMetrics {
    double loss = 0.0;
    double loss_volume = 0.0;
    double loss_surface = 0.0;
    double xwss_se = 0.0;
    double ywss_se = 0.0;
    double xwp_se = 0.0;
    double ywp_se = 0.0;
    double infer_time_s = 0.0;
    FlowField prediction;  ///< denormalized, per node
};

/// Evaluate one sample on its full mesh (no subsampling) in eval mode.
/// Pure with respect to `params`: running statistics are read, never written.
inline SampleMetrics evaluate_sample(ModelParams& params, const MeshSample& ms,
                                     const NormStats& st, const EvalConfig& cfg,
                                     const PhysicsConfig& physics = {}) {
    std::vector<std::uint32_t> idx(ms.node_count());
    std::iota(idx.begin(), idx.end(), 0u);
    const auto nodes = detail::gather_nodes(ms, idx, st);
    const auto bg = detail::build_graph_input(params.config, nodes.points, cfg.radius,
                                              cfg.cap, cfg.seed);

    const auto t0 = std::chrono::steady_clock::now();
    Tape tape;
    const int pred = model_forward(tape, params, nodes.x, bg.input(), Mode::eval, nullptr);
    const auto t1 = std::chrono::steady_clock::now();

    SampleMetrics m;
    if (!cfg.deterministic)
        m.infer_time_s = std::chrono::duration<double>(t1 - t0).count();

    const Matrix& pv = tape.value(pred);
    const LossParts parts = compute_loss(pv, nodes.y, nodes.mask, cfg.lambda);
    m.loss = parts.total;
    m.loss_volume = parts.volume;
    m.loss_surface = parts.surface;

    m.prediction.resize(ms.node_count());
    for (std::uint32_t i = 0; i < ms.node_count(); ++i) {
        const int r = static_cast<int>(i);
        const std::array<double, 4> yn{pv.at(r, 0), pv.at(r, 1), pv.at(r, 2), pv.at(r, 3)};
        m.prediction[i] = denormalize_targets(yn, ms.surface_mask[i] != 0, st);
    }

    const SurfaceForces predicted = drag_lift(ms, m.prediction, physics);
    const SurfaceForces truth = drag_lift(ms, ms.targets, physics);
    const auto sq = [](double d) { return d * d; };
    m.xwss_se = sq(predicted.integral_tau.x - truth.integral_tau.x);
    m.ywss_se = sq(predicted.integral_tau.y - truth.integral_tau.y);
    m.xwp_se = sq(predicted.integral_wp.x - truth.integral_wp.x);
    m.ywp_se = sq(predicted.integral_wp.y - truth.integral_wp.y);
    return m;
}

/// One trained model's scores over a test set: losses averaged per sample,
/// force-integral errors averaged as mean squared error per component.
struct RunScores {
    std::string model;
    double lv = 0.0;
    double ls = 0.0;
    double xwss_mse = 0.0;
    double ywss_mse = 0.0;
    double xwp_mse = 0.0;
    double ywp_mse = 0.0;
    std::uint64_t params = 0;
    double train_time_s = 0.0;
    double infer_time_s_per_sample = 0.0;
};

inline RunScores evaluate_model(ModelParams& params, const std::vector<MeshSample>& test_set,
                                const NormStats& st, const EvalConfig& cfg,
                                const PhysicsConfig& physics = {},
                                std::vector<SampleMetrics>* per_sample = nullptr) {
    if (test_set.empty())
        throw ArgumentError("evaluate_model: empty test set");
    RunScores r;
    r.model = to_string(params.config.kind);
    r.params = param_count(params);
    for (const MeshSample& ms : test_set) {
        SampleMetrics m = evaluate_sample(params, ms, st, cfg, physics);
        r.lv += m.loss_volume;
        r.ls += m.loss_surface;
        r.xwss_mse += m.xwss_se;
        r.ywss_mse += m.ywss_se;
        r.xwp_mse += m.xwp_se;
        r.ywp_mse += m.ywp_se;
        r.infer_time_s_per_sample += m.infer_time_s;
        if (per_sample)
            per_sample->push_back(std::move(m));
    }
    const double inv = 1.0 / static_cast<double>(test_set.size());
    r.lv *= inv;
    r.ls *= inv;
    r.xwss_mse *= inv;
    r.ywss_mse *= inv;
    r.xwp_mse *= inv;
    r.ywp_mse *= inv;
    r.infer_time_s_per_sample *= inv;
    return r;
}

/// One row of the final report: mean and population standard deviation of each
/// score across repeated runs (seeds) of the same architecture.
struct ScoreRow {
    std::string model;
    double lv_mean = 0.0, lv_std = 0.0;
    double ls_mean = 0.0, ls_std = 0.0;
    double xwss_mse_mean = 0.0, xwss_mse_std = 0.0;
    double ywss_mse_mean = 0.0, ywss_mse_std = 0.0;
    double xwp_mse_mean = 0.0, xwp_mse_std = 0.0;
    double ywp_mse_mean = 0.0, ywp_mse_std = 0.0;
    std::uint64_t params = 0;
    double train_time_s = 0.0;              ///< mean across runs
    double infer_time_s_per_sample = 0.0;   ///< mean across runs
};

inline ScoreRow aggregate_runs(const std::vector<RunScores>& runs) {
    if (runs.empty())
        throw ArgumentError("aggregate_runs: no runs given");
    for (const RunScores& r : runs)
        if (r.model != runs.front().model || r.params != runs.front().params)
            throw ArgumentError("aggregate_runs: runs mix different models");

    const auto stats = [&runs](double RunScores::* field, double& mean, double& sd) {
        double s = 0.0;
        for (const RunScores& r : runs)
            s += r.*field;
        mean = s / static_cast<double>(runs.size());
        double v = 0.0;
        for (const RunScores& r : runs) {
            const double d = r.*field - mean;
            v += d * d;
        }
        sd = std::sqrt(v / static_cast<double>(runs.size()));
    };

    ScoreRow row;
    row.model = runs.front().model;
    row.params = runs.front().params;
    stats(&RunScores::lv, row.lv_mean, row.lv_std);
    stats(&RunScores::ls, row.ls_mean, row.ls_std);
    stats(&RunScores::xwss_mse, row.xwss_mse_mean, row.xwss_mse_std);
    stats(&RunScores::ywss_mse, row.ywss_mse_mean, row.ywss_mse_std);
    stats(&RunScores::xwp_mse, row.xwp_mse_mean, row.xwp_mse_std);
    stats(&RunScores::ywp_mse, row.ywp_mse_mean, row.ywp_mse_std);
    double dummy;
    stats(&RunScores::train_time_s, row.train_time_s, dummy);
    stats(&RunScores::infer_time_s_per_sample, row.infer_time_s_per_sample, dummy);
    return row;
}

/// Per-sample line of the report companion table.
struct SampleRow {
    std::string model;
    std::uint64_t seed = 0;
    std::size_t sample = 0;
    double lv = 0.0;
    double ls = 0.0;
    double xwss_se = 0.0;
    double ywss_se = 0.0;
    double xwp_se = 0.0;
    double ywp_se = 0.0;
    double infer_time_s = 0.0;
};

/// Write the benchmark report: a CSV of aggregated rows at `path`, the same
/// content as JSON at `path`.json, and the per-sample table at
/// `path`.samples.csv. All numbers are emitted with 17 significant digits so
/// files round-trip exactly.
inline void write_report(const std::vector<ScoreRow>& rows,
                         const std::vector<SampleRow>& samples,
                         const std::filesystem::path& path) {
    std::ofstream csv(path, std::ios::trunc);
    if (!csv)
        throw IoError("write_report: cannot open " + path.string());
    csv << "model,lv_mean,lv_std,ls_mean,ls_std,"
           "xwss_mse_mean,xwss_mse_std,ywss_mse_mean,ywss_mse_std,"
           "xwp_mse_mean,xwp_mse_std,ywp_mse_mean,ywp_mse_std,"
           "param_count,train_time_s,infer_time_s_per_sample\n";
    const auto g = detail::format_g17;
    for (const ScoreRow& r : rows) {
        csv << r.model << ',' << g(r.lv_mean) << ',' << g(r.lv_std) << ','
            << g(r.ls_mean) << ',' << g(r.ls_std) << ','
            << g(r.xwss_mse_mean) << ',' << g(r.xwss_mse_std) << ','
            << g(r.ywss_mse_mean) << ',' << g(r.ywss_mse_std) << ','
            << g(r.xwp_mse_mean) << ',' << g(r.xwp_mse_std) << ','
            << g(r.ywp_mse_mean) << ',' << g(r.ywp_mse_std) << ','
            << r.params << ',' << g(r.train_time_s) << ','
            << g(r.infer_time_s_per_sample) << "\n";
    }
    csv.close();
    if (!csv)
        throw IoError("write_report: short write to " + path.string());

    nlohmann::json j;
    j["rows"] = nlohmann::json::array();
    for (const ScoreRow& r : rows) {
        nlohmann::json e;
        e["model"] = r.model;
        e["lv_mean"] = r.lv_mean;
        e["lv_std"] = r.lv_std;
        e["ls_mean"] = r.ls_mean;
        e["ls_std"] = r.ls_std;
        e["xwss_mse_mean"] = r.xwss_mse_mean;
        e["xwss_mse_std"] = r.xwss_mse_std;
        e["ywss_mse_mean"] = r.ywss_mse_mean;
        e["ywss_mse_std"] = r.ywss_mse_std;
        e["xwp_mse_mean"] = r.xwp_mse_mean;
        e["xwp_mse_std"] = r.xwp_mse_std;
        e["ywp_mse_mean"] = r.ywp_mse_mean;
        e["ywp_mse_std"] = r.ywp_mse_std;
        e["param_count"] = r.params;
        e["train_time_s"] = r.train_time_s;
        e["infer_time_s_per_sample"] = r.infer_time_s_per_sample;
        j["rows"].push_back(std::move(e));
    }
    std::filesystem::path json_path = path;
    json_path += ".json";
    std::ofstream js(json_path, std::ios::trunc);
    if (!js)
        throw IoError("write_report: cannot open " + json_path.string());
    js << j.dump(2) << "\n";

    std::filesystem::path samples_path = path;
    samples_path += ".samples.csv";
    std::ofstream sc(samples_path, std::ios::trunc);
    if (!sc)
        throw IoError("write_report: cannot open " + samples_path.string());
    sc << "model,seed,sample,lv,ls,xwss_se,ywss_se,xwp_se,ywp_se,infer_time_s\n";
    for (const SampleRow& s : samples) {
        sc << s.model << ',' << s.seed << ',' << s.sample << ','
           << g(s.lv) << ',' << g(s.ls) << ','
           << g(s.xwss_se) << ',' << g(s.ywss_se) << ','
           << g(s.xwp_se) << ',' << g(s.ywp_se) << ','
           << g(s.infer_time_s) << "\n";
    }
}

} // namespace afb
