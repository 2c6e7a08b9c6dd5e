#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <afb/afb.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// AFB_SEED overrides --seed for every subcommand when set.
std::uint64_t effective_seed(std::uint64_t cli_seed) {
    const char* env = std::getenv("AFB_SEED");
    if (!env || !*env)
        return cli_seed;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (!end || *end != '\0')
        throw afb::ArgumentError(std::string("AFB_SEED is not an unsigned integer: ") + env);
    return static_cast<std::uint64_t>(v);
}

void echo_config(json cfg) {
    std::cerr << cfg.dump() << "\n";
}

/// All .afm samples under dir, in filename order.
std::vector<afb::MeshSample> load_dir(const fs::path& dir) {
    if (!fs::is_directory(dir))
        throw afb::IoError("not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".afm")
            files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty())
        throw afb::IoError("no .afm samples in " + dir.string());
    std::vector<afb::MeshSample> out;
    out.reserve(files.size());
    for (const fs::path& f : files) {
        afb::MeshSample s = afb::read_sample(f);
        afb::validate(s);
        out.push_back(std::move(s));
    }
    return out;
}

afb::CaseSpec::Kind parse_case(const std::string& s) {
    if (s == "couette")
        return afb::CaseSpec::Kind::couette;
    if (s == "cylinder")
        return afb::CaseSpec::Kind::cylinder;
    throw afb::ArgumentError("unknown case kind: " + s);
}

struct GenArgs {
    std::string case_kind = "cylinder";
    int n_samples = 1;
    std::string out_dir;
    std::uint64_t seed = 0;
    std::uint32_t segments = 64;
    std::uint32_t volume_nodes = 1024;
    double scale = 0.0;  // 0 = per-case default
    double jitter = 0.25;
    bool no_nut_bump = false;
};

int run_gen(const GenArgs& a) {
    const std::uint64_t seed = effective_seed(a.seed);
    const afb::CaseSpec::Kind kind = parse_case(a.case_kind);
    const double scale =
        a.scale > 0.0 ? a.scale : (kind == afb::CaseSpec::Kind::cylinder ? 0.5 : 1.0);
    echo_config({{"subcommand", "gen-synthetic"},
                 {"case", a.case_kind},
                 {"n_samples", a.n_samples},
                 {"out_dir", a.out_dir},
                 {"seed", seed},
                 {"segments", a.segments},
                 {"volume_nodes", a.volume_nodes},
                 {"scale", scale},
                 {"jitter", a.jitter},
                 {"nut_bump", !a.no_nut_bump},
                 {"nu", afb::PhysicsConfig{}.nu}});
    if (a.n_samples < 1)
        throw afb::ArgumentError("gen-synthetic: --n-samples must be >= 1");
    fs::create_directories(a.out_dir);
    for (int i = 0; i < a.n_samples; ++i) {
        const std::uint64_t case_seed =
            afb::mix_seed(seed, afb::seed_tag::gen_case, static_cast<std::uint64_t>(i));
        afb::Rng rng(case_seed);
        afb::CaseSpec spec;
        spec.kind = kind;
        spec.u_inf = rng.uniform(10.0, 50.0);
        spec.circulation =
            kind == afb::CaseSpec::Kind::cylinder ? rng.uniform(-10.0, 10.0) : 0.0;
        spec.scale = scale;
        spec.segments = a.segments;
        spec.volume_nodes = a.volume_nodes;
        spec.seed = case_seed;
        spec.nut_bump = !a.no_nut_bump;
        spec.jitter = a.jitter;
        const afb::MeshSample sample = afb::gen_case(spec);
        char name[32];
        std::snprintf(name, sizeof(name), "case_%04d.afm", i);
        afb::write_sample(sample, fs::path(a.out_dir) / name, afb::PhysicsConfig{}.nu,
                          afb::case_provenance(spec));
    }
    return 0;
}

struct GraphArgs {
    std::string in;
    double radius = 0.1;
    std::uint32_t max_neighbors = 64;
    std::uint64_t seed = 0;
    std::string out;
};

int run_build_graph(const GraphArgs& a) {
    const std::uint64_t seed = effective_seed(a.seed);
    echo_config({{"subcommand", "build-graph"},
                 {"in", a.in},
                 {"radius", a.radius},
                 {"max_neighbors", a.max_neighbors},
                 {"seed", seed},
                 {"out", a.out}});
    const afb::MeshSample s = afb::read_sample(a.in);
    const afb::RadiusGraph g =
        afb::build_radius_graph(s.node_pos, a.radius, a.max_neighbors, seed);
    json j;
    j["node_count"] = g.size();
    j["radius"] = g.radius;
    j["max_neighbors"] = g.max_neighbors;
    j["seed"] = seed;
    j["edge_count"] = g.edges.size();
    auto edges = json::array();
    for (const auto& e : g.edges)
        edges.push_back({e[0], e[1]});
    j["edges"] = std::move(edges);
    std::ofstream out(a.out, std::ios::trunc);
    if (!out)
        throw afb::IoError("build-graph: cannot open " + a.out);
    out << j.dump() << "\n";
    return 0;
}

struct FitStatsArgs {
    std::string train_dir;
    std::string out;
};

int run_fit_stats(const FitStatsArgs& a) {
    echo_config({{"subcommand", "fit-stats"}, {"train_dir", a.train_dir}, {"out", a.out}});
    const auto samples = load_dir(a.train_dir);
    const afb::NormStats st = afb::fit_norm_stats(samples);
    afb::write_norm_stats(st, a.out);
    return 0;
}

struct TrainArgs {
    std::string train_dir;
    std::string stats;
    std::string model = "graphsage";
    int epochs = 400;
    double max_lr = 3e-3;
    double lambda = 1.0;
    std::uint64_t seed = 0;
    std::string out;
    std::size_t subsample = 1600;
    double radius = 0.1;
    std::uint32_t max_neighbors = 64;
    int iterations = 3;
    bool deterministic = false;
    unsigned threads = 0;
};

int run_train(const TrainArgs& a) {
    const std::uint64_t seed = effective_seed(a.seed);
    const unsigned threads =
        a.deterministic ? 1u
                        : (a.threads ? a.threads
                                     : std::max(1u, std::thread::hardware_concurrency()));
    echo_config({{"subcommand", "train"},
                 {"train_dir", a.train_dir},
                 {"stats", a.stats},
                 {"model", a.model},
                 {"epochs", a.epochs},
                 {"max_lr", a.max_lr},
                 {"lambda", a.lambda},
                 {"seed", seed},
                 {"out", a.out},
                 {"subsample", a.subsample},
                 {"radius", a.radius},
                 {"max_neighbors", a.max_neighbors},
                 {"iterations", a.iterations},
                 {"deterministic", a.deterministic},
                 {"threads", threads},
                 {"nu", afb::PhysicsConfig{}.nu}});

    const auto samples = load_dir(a.train_dir);
    afb::NormStats stats_in;
    const bool have_stats = !a.stats.empty();
    if (have_stats)
        stats_in = afb::read_norm_stats(a.stats);

    afb::ModelConfig mc;
    mc.kind = afb::model_kind_from_string(a.model);
    mc.iterations = a.iterations;

    afb::TrainConfig tc;
    tc.epochs = a.epochs;
    tc.subsample_nodes = a.subsample;
    tc.radius = a.radius;
    tc.train_cap = a.max_neighbors;
    tc.max_lr = a.max_lr;
    tc.lambda = a.lambda;
    tc.seed = seed;
    tc.deterministic = a.deterministic;

    fs::path ckpt(a.out);
    fs::path history = ckpt;
    history += ".history.jsonl";
    afb::TrainResult res =
        afb::train(mc, samples, tc, history, have_stats ? &stats_in : nullptr);

    afb::write_checkpoint(res.params, ckpt);
    {
        // Record training metadata in the checkpoint sidecar so eval can report it.
        fs::path cfg_path = ckpt;
        cfg_path += ".config.json";
        std::ifstream in(cfg_path);
        json j;
        in >> j;
        in.close();
        j["train_time_s"] = res.train_time_s;
        j["train_seed"] = seed;
        std::ofstream out(cfg_path, std::ios::trunc);
        out << j.dump(2) << "\n";
    }
    if (!have_stats) {
        fs::path stats_path = ckpt;
        stats_path += ".stats.json";
        afb::write_norm_stats(res.stats, stats_path);
    }
    return 0;
}

struct EvalArgs {
    std::string test_dir;
    std::vector<std::string> ckpts;
    std::string stats;
    std::string report;
    double radius = 0.1;
    std::uint32_t max_neighbors = 512;
    double lambda = 1.0;
    std::uint64_t seed = 0;
    bool deterministic = false;
    unsigned threads = 0;
};

int run_eval(const EvalArgs& a) {
    const std::uint64_t seed = effective_seed(a.seed);
    const unsigned threads =
        a.deterministic ? 1u
                        : (a.threads ? a.threads
                                     : std::max(1u, std::thread::hardware_concurrency()));
    echo_config({{"subcommand", "eval"},
                 {"test_dir", a.test_dir},
                 {"ckpt", a.ckpts},
                 {"stats", a.stats},
                 {"report", a.report},
                 {"radius", a.radius},
                 {"max_neighbors", a.max_neighbors},
                 {"lambda", a.lambda},
                 {"seed", seed},
                 {"deterministic", a.deterministic},
                 {"threads", threads},
                 {"nu", afb::PhysicsConfig{}.nu}});

    const auto samples = load_dir(a.test_dir);
    const afb::NormStats st = afb::read_norm_stats(a.stats);

    afb::EvalConfig ec;
    ec.radius = a.radius;
    ec.cap = a.max_neighbors;
    ec.lambda = a.lambda;
    ec.seed = seed;
    ec.deterministic = a.deterministic;

    // One run per checkpoint, grouped by architecture for aggregation.
    std::map<std::string, std::vector<afb::RunScores>> by_model;
    std::vector<afb::SampleRow> sample_rows;
    std::map<std::string, std::uint64_t> run_ordinal;
    for (const std::string& path : a.ckpts) {
        afb::ModelParams params = afb::read_checkpoint(path);
        double train_time = 0.0;
        {
            fs::path cfg_path(path);
            cfg_path += ".config.json";
            std::ifstream in(cfg_path);
            json j;
            in >> j;
            if (j.contains("train_time_s"))
                train_time = j["train_time_s"].get<double>();
        }
        std::vector<afb::SampleMetrics> per_sample;
        afb::RunScores rs =
            afb::evaluate_model(params, samples, st, ec, afb::PhysicsConfig{}, &per_sample);
        rs.train_time_s = a.deterministic ? 0.0 : train_time;
        const std::uint64_t run = run_ordinal[rs.model]++;
        for (std::size_t si = 0; si < per_sample.size(); ++si) {
            afb::SampleRow row;
            row.model = rs.model;
            row.seed = run;
            row.sample = si;
            row.lv = per_sample[si].loss_volume;
            row.ls = per_sample[si].loss_surface;
            row.xwss_se = per_sample[si].xwss_se;
            row.ywss_se = per_sample[si].ywss_se;
            row.xwp_se = per_sample[si].xwp_se;
            row.ywp_se = per_sample[si].ywp_se;
            row.infer_time_s = per_sample[si].infer_time_s;
            sample_rows.push_back(std::move(row));
        }
        by_model[rs.model].push_back(std::move(rs));
    }
    std::vector<afb::ScoreRow> rows;
    for (auto& [model, runs] : by_model)
        rows.push_back(afb::aggregate_runs(runs));
    afb::write_report(rows, sample_rows, a.report);
    return 0;
}

struct ForcesArgs {
    std::string sample;
    std::string field = "true";
    std::string out;
    std::string stats;
    double radius = 0.1;
    std::uint32_t max_neighbors = 512;
    std::uint64_t seed = 0;
};

int run_forces(const ForcesArgs& a) {
    const std::uint64_t seed = effective_seed(a.seed);
    echo_config({{"subcommand", "forces"},
                 {"sample", a.sample},
                 {"field", a.field},
                 {"out", a.out},
                 {"stats", a.stats},
                 {"radius", a.radius},
                 {"max_neighbors", a.max_neighbors},
                 {"seed", seed},
                 {"nu", afb::PhysicsConfig{}.nu}});
    const afb::MeshSample s = afb::read_sample(a.sample);
    afb::validate(s);

    afb::FlowField field;
    if (a.field == "true") {
        field = s.targets;
    } else {
        if (a.stats.empty())
            throw afb::ArgumentError("forces: --stats is required when --field is a checkpoint");
        afb::ModelParams params = afb::read_checkpoint(a.field);
        const afb::NormStats st = afb::read_norm_stats(a.stats);
        afb::EvalConfig ec;
        ec.radius = a.radius;
        ec.cap = a.max_neighbors;
        ec.seed = seed;
        ec.deterministic = true;
        field = afb::evaluate_sample(params, s, st, ec).prediction;
    }
    const afb::SurfaceForces f = afb::drag_lift(s, field, afb::PhysicsConfig{});
    afb::write_forces_csv(s, f, a.out);
    json j;
    j["drag"] = f.drag;
    j["lift"] = f.lift;
    j["integral_tau"] = {f.integral_tau.x, f.integral_tau.y};
    j["integral_wp"] = {f.integral_wp.x, f.integral_wp.y};
    std::cout << j.dump() << "\n";
    return 0;
}

struct GradcheckArgs {
    std::string model = "graphsage";
    std::uint64_t seed = 0;
    std::size_t checks = 800;
};

int run_gradcheck(const GradcheckArgs& a) {
    const std::uint64_t seed = effective_seed(a.seed);
    echo_config({{"subcommand", "gradcheck"},
                 {"model", a.model},
                 {"seed", seed},
                 {"checks", a.checks}});

    afb::CaseSpec cs;
    cs.kind = afb::CaseSpec::Kind::cylinder;
    cs.u_inf = 15.0;
    cs.circulation = 3.0;
    cs.scale = 0.5;
    cs.segments = 12;
    cs.volume_nodes = 36;
    cs.seed = afb::mix_seed(seed, afb::seed_tag::gen_case, 0xFD);
    cs.nut_bump = true;
    const afb::MeshSample ms = afb::gen_case(cs);
    const std::vector<afb::MeshSample> corpus{ms};
    const afb::NormStats st = afb::fit_norm_stats(corpus);
    std::vector<std::uint32_t> idx(ms.node_count());
    std::iota(idx.begin(), idx.end(), 0u);
    const auto nodes = afb::detail::gather_nodes(ms, idx, st);

    afb::ModelConfig mc;
    mc.kind = afb::model_kind_from_string(a.model);
    afb::ModelParams params = afb::build_model(mc, seed + 19);
    const auto bg =
        afb::detail::build_graph_input(mc, nodes.points, 0.18, 64, seed + 11);
    auto refs = afb::collect_params(params);

    const auto loss_fn = [&]() {
        afb::Tape t;
        const int pred =
            afb::model_forward(t, params, nodes.x, bg.input(), afb::Mode::eval, nullptr);
        return t.value(t.masked_sq_loss(pred, nodes.y, nodes.mask, 1.0)).at(0, 0);
    };
    const auto grad_fn = [&]() {
        afb::Tape t;
        const int pred =
            afb::model_forward(t, params, nodes.x, bg.input(), afb::Mode::eval, nullptr);
        const int l = t.masked_sq_loss(pred, nodes.y, nodes.mask, 1.0);
        t.backward(l);
        std::vector<afb::Matrix> gs;
        gs.reserve(refs.size());
        for (auto& r : refs)
            gs.push_back(t.grad_for(*r.tensor));
        return gs;
    };
    const afb::FdReport rep = afb::finite_diff_check(refs, loss_fn, grad_fn, 1e-5,
                                                     a.checks, seed, {1e-4, 1e-6, 1e-7});
    json j;
    j["model"] = a.model;
    j["checked"] = rep.checked;
    j["max_rel_err"] = rep.max_rel_err;
    j["max_small_abs_err"] = rep.max_small_abs_err;
    j["worst_param"] = rep.worst_param;
    j["passed"] = rep.passes();
    std::cout << j.dump() << "\n";
    return rep.passes() ? 0 : 3;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Graph-mesh benchmark pipeline for learned airfoil flow surrogates"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* cmd_gen = app.add_subcommand("gen-synthetic", "Generate synthetic flow samples");
    cmd_gen->add_option("--case", gen.case_kind, "couette or cylinder")
        ->check(CLI::IsMember({"couette", "cylinder"}));
    cmd_gen->add_option("--n-samples", gen.n_samples, "number of samples");
    cmd_gen->add_option("--out-dir", gen.out_dir, "output directory")->required();
    cmd_gen->add_option("--seed", gen.seed, "base seed");
    cmd_gen->add_option("--segments", gen.segments, "wall segment count");
    cmd_gen->add_option("--volume-nodes", gen.volume_nodes, "off-wall node budget");
    cmd_gen->add_option("--scale", gen.scale, "channel height / cylinder radius");
    cmd_gen->add_option("--jitter", gen.jitter, "node perturbation fraction");
    cmd_gen->add_flag("--no-nut-bump", gen.no_nut_bump, "disable the synthetic nu_t field");

    GraphArgs gr;
    auto* cmd_graph = app.add_subcommand("build-graph", "Build a radius graph from a sample");
    cmd_graph->add_option("--in", gr.in, "input .afm sample")->required();
    cmd_graph->add_option("--radius", gr.radius, "connection radius");
    cmd_graph->add_option("--max-neighbors", gr.max_neighbors, "per-node neighbor cap");
    cmd_graph->add_option("--seed", gr.seed, "cap sampling seed");
    cmd_graph->add_option("--out", gr.out, "output JSON path")->required();

    FitStatsArgs fst;
    auto* cmd_stats = app.add_subcommand("fit-stats", "Fit normalization statistics");
    cmd_stats->add_option("--train-dir", fst.train_dir, "training sample directory")
        ->required();
    cmd_stats->add_option("--out", fst.out, "output stats JSON")->required();

    TrainArgs tra;
    auto* cmd_train = app.add_subcommand("train", "Train a model");
    cmd_train->add_option("--train-dir", tra.train_dir, "training sample directory")
        ->required();
    cmd_train->add_option("--stats", tra.stats,
                          "pre-fit stats JSON (fit from --train-dir when omitted)");
    cmd_train->add_option("--model", tra.model, "architecture")
        ->check(CLI::IsMember({"graphsage", "graph_unet", "gno", "mgno"}));
    cmd_train->add_option("--epochs", tra.epochs, "training epochs");
    cmd_train->add_option("--max-lr", tra.max_lr, "one-cycle peak learning rate");
    cmd_train->add_option("--lambda", tra.lambda, "surface loss weight");
    cmd_train->add_option("--seed", tra.seed, "training seed");
    cmd_train->add_option("--out", tra.out, "checkpoint output path")->required();
    cmd_train->add_option("--subsample", tra.subsample, "nodes sampled per step");
    cmd_train->add_option("--radius", tra.radius, "graph connection radius");
    cmd_train->add_option("--max-neighbors", tra.max_neighbors, "train-time neighbor cap");
    cmd_train->add_option("--iterations", tra.iterations, "gno/mgno conv iterations");
    cmd_train->add_flag("--deterministic", tra.deterministic,
                        "single thread, zeroed wall times");
    cmd_train->add_option("--threads", tra.threads, "worker threads (default: all cores)");

    EvalArgs ev;
    auto* cmd_eval = app.add_subcommand("eval", "Evaluate checkpoints and write a report");
    cmd_eval->add_option("--test-dir", ev.test_dir, "test sample directory")->required();
    cmd_eval->add_option("--ckpt", ev.ckpts, "checkpoint path (repeatable)")->required();
    cmd_eval->add_option("--stats", ev.stats, "stats JSON path")->required();
    cmd_eval->add_option("--report", ev.report, "report CSV output path")->required();
    cmd_eval->add_option("--radius", ev.radius, "graph connection radius");
    cmd_eval->add_option("--max-neighbors", ev.max_neighbors, "eval-time neighbor cap");
    cmd_eval->add_option("--lambda", ev.lambda, "surface loss weight");
    cmd_eval->add_option("--seed", ev.seed, "eval seed");
    cmd_eval->add_flag("--deterministic", ev.deterministic,
                       "single thread, zeroed wall times");
    cmd_eval->add_option("--threads", ev.threads, "worker threads (default: all cores)");

    ForcesArgs fo;
    auto* cmd_forces = app.add_subcommand("forces", "Surface force integrals for a sample");
    cmd_forces->add_option("--sample", fo.sample, "input .afm sample")->required();
    cmd_forces->add_option("--field", fo.field,
                           "'true' for stored targets, or a checkpoint path");
    cmd_forces->add_option("--out", fo.out, "forces CSV output path")->required();
    cmd_forces->add_option("--stats", fo.stats, "stats JSON (required with a checkpoint)");
    cmd_forces->add_option("--radius", fo.radius, "graph connection radius");
    cmd_forces->add_option("--max-neighbors", fo.max_neighbors, "eval-time neighbor cap");
    cmd_forces->add_option("--seed", fo.seed, "eval seed");

    GradcheckArgs gc;
    auto* cmd_gc = app.add_subcommand("gradcheck", "Finite-difference gradient check");
    cmd_gc->add_option("--model", gc.model, "architecture")
        ->check(CLI::IsMember({"graphsage", "graph_unet", "gno", "mgno"}));
    cmd_gc->add_option("--seed", gc.seed, "check seed");
    cmd_gc->add_option("--checks", gc.checks, "entries to probe across all tensors");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            app.exit(e);
            return 0;
        }
        std::cerr << json{{"error", e.what()}, {"type", "usage"}}.dump() << "\n";
        return 1;
    }

    try {
        if (cmd_gen->parsed())
            return run_gen(gen);
        if (cmd_graph->parsed())
            return run_build_graph(gr);
        if (cmd_stats->parsed())
            return run_fit_stats(fst);
        if (cmd_train->parsed())
            return run_train(tra);
        if (cmd_eval->parsed())
            return run_eval(ev);
        if (cmd_forces->parsed())
            return run_forces(fo);
        if (cmd_gc->parsed())
            return run_gradcheck(gc);
    } catch (const afb::DivergenceError& e) {
        std::cerr << json{{"error", e.what()}, {"type", "divergence"}}.dump() << "\n";
        return 3;
    } catch (const afb::RankError& e) {
        std::cerr << json{{"error", e.what()}, {"type", "rank"}}.dump() << "\n";
        return 3;
    } catch (const afb::DegenerateGeometryError& e) {
        std::cerr << json{{"error", e.what()}, {"type", "degenerate_geometry"}}.dump()
                  << "\n";
        return 3;
    } catch (const afb::Error& e) {
        std::cerr << json{{"error", e.what()}, {"type", "data"}}.dump() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << json{{"error", e.what()}, {"type", "internal"}}.dump() << "\n";
        return 2;
    }
    return 1;
}
