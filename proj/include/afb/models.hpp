#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "afb/error.hpp"
#include "afb/graph.hpp"
#include "afb/matrix.hpp"
#include "afb/nn.hpp"
#include "afb/rng.hpp"
#include "afb/tape.hpp"

namespace afb {

enum class ModelKind { graphsage, graph_unet, gno, mgno };

inline const char* to_string(ModelKind k) {
    switch (k) {
    case ModelKind::graphsage: return "graphsage";
    case ModelKind::graph_unet: return "graph_unet";
    case ModelKind::gno: return "gno";
    case ModelKind::mgno: return "mgno";
    }
    return "?";
}

inline ModelKind model_kind_from_string(const std::string& s) {
    if (s == "graphsage") return ModelKind::graphsage;
    if (s == "graph_unet") return ModelKind::graph_unet;
    if (s == "gno") return ModelKind::gno;
    if (s == "mgno") return ModelKind::mgno;
    throw ConfigError("unknown model kind: " + s);
}

/// Architecture hyperparameters. The fixed widths live in build_model; only
/// the knobs that genuinely vary per run are configurable.
struct ModelConfig {
    ModelKind kind = ModelKind::graphsage;
    int iterations = 3;  ///< recurrent conv iterations (gno / mgno)
    std::vector<double> unet_ratios{0.75, 0.75, 2.0 / 3.0, 2.0 / 3.0};
    std::vector<double> unet_radii{0.1, 0.2, 0.5, 1.0, 10.0};
    std::vector<double> mgno_ratios{0.75, 2.0 / 3.0};
    std::vector<double> mgno_radii{0.1, 0.2, 0.5};
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;
};

/// All trainable state of one model, plus its config. Encoder lifts the
/// 4 input features to 8 latent channels, the decoder maps 8 back to the
/// 4 targets; what happens in between depends on the kind.
struct ModelParams {
    ModelConfig config;
    MlpParams encoder;
    MlpParams decoder;
    std::vector<SageParams> sage;          ///< graphsage trunk or unet layers
    std::vector<BatchNormParams> trunk_bn; ///< in application order
    std::vector<MlpParams> kernels;        ///< gno: one; mgno: one per scale
};

/// Connectivity a forward pass needs: a flat graph for graphsage / gno, a
/// pooling ladder for graph_unet / mgno. The referenced object must outlive
/// any tape built from it.
struct GraphInput {
    const RadiusGraph* graph = nullptr;
    const ScaleHierarchy* hierarchy = nullptr;
};

inline ModelParams build_model(const ModelConfig& config, std::uint64_t seed) {
    if (config.iterations < 0)
        throw ConfigError("build_model: iterations must be >= 0");
    Rng rng(mix_seed(seed, seed_tag::param_init));
    ModelParams p;
    p.config = config;
    p.encoder = make_mlp({4, 64, 64, 8}, false, rng);

    switch (config.kind) {
    case ModelKind::graphsage: {
        const int dims[5] = {8, 64, 64, 64, 8};
        for (int l = 0; l < 4; ++l) {
            p.sage.push_back(make_sage(dims[l], dims[l + 1], rng));
            p.trunk_bn.push_back(make_batchnorm(dims[l + 1]));
        }
        break;
    }
    case ModelKind::graph_unet: {
        if (config.unet_radii.size() != config.unet_ratios.size() + 1)
            throw ConfigError("build_model: unet ladder needs one radius per scale");
        // Downward path doubles the width per scale; each upward layer eats the
        // concatenation of the unpooled coarse state and the skip at its scale
        // and emits that scale's downward width again.
        const std::size_t scales = config.unet_radii.size();
        std::vector<int> down(scales + 1);
        down[0] = 8;
        for (std::size_t s = 0; s < scales; ++s)
            down[s + 1] = (s == 0) ? 8 : down[s] * 2;
        for (std::size_t s = 0; s < scales; ++s) {
            p.sage.push_back(make_sage(down[s], down[s + 1], rng));
            p.trunk_bn.push_back(make_batchnorm(down[s + 1]));
        }
        for (std::size_t u = 0; u + 1 < scales; ++u) {
            const std::size_t target = scales - 2 - u;  // scale the layer lands on
            const int in = down[target + 2] + down[target + 1];
            const int out = down[target + 1];
            p.sage.push_back(make_sage(in, out, rng));
            p.trunk_bn.push_back(make_batchnorm(out));
        }
        break;
    }
    case ModelKind::gno:
        p.kernels.push_back(make_mlp({8, 64, 64, 64, 64}, false, rng));
        p.trunk_bn.push_back(make_batchnorm(8));
        break;
    case ModelKind::mgno:
        if (config.mgno_radii.size() != config.mgno_ratios.size() + 1)
            throw ConfigError("build_model: mgno ladder needs one radius per scale");
        for (std::size_t s = 0; s < config.mgno_radii.size(); ++s)
            p.kernels.push_back(make_mlp({8, 64, 64, 64, 64}, false, rng));
        p.trunk_bn.push_back(make_batchnorm(8));
        break;
    }
    p.decoder = make_mlp({8, 64, 64, 4}, false, rng);
    return p;
}

/// Trainable tensors in canonical order (stable across runs and processes;
/// checkpoints and the optimizer index into this order).
inline std::vector<ParamRef> collect_params(ModelParams& p) {
    std::vector<ParamRef> out;
    const auto add_mlp = [&out](const std::string& prefix, MlpParams& mlp) {
        for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
            out.push_back({prefix + ".l" + std::to_string(l) + ".w", &mlp.layers[l].w});
            out.push_back({prefix + ".l" + std::to_string(l) + ".b", &mlp.layers[l].b});
        }
        for (std::size_t b = 0; b < mlp.bns.size(); ++b) {
            out.push_back({prefix + ".bn" + std::to_string(b) + ".gamma", &mlp.bns[b].gamma});
            out.push_back({prefix + ".bn" + std::to_string(b) + ".beta", &mlp.bns[b].beta});
        }
    };
    add_mlp("encoder", p.encoder);
    for (std::size_t l = 0; l < p.sage.size(); ++l) {
        const std::string pre = "trunk.l" + std::to_string(l);
        out.push_back({pre + ".w_self", &p.sage[l].w_self});
        out.push_back({pre + ".w_neigh", &p.sage[l].w_neigh});
        out.push_back({pre + ".b", &p.sage[l].b});
    }
    for (std::size_t b = 0; b < p.trunk_bn.size(); ++b) {
        const std::string pre = "trunk.bn" + std::to_string(b);
        out.push_back({pre + ".gamma", &p.trunk_bn[b].gamma});
        out.push_back({pre + ".beta", &p.trunk_bn[b].beta});
    }
    for (std::size_t k = 0; k < p.kernels.size(); ++k)
        add_mlp("kernel" + std::to_string(k), p.kernels[k]);
    add_mlp("decoder", p.decoder);
    return out;
}

/// Batch-norm blocks in forward application-order; BnUpdate::bn_index refers
/// to positions in this list.
inline std::vector<BatchNormParams*> collect_bns(ModelParams& p) {
    std::vector<BatchNormParams*> out;
    for (auto& bn : p.trunk_bn)
        out.push_back(&bn);
    return out;
}

inline std::uint64_t param_count(ModelParams& p) {
    std::uint64_t n = 0;
    for (const ParamRef& r : collect_params(p))
        n += r.tensor->size();
    return n;
}

namespace detail {

/// Mean-pool plain (non-tape) per-node rows up one hierarchy level.
inline Matrix pool_rows_mean(const Matrix& x, const ScaleHierarchy& hy, std::size_t level) {
    const auto& kids = hy.children.at(level);
    Matrix y(static_cast<int>(kids.size()), x.cols);
    for (std::size_t pnode = 0; pnode < kids.size(); ++pnode) {
        double* yr = y.row(static_cast<int>(pnode));
        for (std::uint32_t c : kids[pnode])
            for (int j = 0; j < x.cols; ++j)
                yr[j] += x.at(static_cast<int>(c), j);
        for (int j = 0; j < x.cols; ++j)
            yr[j] /= static_cast<double>(kids[pnode].size());
    }
    return y;
}

inline int forward_graphsage(Tape& tape, ModelParams& p, int x, const RadiusGraph& g,
                             Mode mode, BnUpdates* updates) {
    int h = mlp_apply(tape, p.encoder, x, mode, p.config.bn_eps);
    for (std::size_t l = 0; l < p.sage.size(); ++l) {
        h = sage_apply(tape, p.sage[l], h, g);
        h = apply_bn(tape, h, p.trunk_bn[l], mode, p.config.bn_eps,
                     static_cast<int>(l), updates);
        h = tape.relu(h);
    }
    return mlp_apply(tape, p.decoder, h, mode, p.config.bn_eps);
}

inline int forward_graph_unet(Tape& tape, ModelParams& p, int x,
                              const ScaleHierarchy& hy, Mode mode, BnUpdates* updates) {
    const std::size_t scales = p.config.unet_radii.size();
    if (hy.levels() != scales)
        throw ConfigError("graph_unet forward: hierarchy level count mismatch");

    int h = mlp_apply(tape, p.encoder, x, mode, p.config.bn_eps);
    std::vector<int> skip(scales - 1, -1);
    for (std::size_t s = 0; s < scales; ++s) {
        h = sage_apply(tape, p.sage[s], h, hy.scales[s].graph);
        h = apply_bn(tape, h, p.trunk_bn[s], mode, p.config.bn_eps,
                     static_cast<int>(s), updates);
        h = tape.relu(h);
        if (s + 1 < scales) {
            skip[s] = h;
            h = tape.pool_mean(h, hy, s);
        }
    }
    for (std::size_t u = 0; u + 1 < scales; ++u) {
        const std::size_t target = scales - 2 - u;
        h = tape.unpool_nearest(h, hy, target);
        h = tape.concat_cols(h, skip[target]);
        const std::size_t layer = scales + u;
        h = sage_apply(tape, p.sage[layer], h, hy.scales[target].graph);
        h = apply_bn(tape, h, p.trunk_bn[layer], mode, p.config.bn_eps,
                     static_cast<int>(layer), updates);
        h = tape.relu(h);
    }
    return mlp_apply(tape, p.decoder, h, mode, p.config.bn_eps);
}

inline int forward_gno(Tape& tape, ModelParams& p, int x, const Matrix& x_static,
                       const RadiusGraph& g, Mode mode, BnUpdates* updates) {
    int h = mlp_apply(tape, p.encoder, x, mode, p.config.bn_eps);
    for (int t = 0; t < p.config.iterations; ++t) {
        const int dec = mlp_apply(tape, p.decoder, h, mode, p.config.bn_eps);
        const int attrs = tape.gather_edge_attrs(dec, x_static, g);
        const int kout = mlp_apply(tape, p.kernels[0], attrs, mode, p.config.bn_eps);
        h = tape.kernel_combine(h, kout, g);
        h = apply_bn(tape, h, p.trunk_bn[0], mode, p.config.bn_eps, 0, updates);
    }
    return mlp_apply(tape, p.decoder, h, mode, p.config.bn_eps);
}

inline int forward_mgno(Tape& tape, ModelParams& p, int x, const Matrix& x_static,
                        const ScaleHierarchy& hy, Mode mode, BnUpdates* updates) {
    const std::size_t scales = p.config.mgno_radii.size();
    if (hy.levels() != scales)
        throw ConfigError("mgno forward: hierarchy level count mismatch");
    if (p.kernels.size() != scales)
        throw ConfigError("mgno forward: one kernel per scale required");

    // Static edge inputs per scale: mean-pooled copies of the node features.
    std::vector<Matrix> xs(scales);
    xs[0] = x_static;
    for (std::size_t s = 0; s + 1 < scales; ++s)
        xs[s + 1] = pool_rows_mean(xs[s], hy, s);

    int h = mlp_apply(tape, p.encoder, x, mode, p.config.bn_eps);
    for (int t = 0; t < p.config.iterations; ++t) {
        std::vector<int> f(scales);
        f[0] = h;
        for (std::size_t s = 0; s + 1 < scales; ++s)
            f[s + 1] = tape.pool_mean(f[s], hy, s);
        int up = -1;
        for (std::size_t s = scales; s-- > 0;) {
            const int dec = mlp_apply(tape, p.decoder, f[s], mode, p.config.bn_eps);
            const int attrs = tape.gather_edge_attrs(dec, xs[s], hy.scales[s].graph);
            const int kout = mlp_apply(tape, p.kernels[s], attrs, mode, p.config.bn_eps);
            const int conv = tape.kernel_combine(f[s], kout, hy.scales[s].graph);
            up = (up < 0) ? conv : tape.add(conv, tape.unpool_nearest(up, hy, s));
        }
        h = apply_bn(tape, up, p.trunk_bn[0], mode, p.config.bn_eps, 0, updates);
    }
    return mlp_apply(tape, p.decoder, h, mode, p.config.bn_eps);
}

} // namespace detail

/// Run one forward pass. `x` holds the normalized node features (N x 4) and
/// must outlive the tape (edge-attribute closures may reference it). Returns
/// the tape id of the (N x 4) prediction in normalized target units.
inline int model_forward(Tape& tape, ModelParams& p, const Matrix& x,
                         const GraphInput& input, Mode mode = Mode::eval,
                         BnUpdates* updates = nullptr) {
    if (x.cols != 4)
        throw ShapeError("model_forward: input features must be N x 4");
    const int xid = tape.leaf(x);
    switch (p.config.kind) {
    case ModelKind::graphsage:
        if (!input.graph)
            throw ConfigError("model_forward: graphsage needs a radius graph");
        if (static_cast<std::size_t>(x.rows) != input.graph->size())
            throw ShapeError("model_forward: feature rows do not match graph size");
        return detail::forward_graphsage(tape, p, xid, *input.graph, mode, updates);
    case ModelKind::graph_unet:
        if (!input.hierarchy)
            throw ConfigError("model_forward: graph_unet needs a pooling hierarchy");
        if (static_cast<std::size_t>(x.rows) != input.hierarchy->scales[0].nodes.size())
            throw ShapeError("model_forward: feature rows do not match hierarchy");
        return detail::forward_graph_unet(tape, p, xid, *input.hierarchy, mode, updates);
    case ModelKind::gno:
        if (!input.graph)
            throw ConfigError("model_forward: gno needs a radius graph");
        if (static_cast<std::size_t>(x.rows) != input.graph->size())
            throw ShapeError("model_forward: feature rows do not match graph size");
        return detail::forward_gno(tape, p, xid, x, *input.graph, mode, updates);
    case ModelKind::mgno:
        if (!input.hierarchy)
            throw ConfigError("model_forward: mgno needs a pooling hierarchy");
        if (static_cast<std::size_t>(x.rows) != input.hierarchy->scales[0].nodes.size())
            throw ShapeError("model_forward: feature rows do not match hierarchy");
        return detail::forward_mgno(tape, p, xid, x, *input.hierarchy, mode, updates);
    }
    throw ConfigError("model_forward: unhandled model kind");
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// "AFP1" files hold named f64 arrays in canonical order: every trainable
// tensor from collect_params, then each batch-norm block's running_mean /
// running_var. A JSON sidecar "<path>.config.json" stores the ModelConfig so
// a checkpoint alone reconstructs the architecture.
// ---------------------------------------------------------------------------

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
    nlohmann::json j;
    j["kind"] = to_string(c.kind);
    j["iterations"] = c.iterations;
    j["unet_ratios"] = c.unet_ratios;
    j["unet_radii"] = c.unet_radii;
    j["mgno_ratios"] = c.mgno_ratios;
    j["mgno_radii"] = c.mgno_radii;
    j["bn_eps"] = c.bn_eps;
    j["bn_momentum"] = c.bn_momentum;
    return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    try {
        c.kind = model_kind_from_string(j.at("kind").get<std::string>());
        c.iterations = j.at("iterations").get<int>();
        c.unet_ratios = j.at("unet_ratios").get<std::vector<double>>();
        c.unet_radii = j.at("unet_radii").get<std::vector<double>>();
        c.mgno_ratios = j.at("mgno_ratios").get<std::vector<double>>();
        c.mgno_radii = j.at("mgno_radii").get<std::vector<double>>();
        c.bn_eps = j.at("bn_eps").get<double>();
        c.bn_momentum = j.at("bn_momentum").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("model config: ") + e.what());
    }
    return c;
}

namespace detail {

struct NamedArray {
    std::string name;
    const double* data;
    std::size_t count;
};

inline void checkpoint_arrays(ModelParams& p, std::vector<NamedArray>& out) {
    for (const ParamRef& r : collect_params(p))
        out.push_back({r.name, r.tensor->a.data(), r.tensor->size()});
    const auto bns = collect_bns(p);
    for (std::size_t b = 0; b < bns.size(); ++b) {
        out.push_back({"trunk.bn" + std::to_string(b) + ".running_mean",
                       bns[b]->running_mean.data(), bns[b]->running_mean.size()});
        out.push_back({"trunk.bn" + std::to_string(b) + ".running_var",
                       bns[b]->running_var.data(), bns[b]->running_var.size()});
    }
}

} // namespace detail

inline void write_checkpoint(ModelParams& p, const std::filesystem::path& path) {
    std::vector<detail::NamedArray> arrays;
    detail::checkpoint_arrays(p, arrays);

    std::string buf;
    buf.append("AFP1", 4);
    {
        char b[4];
        const auto n = static_cast<std::uint32_t>(arrays.size());
        std::memcpy(b, &n, 4);
        buf.append(b, 4);
    }
    for (const auto& arr : arrays) {
        char b[8];
        const auto len = static_cast<std::uint32_t>(arr.name.size());
        std::memcpy(b, &len, 4);
        buf.append(b, 4);
        buf.append(arr.name);
        const auto cnt = static_cast<std::uint64_t>(arr.count);
        std::memcpy(b, &cnt, 8);
        buf.append(b, 8);
        buf.append(reinterpret_cast<const char*>(arr.data), arr.count * 8);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("write_checkpoint: cannot open " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out)
        throw IoError("write_checkpoint: short write to " + path.string());

    std::filesystem::path cfg_path = path;
    cfg_path += ".config.json";
    std::ofstream cfg(cfg_path, std::ios::trunc);
    if (!cfg)
        throw IoError("write_checkpoint: cannot open " + cfg_path.string());
    cfg << model_config_to_json(p.config).dump(2) << "\n";
}

inline ModelParams read_checkpoint(const std::filesystem::path& path) {
    std::filesystem::path cfg_path = path;
    cfg_path += ".config.json";
    std::ifstream cfg(cfg_path);
    if (!cfg)
        throw IoError("read_checkpoint: cannot open " + cfg_path.string());
    nlohmann::json j;
    try {
        cfg >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("read_checkpoint: invalid config JSON: " + std::string(e.what()));
    }
    ModelParams p = build_model(model_config_from_json(j), 0);

    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("read_checkpoint: cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string buf = ss.str();
    std::size_t pos = 0;
    const auto need = [&](std::size_t n, const char* what) {
        if (pos + n > buf.size())
            throw FormatError(std::string("checkpoint truncated while reading ") + what);
    };
    need(4, "magic");
    if (buf.compare(0, 4, "AFP1") != 0)
        throw FormatError("read_checkpoint: bad magic in " + path.string());
    pos = 4;
    need(4, "array count");
    std::uint32_t count;
    std::memcpy(&count, buf.data() + pos, 4);
    pos += 4;

    std::vector<detail::NamedArray> expect;
    detail::checkpoint_arrays(p, expect);
    if (count != expect.size())
        throw FormatError("read_checkpoint: array count " + std::to_string(count) +
                          " does not match architecture (" +
                          std::to_string(expect.size()) + ")");
    for (const auto& arr : expect) {
        need(4, "name length");
        std::uint32_t len;
        std::memcpy(&len, buf.data() + pos, 4);
        pos += 4;
        need(len, "name");
        const std::string name = buf.substr(pos, len);
        pos += len;
        if (name != arr.name)
            throw FormatError("read_checkpoint: expected array '" + arr.name +
                              "', found '" + name + "'");
        need(8, "element count");
        std::uint64_t cnt;
        std::memcpy(&cnt, buf.data() + pos, 8);
        pos += 8;
        if (cnt != arr.count)
            throw FormatError("read_checkpoint: array '" + name + "' has " +
                              std::to_string(cnt) + " elements, expected " +
                              std::to_string(arr.count));
        need(cnt * 8, "array data");
        std::memcpy(const_cast<double*>(arr.data), buf.data() + pos, cnt * 8);
        pos += cnt * 8;
    }
    if (pos != buf.size())
        throw FormatError("read_checkpoint: trailing bytes in " + path.string());
    return p;
}

} // namespace afb
