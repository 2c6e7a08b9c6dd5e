#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "afb/error.hpp"
#include "afb/mesh.hpp"
#include "afb/rng.hpp"
#include "afb/vec.hpp"

namespace afb {

/// Neighborhood graph over a point set. `nodes` maps local indices back to the
/// parent point list; `edges` are directed (src, dst) pairs in local indices,
/// sorted lexicographically. An edge (j, i) means j feeds the aggregation at i.
struct RadiusGraph {
    std::vector<std::uint32_t> nodes;
    std::vector<std::array<std::uint32_t, 2>> edges;
    double radius = 0.0;
    std::uint32_t max_neighbors = 0;

    std::size_t size() const { return nodes.size(); }
};

namespace detail {

/// Uniform grid with cell size = radius, so any neighbor of a point lives in
/// the 3x3 cell block around it.
struct CellGrid {
    double cell;
    std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> cells;

    static std::uint64_t key(std::int64_t ix, std::int64_t iy) {
        return (static_cast<std::uint64_t>(ix + (1LL << 31)) << 32) |
               static_cast<std::uint64_t>(iy + (1LL << 31));
    }

    CellGrid(const std::vector<Vec2>& pts, double cell_size) : cell(cell_size) {
        cells.reserve(pts.size());
        for (std::uint32_t i = 0; i < pts.size(); ++i) {
            const auto ix = static_cast<std::int64_t>(std::floor(pts[i].x / cell));
            const auto iy = static_cast<std::int64_t>(std::floor(pts[i].y / cell));
            cells[key(ix, iy)].push_back(i);
        }
    }

    /// All point indices within the 3x3 block around p, ascending.
    void gather(const Vec2& p, std::vector<std::uint32_t>& out) const {
        out.clear();
        const auto ix = static_cast<std::int64_t>(std::floor(p.x / cell));
        const auto iy = static_cast<std::int64_t>(std::floor(p.y / cell));
        for (std::int64_t dx = -1; dx <= 1; ++dx)
            for (std::int64_t dy = -1; dy <= 1; ++dy) {
                const auto it = cells.find(key(ix + dx, iy + dy));
                if (it != cells.end())
                    out.insert(out.end(), it->second.begin(), it->second.end());
            }
        std::sort(out.begin(), out.end());
    }
};

} // namespace detail

/// Connect every ordered pair of distinct points at Euclidean distance <= radius
/// (closed ball; coincident points connect, a point never connects to itself).
/// When a destination collects more than max_neighbors sources, a seeded uniform
/// subset of exactly max_neighbors is kept; the draw depends only on
/// (seed, destination index), so results are reproducible and order independent.
inline RadiusGraph build_radius_graph(const std::vector<Vec2>& points, double radius,
                                      std::uint32_t max_neighbors, std::uint64_t seed) {
    if (!(radius > 0.0) || !std::isfinite(radius))
        throw ArgumentError("build_radius_graph: radius must be positive and finite");

    RadiusGraph g;
    g.radius = radius;
    g.max_neighbors = max_neighbors;
    g.nodes.resize(points.size());
    for (std::uint32_t i = 0; i < points.size(); ++i)
        g.nodes[i] = i;

    if (points.empty())
        return g;

    const detail::CellGrid grid(points, radius);
    const double r2 = radius * radius;
    std::vector<std::uint32_t> block, cand;
    for (std::uint32_t i = 0; i < points.size(); ++i) {
        grid.gather(points[i], block);
        cand.clear();
        for (std::uint32_t j : block)
            if (j != i && (points[j] - points[i]).norm2() <= r2)
                cand.push_back(j);
        if (cand.size() > max_neighbors) {
            Rng rng(mix_seed(seed, seed_tag::neighbor_cap, i));
            const auto keep = sample_without_replacement(cand.size(), max_neighbors, rng);
            std::vector<std::uint32_t> kept;
            kept.reserve(keep.size());
            for (std::uint32_t slot : keep)
                kept.push_back(cand[slot]);
            cand = std::move(kept);
        }
        for (std::uint32_t j : cand)
            g.edges.push_back({j, i});
    }
    std::sort(g.edges.begin(), g.edges.end());
    return g;
}

/// Quadratic-time reference for build_radius_graph with no neighbor cap.
/// Kept deliberately independent of the grid code so the two can check each other.
inline std::vector<std::array<std::uint32_t, 2>>
brute_force_neighbors(const std::vector<Vec2>& points, double radius) {
    if (!(radius > 0.0) || !std::isfinite(radius))
        throw ArgumentError("brute_force_neighbors: radius must be positive and finite");
    std::vector<std::array<std::uint32_t, 2>> edges;
    const double r2 = radius * radius;
    for (std::uint32_t s = 0; s < points.size(); ++s)
        for (std::uint32_t d = 0; d < points.size(); ++d)
            if (s != d && (points[s] - points[d]).norm2() <= r2)
                edges.push_back({s, d});
    std::sort(edges.begin(), edges.end());
    return edges;
}

/// n distinct node indices drawn uniformly without replacement, ascending.
/// n equal to the node count returns every index.
inline std::vector<std::uint32_t> subsample(const MeshSample& sample, std::size_t n,
                                            std::uint64_t seed) {
    if (n < 1 || n > sample.node_count())
        throw ArgumentError("subsample: n must be in [1, node count]");
    Rng rng(mix_seed(seed, seed_tag::subsample));
    return sample_without_replacement(sample.node_count(), n, rng);
}

/// One resolution level of a pooling ladder.
struct ScaleLevel {
    std::vector<std::uint32_t> nodes;  ///< indices into the original point list
    RadiusGraph graph;                 ///< edges in local (per-scale) indices
};

/// Multi-resolution ladder: nested node subsets, one radius graph per scale,
/// and fine->coarse assignments. parent[k][i] is the local index in scale k+1
/// that fine node i (local in scale k) pools into; children[k][p] lists the
/// fine nodes assigned to coarse node p. Every coarse node is its own parent,
/// so no child list is ever empty.
struct ScaleHierarchy {
    std::vector<ScaleLevel> scales;
    std::vector<std::vector<std::uint32_t>> parent;
    std::vector<std::vector<std::vector<std::uint32_t>>> children;

    std::size_t levels() const { return scales.size(); }
};

namespace detail {

/// True when the undirected version of the graph has one connected component.
inline bool graph_connected(const RadiusGraph& g) {
    const std::size_t n = g.size();
    if (n <= 1)
        return true;
    std::vector<std::vector<std::uint32_t>> adj(n);
    for (const auto& e : g.edges) {
        adj[e[0]].push_back(e[1]);
        adj[e[1]].push_back(e[0]);
    }
    std::vector<char> seen(n, 0);
    std::vector<std::uint32_t> stack{0};
    seen[0] = 1;
    std::size_t count = 1;
    while (!stack.empty()) {
        const std::uint32_t v = stack.back();
        stack.pop_back();
        for (std::uint32_t w : adj[v])
            if (!seen[w]) {
                seen[w] = 1;
                ++count;
                stack.push_back(w);
            }
    }
    return count == n;
}

} // namespace detail

/// Build a pooling ladder over `points`. Scale 0 keeps every point; scale k+1
/// keeps round(ratios[k] * |scale k|) nodes, drawn uniformly (seeded) from
/// scale k. radii/caps give one radius graph per scale (radii.size() must be
/// ratios.size() + 1). Parents are nearest retained nodes, ties going to the
/// lowest original index.
///
/// require_connected_last_scale asserts the coarsest graph is one component;
/// ladders whose last radius is meant to span the whole domain should pass true.
inline ScaleHierarchy pooling_hierarchy(const std::vector<Vec2>& points,
                                        const std::vector<double>& ratios,
                                        const std::vector<double>& radii,
                                        const std::vector<std::uint32_t>& caps,
                                        std::uint64_t seed,
                                        bool require_connected_last_scale = false) {
    if (points.empty())
        throw ArgumentError("pooling_hierarchy: empty point set");
    if (radii.size() != ratios.size() + 1)
        throw ArgumentError("pooling_hierarchy: need one radius per scale "
                            "(radii.size() == ratios.size() + 1)");
    if (caps.size() != radii.size())
        throw ArgumentError("pooling_hierarchy: need one neighbor cap per scale");
    for (double r : ratios)
        if (!(r > 0.0 && r <= 1.0))
            throw ArgumentError("pooling_hierarchy: ratios must lie in (0, 1]");

    ScaleHierarchy h;
    h.scales.resize(radii.size());
    h.scales[0].nodes.resize(points.size());
    for (std::uint32_t i = 0; i < points.size(); ++i)
        h.scales[0].nodes[i] = i;

    for (std::size_t k = 0; k + 1 < h.scales.size(); ++k) {
        const std::size_t fine_n = h.scales[k].nodes.size();
        const auto coarse_n =
            static_cast<std::size_t>(std::lround(ratios[k] * static_cast<double>(fine_n)));
        if (coarse_n == 0)
            throw ArgumentError("pooling_hierarchy: scale " + std::to_string(k + 1) +
                                " collapses to zero nodes");
        Rng rng(mix_seed(seed, seed_tag::pool_select, k));
        const auto picks = sample_without_replacement(fine_n, coarse_n, rng);
        auto& coarse = h.scales[k + 1].nodes;
        coarse.reserve(coarse_n);
        for (std::uint32_t local : picks)
            coarse.push_back(h.scales[k].nodes[local]);
    }

    for (std::size_t k = 0; k < h.scales.size(); ++k) {
        std::vector<Vec2> pts;
        pts.reserve(h.scales[k].nodes.size());
        for (std::uint32_t gi : h.scales[k].nodes)
            pts.push_back(points[gi]);
        h.scales[k].graph = build_radius_graph(pts, radii[k], caps[k],
                                               mix_seed(seed, seed_tag::scale_graph, k));
        h.scales[k].graph.nodes = h.scales[k].nodes;
    }

    h.parent.resize(h.scales.size() - 1);
    h.children.resize(h.scales.size() - 1);
    for (std::size_t k = 0; k + 1 < h.scales.size(); ++k) {
        const auto& fine = h.scales[k].nodes;
        const auto& coarse = h.scales[k + 1].nodes;
        h.parent[k].resize(fine.size());
        h.children[k].assign(coarse.size(), {});
        for (std::uint32_t i = 0; i < fine.size(); ++i) {
            const Vec2 p = points[fine[i]];
            std::uint32_t best = 0;
            double best_d2 = std::numeric_limits<double>::infinity();
            for (std::uint32_t c = 0; c < coarse.size(); ++c) {
                const double d2 = (points[coarse[c]] - p).norm2();
                if (d2 < best_d2) {
                    best_d2 = d2;
                    best = c;
                }
            }
            h.parent[k][i] = best;
            h.children[k][best].push_back(i);
        }
    }

    if (require_connected_last_scale && !detail::graph_connected(h.scales.back().graph))
        throw TopologyError("pooling_hierarchy: coarsest scale graph is disconnected; "
                            "its radius does not span the retained nodes");
    return h;
}

} // namespace afb
