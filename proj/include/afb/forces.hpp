#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "afb/error.hpp"
#include "afb/graph.hpp"
#include "afb/mesh.hpp"
#include "afb/vec.hpp"

namespace afb {

/// Per-node physical fields, same channel layout as MeshSample::targets.
using FlowField = std::vector<std::array<double, 4>>;

/// Everything drag_lift produces: per-node stresses in chain order, their
/// boundary integrals, and the force components. drag/lift are exactly the
/// component sums of the two integrals, stored for convenience.
struct SurfaceForces {
    std::vector<std::uint32_t> nodes;  ///< chain order, global node indices
    std::vector<Vec2> tau;             ///< wall shear stress per chain node
    std::vector<Vec2> wp;              ///< wall pressure force per chain node
    Vec2 integral_tau{};
    Vec2 integral_wp{};
    double drag = 0.0;
    double lift = 0.0;
};

namespace detail {

/// Gradient of the linear interpolant of (fa, fb, fc) over one triangle.
/// det2 is twice the signed area, precomputed by the caller.
inline Vec2 p1_gradient(const Vec2& ab, const Vec2& ac, double det2, double fa,
                        double fb, double fc) {
    const double r0 = fb - fa;
    const double r1 = fc - fa;
    return {(ac.y * r0 - ab.y * r1) / det2, (-ac.x * r0 + ab.x * r1) / det2};
}

} // namespace detail

/// Per-node velocity gradient J with J[r][c] = d u_r / d x_c.
///
/// Each triangle contributes its constant linear-element gradient, averaged at
/// nodes with |area| weights; this is exact for affine velocity fields. Nodes
/// that touch no triangle fall back to a weighted least-squares fit over their
/// in-neighbors in `fallback` (weights 1/d^2, also affine-exact). A node with
/// neither triangles nor two usable, non-collinear neighbors is a RankError.
inline std::vector<Mat2> velocity_jacobian(const MeshSample& sample,
                                           const FlowField& field,
                                           const RadiusGraph* fallback = nullptr) {
    const std::size_t n = sample.node_count();
    if (field.size() != n)
        throw ShapeError("velocity_jacobian: field size does not match node count");

    std::vector<Mat2> acc(n);
    std::vector<double> weight(n, 0.0);

    for (std::size_t t = 0; t < sample.triangles.size(); ++t) {
        const auto& tri = sample.triangles[t];
        const Vec2 pa = sample.node_pos[tri[0]];
        const Vec2 ab = sample.node_pos[tri[1]] - pa;
        const Vec2 ac = sample.node_pos[tri[2]] - pa;
        const double det2 = ab.x * ac.y - ab.y * ac.x;
        if (std::abs(det2) <= 1e-14 * (ab.norm2() + ac.norm2()))
            throw DegenerateGeometryError("velocity_jacobian: triangle " +
                                          std::to_string(t) + " has zero area");
        const Vec2 gx = detail::p1_gradient(ab, ac, det2, field[tri[0]][0],
                                            field[tri[1]][0], field[tri[2]][0]);
        const Vec2 gy = detail::p1_gradient(ab, ac, det2, field[tri[0]][1],
                                            field[tri[1]][1], field[tri[2]][1]);
        Mat2 jt;
        jt.m[0][0] = gx.x;
        jt.m[0][1] = gx.y;
        jt.m[1][0] = gy.x;
        jt.m[1][1] = gy.y;
        const double w = 0.5 * std::abs(det2);
        for (int k = 0; k < 3; ++k) {
            acc[tri[k]] = acc[tri[k]] + jt * w;
            weight[tri[k]] += w;
        }
    }

    std::vector<Mat2> out(n);
    std::vector<std::uint32_t> orphans;
    for (std::size_t i = 0; i < n; ++i) {
        if (weight[i] > 0.0)
            out[i] = acc[i] * (1.0 / weight[i]);
        else
            orphans.push_back(static_cast<std::uint32_t>(i));
    }
    if (orphans.empty())
        return out;

    if (fallback == nullptr)
        throw RankError("velocity_jacobian: node " + std::to_string(orphans[0]) +
                        " touches no triangle and no fallback graph was given");
    if (fallback->size() != n)
        throw ShapeError("velocity_jacobian: fallback graph does not cover the mesh");

    std::vector<std::vector<std::uint32_t>> in_nb(n);
    for (const auto& e : fallback->edges)
        in_nb[e[1]].push_back(e[0]);

    for (std::uint32_t i : orphans) {
        double a00 = 0.0, a01 = 0.0, a11 = 0.0;
        Vec2 bx{}, by{};
        std::size_t used = 0;
        for (std::uint32_t j : in_nb[i]) {
            const Vec2 d = sample.node_pos[j] - sample.node_pos[i];
            const double d2 = d.norm2();
            if (d2 == 0.0)
                continue;  // coincident point constrains nothing
            const double w = 1.0 / d2;
            a00 += w * d.x * d.x;
            a01 += w * d.x * d.y;
            a11 += w * d.y * d.y;
            bx = bx + w * (field[j][0] - field[i][0]) * d;
            by = by + w * (field[j][1] - field[i][1]) * d;
            ++used;
        }
        const double det = a00 * a11 - a01 * a01;
        if (used < 2 || std::abs(det) <= 1e-12 * (a00 + a11) * (a00 + a11))
            throw RankError("velocity_jacobian: node " + std::to_string(i) +
                            " has fewer than two independent neighbor directions");
        const auto solve = [&](const Vec2& b) -> Vec2 {
            return {(a11 * b.x - a01 * b.y) / det, (-a01 * b.x + a00 * b.y) / det};
        };
        const Vec2 gx = solve(bx);
        const Vec2 gy = solve(by);
        out[i].m[0][0] = gx.x;
        out[i].m[0][1] = gx.y;
        out[i].m[1][0] = gy.x;
        out[i].m[1][1] = gy.y;
    }
    return out;
}

/// S = (J + J^T) / 2.
inline Mat2 strain_rate(const Mat2& j) { return symmetric_part(j); }

/// div u = tr J, per node.
inline std::vector<double> divergence(const MeshSample& sample, const FlowField& field,
                                      const RadiusGraph* fallback = nullptr) {
    const auto jac = velocity_jacobian(sample, field, fallback);
    std::vector<double> out(jac.size());
    for (std::size_t i = 0; i < jac.size(); ++i)
        out[i] = jac[i].trace();
    return out;
}

/// tau_i = 2 (nu + nu_t,i) S_i n_i on each wall node, in chain order.
/// Kinematic convention: multiply by density for an absolute force.
inline std::vector<Vec2> wall_shear_stress(const MeshSample& sample,
                                           const FlowField& field,
                                           const PhysicsConfig& physics = {},
                                           const std::vector<Mat2>* jacobians = nullptr) {
    const SurfaceChain chain = surface_chain(sample);
    const auto normals = surface_normals(sample);
    std::vector<Mat2> local;
    if (jacobians == nullptr) {
        local = velocity_jacobian(sample, field);
        jacobians = &local;
    }
    std::vector<Vec2> out(chain.nodes.size());
    for (std::size_t k = 0; k < chain.nodes.size(); ++k) {
        const std::uint32_t i = chain.nodes[k];
        const Mat2 s = strain_rate((*jacobians)[i]);
        out[k] = 2.0 * (physics.nu + field[i][3]) * (s * normals[k]);
    }
    return out;
}

/// P_i = -p_i n_i on each wall node, in chain order.
inline std::vector<Vec2> wall_pressure(const MeshSample& sample, const FlowField& field) {
    const SurfaceChain chain = surface_chain(sample);
    const auto normals = surface_normals(sample);
    std::vector<Vec2> out(chain.nodes.size());
    for (std::size_t k = 0; k < chain.nodes.size(); ++k)
        out[k] = -field[chain.nodes[k]][2] * normals[k];
    return out;
}

/// Trapezoidal quadrature of a per-wall-node vector field along the wall
/// polyline (open chains integrate over their span; closed loops all the way
/// around). `values` must be in chain order, one entry per chain node.
inline Vec2 integrate_surface(const MeshSample& sample, const std::vector<Vec2>& values) {
    const SurfaceChain chain = surface_chain(sample);
    if (values.size() != chain.nodes.size())
        throw ShapeError("integrate_surface: one value per surface chain node required");
    Vec2 acc{};
    const std::size_t m = chain.nodes.size();
    for (std::size_t e = 0; e < sample.surface_edges.size(); ++e) {
        const std::size_t sa = e;
        const std::size_t sb = (e + 1) % m;
        const double len = (sample.node_pos[sample.surface_edges[e][1]] -
                            sample.node_pos[sample.surface_edges[e][0]])
                               .norm();
        acc = acc + 0.5 * len * (values[sa] + values[sb]);
    }
    return acc;
}

/// Integrate wall pressure and shear into drag (x) and lift (y).
inline SurfaceForces drag_lift(const MeshSample& sample, const FlowField& field,
                               const PhysicsConfig& physics = {}) {
    SurfaceForces f;
    f.nodes = surface_chain(sample).nodes;
    const auto jac = velocity_jacobian(sample, field);
    f.tau = wall_shear_stress(sample, field, physics, &jac);
    f.wp = wall_pressure(sample, field);
    f.integral_tau = integrate_surface(sample, f.tau);
    f.integral_wp = integrate_surface(sample, f.wp);
    f.drag = f.integral_wp.x + f.integral_tau.x;
    f.lift = f.integral_wp.y + f.integral_tau.y;
    return f;
}

/// Per-wall-node stress table: node,x,y,tau_x,tau_y,wp_x,wp_y. Full precision.
inline void write_forces_csv(const MeshSample& sample, const SurfaceForces& forces,
                             const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw IoError("write_forces_csv: cannot open " + path.string());
    out << "node,x,y,tau_x,tau_y,wp_x,wp_y\n";
    char line[256];
    for (std::size_t k = 0; k < forces.nodes.size(); ++k) {
        const std::uint32_t i = forces.nodes[k];
        std::snprintf(line, sizeof line, "%u,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", i,
                      sample.node_pos[i].x, sample.node_pos[i].y, forces.tau[k].x,
                      forces.tau[k].y, forces.wp[k].x, forces.wp[k].y);
        out << line;
    }
    if (!out)
        throw IoError("write_forces_csv: short write to " + path.string());
}

} // namespace afb
