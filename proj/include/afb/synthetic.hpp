#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "afb/error.hpp"
#include "afb/mesh.hpp"
#include "afb/rng.hpp"
#include "afb/vec.hpp"

namespace afb {

/// Parameters of one synthetic flow case.
///
/// couette: plane shear between y = 0 (wall, the "surface") and y = scale
/// (moving lid at u_inf). cylinder: potential flow with circulation around a
/// regular polygon of circumradius `scale`; positive circulation produces
/// positive (upward) lift for a free stream along +x.
struct CaseSpec {
    enum class Kind { couette, cylinder };

    Kind kind = Kind::cylinder;
    double u_inf = 1.0;
    double circulation = 0.0;       ///< cylinder only
    double scale = 1.0;             ///< channel height / cylinder radius
    std::uint32_t segments = 64;    ///< wall segment count
    std::uint32_t volume_nodes = 1024;  ///< requested off-wall node budget
    std::uint64_t seed = 0;
    bool nut_bump = false;          ///< add a smooth nu_t field, zero on the wall
    /// Off-wall node perturbation as a fraction of the local lattice spacing.
    /// Zero yields a regular family, which convergence studies need; training
    /// corpora keep the default irregularity.
    double jitter = 0.25;
};

namespace detail {

inline void check_case(const CaseSpec& spec) {
    if (!(spec.scale > 0.0) || !std::isfinite(spec.scale))
        throw ArgumentError("CaseSpec: scale must be positive and finite");
    if (!std::isfinite(spec.u_inf) || !std::isfinite(spec.circulation))
        throw ArgumentError("CaseSpec: u_inf and circulation must be finite");
    if (spec.segments < 8 || spec.volume_nodes < 8)
        throw ArgumentError("CaseSpec: segments and volume_nodes must be >= 8");
    if (!(spec.jitter >= 0.0 && spec.jitter <= 0.45))
        throw ArgumentError("CaseSpec: jitter must be in [0, 0.45]");
}

} // namespace detail

/// Short human-readable description for sample sidecars.
inline std::string case_provenance(const CaseSpec& spec) {
    const char* name = spec.kind == CaseSpec::Kind::couette ? "couette" : "cylinder";
    return std::string("synthetic ") + name + " u_inf=" + std::to_string(spec.u_inf) +
           " circulation=" + std::to_string(spec.circulation) +
           " scale=" + std::to_string(spec.scale) +
           " segments=" + std::to_string(spec.segments) +
           " volume_nodes=" + std::to_string(spec.volume_nodes) +
           " seed=" + std::to_string(spec.seed);
}

// ---------------------------------------------------------------------------
// Analytic cylinder flow. Complex velocity F(z) = u_x - i u_y for a free
// stream U along +x around |z| = a with circulation G (positive = clockwise
// bound vortex, i.e. lift is +U*G):
//   F(z)  = U (1 - a^2/z^2) + i G / (2 pi z)
//   F'(z) = 2 U a^2 / z^3   - i G / (2 pi z^2)
// F' packs the whole velocity gradient: with F' = A + iB the Jacobian is
// [[A, -B], [-B, -A]] (traceless and curl-free, as potential flow must be).
// ---------------------------------------------------------------------------

inline Vec2 cylinder_velocity(const CaseSpec& spec, const Vec2& p) {
    const std::complex<double> z(p.x, p.y);
    const double a = spec.scale;
    const std::complex<double> f =
        spec.u_inf * (1.0 - a * a / (z * z)) +
        std::complex<double>(0.0, spec.circulation) / (2.0 * std::numbers::pi * z);
    return {f.real(), -f.imag()};
}

/// Reduced pressure from Bernoulli with far-field pressure 0.
inline double cylinder_pressure(const CaseSpec& spec, const Vec2& p) {
    const Vec2 u = cylinder_velocity(spec, p);
    return 0.5 * (spec.u_inf * spec.u_inf - u.norm2());
}

inline Mat2 cylinder_velocity_gradient(const CaseSpec& spec, const Vec2& p) {
    const std::complex<double> z(p.x, p.y);
    const double a = spec.scale;
    const std::complex<double> fp =
        2.0 * spec.u_inf * a * a / (z * z * z) -
        std::complex<double>(0.0, spec.circulation) /
            (2.0 * std::numbers::pi * z * z);
    Mat2 j;
    j.m[0][0] = fp.real();
    j.m[0][1] = -fp.imag();
    j.m[1][0] = -fp.imag();
    j.m[1][1] = -fp.real();
    return j;
}

namespace detail {

inline double nut_bump_value(double wall_distance, double amplitude, double width) {
    const double t = wall_distance / width;
    return amplitude * t * t * std::exp(-2.0 * t);
}

} // namespace detail

/// Plane Couette channel on [0,1] x [0,h]. The wall is the bottom row, stored
/// as an open chain traversed right to left so its normals point up into the
/// fluid. Velocity is the exact shear profile (U y / h, 0), pressure is zero,
/// sdf is exactly y. The lattice is regular: every derived quantity that is
/// affine in position (velocity gradients, wall stress) comes out exact.
inline MeshSample gen_couette(const CaseSpec& spec) {
    detail::check_case(spec);
    const double h = spec.scale;
    const std::uint32_t nx = spec.segments + 1;
    const std::uint32_t ny =
        std::max<std::uint32_t>(2, 1 + static_cast<std::uint32_t>(std::lround(
                                         static_cast<double>(spec.volume_nodes) / nx)));

    MeshSample s;
    s.inlet_speed = spec.u_inf;
    s.angle_of_attack = 0.0;
    const std::uint32_t n = nx * ny;
    s.node_pos.resize(n);
    s.sdf.resize(n);
    s.surface_mask.assign(n, 0);
    s.targets.resize(n);

    for (std::uint32_t j = 0; j < ny; ++j)
        for (std::uint32_t i = 0; i < nx; ++i) {
            const std::uint32_t id = j * nx + i;
            const double x = static_cast<double>(i) / spec.segments;
            const double y = h * static_cast<double>(j) / (ny - 1);
            s.node_pos[id] = {x, y};
            s.sdf[id] = y;
            const double nut = spec.nut_bump
                                   ? detail::nut_bump_value(y, 1e-3 * spec.u_inf * h, h)
                                   : 0.0;
            s.targets[id] = {spec.u_inf * y / h, 0.0, 0.0, nut};
        }
    for (std::uint32_t i = 0; i < nx; ++i)
        s.surface_mask[i] = 1;

    for (std::uint32_t j = 0; j + 1 < ny; ++j)
        for (std::uint32_t i = 0; i + 1 < nx; ++i) {
            const std::uint32_t a = j * nx + i;
            const std::uint32_t b = j * nx + i + 1;
            const std::uint32_t c = (j + 1) * nx + i;
            const std::uint32_t d = (j + 1) * nx + i + 1;
            s.triangles.push_back({a, b, d});
            s.triangles.push_back({a, d, c});
        }

    for (std::uint32_t i = nx - 1; i >= 1; --i)
        s.surface_edges.push_back({i, i - 1});
    return s;
}

/// Potential flow past a polygonal cylinder. Surface nodes are the polygon
/// vertices (CCW); volume nodes sit on a seeded, jittered polar lattice from
/// the wall out to 2a, triangulated ring by ring along the shorter diagonal.
/// The jitter (a quarter of the local spacing) keeps placement random while
/// bounding triangle aspect ratios, so gradient reconstructions converge at a
/// measurable rate under refinement. Fields are the exact analytic solution
/// sampled at the nodes; sdf is the exact distance to the polygon.
inline MeshSample gen_cylinder_potential(const CaseSpec& spec) {
    detail::check_case(spec);
    const double a = spec.scale;
    const double outer = 2.0 * a;
    const std::uint32_t s_count = spec.segments;
    const std::uint32_t rings = std::max<std::uint32_t>(
        2, static_cast<std::uint32_t>(std::lround(
               static_cast<double>(spec.volume_nodes) / s_count)));
    const double dr = (outer - a) / rings;
    const double dth = 2.0 * std::numbers::pi / s_count;

    MeshSample s;
    s.inlet_speed = spec.u_inf;
    s.angle_of_attack = 0.0;
    const std::uint32_t n = (rings + 1) * s_count;
    s.node_pos.resize(n);
    s.sdf.resize(n);
    s.surface_mask.assign(n, 0);
    s.targets.resize(n);

    Rng rng(mix_seed(spec.seed, seed_tag::jitter));
    for (std::uint32_t j = 0; j <= rings; ++j)
        for (std::uint32_t k = 0; k < s_count; ++k) {
            const std::uint32_t id = j * s_count + k;
            double r = a + dr * j;
            double th = dth * k;
            if (j > 0) {
                r += dr * rng.uniform(-spec.jitter, spec.jitter);
                th += dth * rng.uniform(-spec.jitter, spec.jitter);
            }
            s.node_pos[id] = {r * std::cos(th), r * std::sin(th)};
            if (j == 0)
                s.surface_mask[id] = 1;
        }

    for (std::uint32_t k = 0; k < s_count; ++k)
        s.surface_edges.push_back({k, (k + 1) % s_count});

    for (std::uint32_t j = 0; j < rings; ++j)
        for (std::uint32_t k = 0; k < s_count; ++k) {
            const std::uint32_t kn = (k + 1) % s_count;
            const std::uint32_t A = j * s_count + k;
            const std::uint32_t B = j * s_count + kn;
            const std::uint32_t C = (j + 1) * s_count + k;
            const std::uint32_t D = (j + 1) * s_count + kn;
            const double diag_ad = (s.node_pos[D] - s.node_pos[A]).norm2();
            const double diag_bc = (s.node_pos[C] - s.node_pos[B]).norm2();
            // Local frame (radial, tangential) is right handed, so the CCW
            // quad order is A, C, D, B.
            if (diag_ad <= diag_bc) {
                s.triangles.push_back({A, C, D});
                s.triangles.push_back({A, D, B});
            } else {
                s.triangles.push_back({A, C, B});
                s.triangles.push_back({C, D, B});
            }
        }
    for (const auto& t : s.triangles)
        if (triangle_signed_area(s.node_pos[t[0]], s.node_pos[t[1]], s.node_pos[t[2]]) <=
            0.0)
            throw DegenerateGeometryError(
                "gen_cylinder_potential: jitter produced a non-CCW triangle");

    for (std::uint32_t i = 0; i < n; ++i) {
        const Vec2 p = s.node_pos[i];
        const Vec2 u = cylinder_velocity(spec, p);
        const double pr = cylinder_pressure(spec, p);
        const double wall_d = s.surface_mask[i] ? 0.0 : std::max(0.0, p.norm() - a);
        const double nut =
            spec.nut_bump
                ? detail::nut_bump_value(wall_d, 0.01 * spec.u_inf * a, 0.5 * a)
                : 0.0;
        s.targets[i] = {u.x, u.y, pr, nut};
        s.sdf[i] = s.surface_mask[i] ? 0.0 : sdf_to_surface(p, s);
    }
    return s;
}

/// Generate the sample described by `spec`.
inline MeshSample gen_case(const CaseSpec& spec) {
    return spec.kind == CaseSpec::Kind::couette ? gen_couette(spec)
                                                : gen_cylinder_potential(spec);
}

/// Closed-form surface force integrals for a synthetic case. Everything is
/// kinematic (reduced pressure, unit density): couette carries its whole drag
/// in shear over a unit-length wall; the inviscid cylinder carries its whole
/// lift in pressure (U * circulation, d'Alembert drag zero).
struct AnalyticForces {
    Vec2 integral_tau{};
    Vec2 integral_wp{};
    double drag = 0.0;
    double lift = 0.0;
};

inline AnalyticForces analytic_forces(const CaseSpec& spec,
                                      const PhysicsConfig& physics = {}) {
    detail::check_case(spec);
    AnalyticForces f;
    if (spec.kind == CaseSpec::Kind::couette) {
        f.integral_tau = {physics.nu * spec.u_inf / spec.scale, 0.0};
        f.integral_wp = {0.0, 0.0};
    } else {
        f.integral_tau = {0.0, 0.0};
        f.integral_wp = {0.0, spec.u_inf * spec.circulation};
    }
    f.drag = f.integral_tau.x + f.integral_wp.x;
    f.lift = f.integral_tau.y + f.integral_wp.y;
    return f;
}

} // namespace afb
