/// @file test_forces.cpp
/// @brief Stress and force recovery against closed-form oracles: exact
///        Couette wall shear, d'Alembert zero force, Kutta-Joukowski lift,
///        P1 gradient exactness on affine fields and divergence convergence.

#include <catch2/catch_amalgamated.hpp>

#include <afb/afb.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

using namespace afb;
namespace fs = std::filesystem;

namespace {

MeshSample cylinder_case(double u_inf, double circulation, std::uint32_t segments,
                         std::uint32_t volume, std::uint64_t seed, double jitter = 0.25) {
    CaseSpec spec;
    spec.kind = CaseSpec::Kind::cylinder;
    spec.u_inf = u_inf;
    spec.circulation = circulation;
    spec.scale = 0.5;
    spec.segments = segments;
    spec.volume_nodes = volume;
    spec.seed = seed;
    spec.jitter = jitter;
    return gen_case(spec);
}

} // namespace

// ============================================================================
// Couette: affine field, every reconstruction step is exact
// ============================================================================

TEST_CASE("couette wall shear is exactly nu * U / h", "[forces]") {
    CaseSpec spec;
    spec.kind = CaseSpec::Kind::couette;
    spec.u_inf = 5.0;
    spec.scale = 1.0;
    spec.segments = 16;
    spec.volume_nodes = 80;
    const MeshSample s = gen_case(spec);

    const PhysicsConfig physics;
    const SurfaceForces f = drag_lift(s, s.targets, physics);
    const double expected = physics.nu * spec.u_inf / spec.scale;

    for (const Vec2& tau : f.tau) {
        REQUIRE(tau.x == Catch::Approx(expected).epsilon(1e-12));
        REQUIRE(std::abs(tau.y) < 1e-15 * spec.u_inf);
    }
    // The wall spans unit length, so the integral equals the local value.
    REQUIRE(f.integral_tau.x == Catch::Approx(expected).epsilon(1e-12));
    REQUIRE(std::abs(f.integral_wp.x) < 1e-15);
    REQUIRE(std::abs(f.integral_wp.y) < 1e-15);
}

TEST_CASE("couette shear scales with viscosity and speed", "[forces]") {
    CaseSpec spec;
    spec.kind = CaseSpec::Kind::couette;
    spec.u_inf = 20.0;
    spec.scale = 0.5;
    spec.segments = 10;
    spec.volume_nodes = 50;
    const MeshSample s = gen_case(spec);

    PhysicsConfig physics;
    physics.nu = 3e-4;
    const SurfaceForces f = drag_lift(s, s.targets, physics);
    REQUIRE(f.integral_tau.x ==
            Catch::Approx(physics.nu * spec.u_inf / spec.scale).epsilon(1e-12));
}

// ============================================================================
// Cylinder: d'Alembert and Kutta-Joukowski
// ============================================================================

TEST_CASE("zero-circulation cylinder carries no net force", "[forces]") {
    const double u_inf = 10.0;
    const MeshSample s = cylinder_case(u_inf, 0.0, 256, 16384, 3);
    const SurfaceForces f = drag_lift(s, s.targets);
    const double scale_force = 0.5 * u_inf * u_inf * 1.0;  // q * diameter
    REQUIRE(std::abs(f.drag) < 0.02 * scale_force);
    REQUIRE(std::abs(f.lift) < 0.02 * scale_force);
}

TEST_CASE("circulating cylinder recovers Kutta-Joukowski lift", "[forces]") {
    const double u_inf = 1.0;
    const double gamma = 2.0 * std::numbers::pi;
    const MeshSample s = cylinder_case(u_inf, gamma, 256, 16384, 5);
    const SurfaceForces f = drag_lift(s, s.targets);
    REQUIRE(f.lift == Catch::Approx(u_inf * gamma).epsilon(0.01));
    REQUIRE(std::abs(f.drag) < 0.01 * u_inf * gamma);
}

TEST_CASE("lift flips sign with the circulation", "[forces]") {
    const MeshSample pos = cylinder_case(1.0, 4.0, 128, 4096, 7);
    const MeshSample neg = cylinder_case(1.0, -4.0, 128, 4096, 7);
    const double lp = drag_lift(pos, pos.targets).lift;
    const double ln = drag_lift(neg, neg.targets).lift;
    REQUIRE(lp > 0.0);
    REQUIRE(ln < 0.0);
    REQUIRE(lp == Catch::Approx(-ln).epsilon(1e-6));
}

// ============================================================================
// P1 gradient reconstruction
// ============================================================================

TEST_CASE("velocity jacobian is exact on affine fields", "[forces]") {
    const MeshSample s = cylinder_case(8.0, 1.0, 24, 120, 11);
    // u = (2x - y + 1, 3x + 4y - 2) has constant jacobian [[2,-1],[3,4]].
    FlowField field(s.node_count());
    for (std::uint32_t i = 0; i < s.node_count(); ++i) {
        const Vec2 p = s.node_pos[i];
        field[i] = {2.0 * p.x - p.y + 1.0, 3.0 * p.x + 4.0 * p.y - 2.0, 0.0, 0.0};
    }
    const auto jac = velocity_jacobian(s, field);
    for (const Mat2& j : jac) {
        REQUIRE(j.m[0][0] == Catch::Approx(2.0).margin(1e-10));
        REQUIRE(j.m[0][1] == Catch::Approx(-1.0).margin(1e-10));
        REQUIRE(j.m[1][0] == Catch::Approx(3.0).margin(1e-10));
        REQUIRE(j.m[1][1] == Catch::Approx(4.0).margin(1e-10));
    }

    SECTION("divergence of the affine field is its exact trace") {
        const auto div = divergence(s, field);
        for (double d : div)
            REQUIRE(d == Catch::Approx(6.0).margin(1e-10));
    }
}

TEST_CASE("divergence of generated potential flow shrinks under refinement",
          "[forces]") {
    double prev_rms = 0.0;
    std::vector<double> rms_values;
    for (std::uint32_t segments : {32u, 64u, 128u}) {
        const std::uint32_t volume = segments * segments / 4;
        const MeshSample s = cylinder_case(10.0, 2.0, segments, volume, 1, 0.0);
        const auto div = divergence(s, s.targets);
        double rms = 0.0;
        for (double d : div)
            rms += d * d;
        rms = std::sqrt(rms / static_cast<double>(div.size()));
        rms_values.push_back(rms);
        if (!prev_rms)
            prev_rms = rms;
    }
    REQUIRE(rms_values[1] < rms_values[0]);
    REQUIRE(rms_values[2] < rms_values[1]);
    const double order = std::log(rms_values[0] / rms_values[2]) / std::log(4.0);
    REQUIRE(order > 0.9);
}

// ============================================================================
// Degenerate inputs and the CSV table
// ============================================================================

TEST_CASE("force routines reject malformed fields", "[forces]") {
    const MeshSample s = cylinder_case(5.0, 0.0, 12, 48, 17);
    FlowField wrong(s.node_count() - 1);
    REQUIRE_THROWS_AS(drag_lift(s, wrong), ShapeError);
    REQUIRE_THROWS_AS(divergence(s, wrong), ShapeError);
}

TEST_CASE("isolated node falls back to the neighbor graph", "[forces]") {
    // A node in no triangle has no P1 fan; the divergence fallback graph
    // must keep its row finite.
    MeshSample s = cylinder_case(5.0, 0.0, 12, 48, 19);
    const Vec2 far{10.0, 10.0};
    s.node_pos.push_back(far);
    s.sdf.push_back(sdf_to_surface(far, s));
    s.surface_mask.push_back(0);
    s.targets.push_back({1.0, 1.0, 0.0, 0.0});

    REQUIRE_THROWS_AS(divergence(s, s.targets), RankError);

    const RadiusGraph g = build_radius_graph(
        s.node_pos, 30.0, static_cast<std::uint32_t>(s.node_count()), 0);
    const auto div = divergence(s, s.targets, &g);
    REQUIRE(div.size() == s.node_count());
    for (double d : div)
        REQUIRE(std::isfinite(d));
}

TEST_CASE("forces table lists every wall node in chain order", "[forces]") {
    const MeshSample s = cylinder_case(9.0, 1.5, 16, 64, 23);
    const SurfaceForces f = drag_lift(s, s.targets);
    const fs::path path = fs::temp_directory_path() /
                          ("forces_" + std::to_string(::getpid()) + ".csv");
    write_forces_csv(s, f, path);

    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    REQUIRE(header == "node,x,y,tau_x,tau_y,wp_x,wp_y");
    std::size_t rows = 0;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty())
            ++rows;
    REQUIRE(rows == f.nodes.size());
    fs::remove(path);
}
