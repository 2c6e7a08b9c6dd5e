/// @file test_stats.cpp
/// @brief Normalization statistics against a naive two-pass oracle, z-score
///        round-trips, Reynolds numbers and the stats file format.

#include <catch2/catch_amalgamated.hpp>

#include <afb/afb.hpp>

#include <cmath>
#include <filesystem>
#include <unistd.h>
#include <vector>

using namespace afb;
namespace fs = std::filesystem;

namespace {

std::vector<MeshSample> small_corpus(std::size_t count, std::uint64_t seed) {
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

struct NaiveMoments {
    double mean = 0.0;
    double std_dev = 0.0;
};

NaiveMoments naive(const std::vector<double>& xs) {
    NaiveMoments m;
    for (double x : xs)
        m.mean += x;
    m.mean /= static_cast<double>(xs.size());
    double acc = 0.0;
    for (double x : xs)
        acc += (x - m.mean) * (x - m.mean);
    m.std_dev = std::sqrt(acc / static_cast<double>(xs.size()));
    return m;
}

} // namespace

// ============================================================================
// Fit against the naive oracle
// ============================================================================

TEST_CASE("fitted moments match a naive two-pass computation", "[stats]") {
    const auto corpus = small_corpus(6, 77);
    const NormStats st = fit_norm_stats(corpus);

    for (int c = 0; c < 4; ++c) {
        std::vector<double> in_c, out_c, nut_surf;
        for (const MeshSample& s : corpus)
            for (std::uint32_t i = 0; i < s.node_count(); ++i) {
                in_c.push_back(input_features(s, i)[c]);
                out_c.push_back(s.targets[i][c]);
                if (c == 3 && s.surface_mask[i])
                    nut_surf.push_back(s.targets[i][3]);
            }
        const NaiveMoments mi = naive(in_c);
        REQUIRE(st.mu_in[c] == Catch::Approx(mi.mean).margin(1e-10));
        REQUIRE(st.sigma_in[c] == Catch::Approx(mi.std_dev).margin(1e-10));

        const NaiveMoments mo = naive(out_c);
        REQUIRE(st.mu_out[c] == Catch::Approx(mo.mean).margin(1e-10));
        REQUIRE(st.sigma_out[c] == Catch::Approx(mo.std_dev).margin(1e-10));

        if (c == 3) {
            const NaiveMoments ms = naive(nut_surf);
            REQUIRE(st.mu_nut_surf == Catch::Approx(ms.mean).margin(1e-10));
            REQUIRE(st.sigma_nut_surf == Catch::Approx(ms.std_dev).margin(1e-10));
        }
    }
}

TEST_CASE("normalized corpus is centered with unit-target spread", "[stats]") {
    const auto corpus = small_corpus(8, 91);
    const NormStats st = fit_norm_stats(corpus);

    std::array<double, 4> sum{}, sq{};
    std::size_t n = 0;
    for (const MeshSample& s : corpus)
        for (std::uint32_t i = 0; i < s.node_count(); ++i) {
            const auto z = normalize_inputs(input_features(s, i), st);
            for (int c = 0; c < 4; ++c) {
                sum[c] += z[c];
                sq[c] += z[c] * z[c];
            }
            ++n;
        }
    for (int c = 0; c < 4; ++c) {
        const double mean = sum[c] / static_cast<double>(n);
        const double sd = std::sqrt(sq[c] / static_cast<double>(n) - mean * mean);
        const double target = st.sigma_in[c] / (st.sigma_in[c] + NormStats::eps);
        REQUIRE(std::abs(mean) < 1e-9);
        REQUIRE(sd == Catch::Approx(target).margin(1e-9));
    }
}

// ============================================================================
// Round trips
// ============================================================================

TEST_CASE("denormalize inverts normalize on both branches", "[stats]") {
    const auto corpus = small_corpus(4, 13);
    const NormStats st = fit_norm_stats(corpus);
    Rng rng(99);
    for (int k = 0; k < 200; ++k) {
        const std::array<double, 4> y{rng.uniform(-40.0, 40.0), rng.uniform(-40.0, 40.0),
                                      rng.uniform(-900.0, 200.0), rng.uniform(0.0, 0.05)};
        for (bool on_surface : {false, true}) {
            const auto z = normalize_targets(y, on_surface, st);
            const auto back = denormalize_targets(z, on_surface, st);
            for (int c = 0; c < 4; ++c)
                REQUIRE(back[c] == Catch::Approx(y[c]).margin(1e-10));
        }
    }
}

TEST_CASE("surface and volume nu_t branches use distinct statistics", "[stats]") {
    const auto corpus = small_corpus(4, 29);
    const NormStats st = fit_norm_stats(corpus);
    // nut_bump vanishes on the wall, so surface statistics must differ from
    // the volume ones.
    REQUIRE(st.sigma_nut_surf != st.sigma_out[3]);
    const std::array<double, 4> y{1.0, 2.0, 3.0, 0.01};
    REQUIRE(normalize_targets(y, true, st)[3] != normalize_targets(y, false, st)[3]);
    for (int c = 0; c < 3; ++c)
        REQUIRE(normalize_targets(y, true, st)[c] == normalize_targets(y, false, st)[c]);
}

TEST_CASE("constant channels survive the epsilon guard", "[stats]") {
    // Couette pressure is identically zero: sigma = 0, so normalization must
    // rely on the epsilon and still round-trip.
    CaseSpec spec;
    spec.kind = CaseSpec::Kind::couette;
    spec.u_inf = 4.0;
    spec.segments = 10;
    spec.volume_nodes = 44;
    const std::vector<MeshSample> corpus{gen_case(spec)};
    const NormStats st = fit_norm_stats(corpus);
    REQUIRE(st.sigma_out[2] == 0.0);
    const std::array<double, 4> y{1.0, 0.0, 0.0, 0.0};
    const auto z = normalize_targets(y, false, st);
    REQUIRE(std::isfinite(z[2]));
    const auto back = denormalize_targets(z, false, st);
    REQUIRE(back[2] == Catch::Approx(0.0).margin(1e-12));
}

// ============================================================================
// Reynolds number and file format
// ============================================================================

TEST_CASE("reynolds number is the exact ratio", "[stats]") {
    REQUIRE(reynolds_number(10.0, 1.0, 1e-5) == 1e6);
    REQUIRE(reynolds_number(50.0, 1.0, 1e-5) == 5e6);
    REQUIRE(reynolds_number(3.0, 2.0, 1.5) == 4.0);
    REQUIRE_THROWS_AS(reynolds_number(1.0, 1.0, 0.0), ArgumentError);
}

TEST_CASE("stats file round-trips bitwise", "[stats]") {
    const auto corpus = small_corpus(3, 55);
    const NormStats st = fit_norm_stats(corpus);
    const fs::path path = fs::temp_directory_path() /
                          ("stats_" + std::to_string(::getpid()) + ".json");
    write_norm_stats(st, path);
    const NormStats r = read_norm_stats(path);
    for (int c = 0; c < 4; ++c) {
        REQUIRE(r.mu_in[c] == st.mu_in[c]);
        REQUIRE(r.sigma_in[c] == st.sigma_in[c]);
        REQUIRE(r.mu_out[c] == st.mu_out[c]);
        REQUIRE(r.sigma_out[c] == st.sigma_out[c]);
    }
    REQUIRE(r.mu_nut_surf == st.mu_nut_surf);
    REQUIRE(r.sigma_nut_surf == st.sigma_nut_surf);
    fs::remove(path);

    SECTION("missing file rejected") {
        REQUIRE_THROWS_AS(read_norm_stats(path.string() + ".gone"), Error);
    }
}

TEST_CASE("empty corpus is rejected", "[stats]") {
    REQUIRE_THROWS_AS(fit_norm_stats({}), StatsError);
}
