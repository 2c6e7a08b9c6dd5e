#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "afb/error.hpp"
#include "afb/mesh.hpp"

namespace afb {

/// Z-score statistics fitted on the training set only. Channel meanings:
/// inputs (x, y, inlet speed, sdf); outputs (u_x, u_y, p, nu_t). Turbulent
/// viscosity lives on a very different scale on the wall than in the volume,
/// so surface nodes get their own channel-3 statistics.
struct NormStats {
    std::array<double, 4> mu_in{}, sigma_in{};
    std::array<double, 4> mu_out{}, sigma_out{};
    double mu_nut_surf = 0.0;
    double sigma_nut_surf = 0.0;

    /// Denominator guard: every scale is sigma + eps, never bare sigma.
    static constexpr double eps = 1e-8;
};

/// Model input features of one node: position, inlet speed, distance to wall.
inline std::array<double, 4> input_features(const MeshSample& s, std::uint32_t i) {
    return {s.node_pos[i].x, s.node_pos[i].y, s.inlet_speed, s.sdf[i]};
}

namespace detail {

/// Welford accumulator; sigma() is the population standard deviation.
struct Moments {
    long long n = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void add(double x) {
        ++n;
        const double d = x - mean;
        mean += d / static_cast<double>(n);
        m2 += d * (x - mean);
    }
    double sigma() const { return n > 0 ? std::sqrt(m2 / static_cast<double>(n)) : 0.0; }
};

} // namespace detail

/// Fit z-score statistics over every node of every training sample.
/// Throws StatsError when the corpus is empty or contains no surface node
/// (the surface nu_t channel would be unfittable).
inline NormStats fit_norm_stats(const std::vector<MeshSample>& train) {
    if (train.empty())
        throw StatsError("fit_norm_stats: empty training set");

    std::array<detail::Moments, 4> in_m, out_m;
    detail::Moments surf_m;
    for (const MeshSample& s : train) {
        for (std::uint32_t i = 0; i < s.node_count(); ++i) {
            const auto x = input_features(s, i);
            for (int c = 0; c < 4; ++c) {
                in_m[c].add(x[c]);
                out_m[c].add(s.targets[i][c]);
            }
            if (s.surface_mask[i])
                surf_m.add(s.targets[i][3]);
        }
    }
    if (surf_m.n == 0)
        throw StatsError("fit_norm_stats: training set has no surface nodes");

    NormStats st;
    for (int c = 0; c < 4; ++c) {
        st.mu_in[c] = in_m[c].mean;
        st.sigma_in[c] = in_m[c].sigma();
        st.mu_out[c] = out_m[c].mean;
        st.sigma_out[c] = out_m[c].sigma();
    }
    st.mu_nut_surf = surf_m.mean;
    st.sigma_nut_surf = surf_m.sigma();
    return st;
}

inline std::array<double, 4> normalize_inputs(const std::array<double, 4>& x,
                                              const NormStats& st) {
    std::array<double, 4> out;
    for (int c = 0; c < 4; ++c)
        out[c] = (x[c] - st.mu_in[c]) / (st.sigma_in[c] + NormStats::eps);
    return out;
}

/// Z-score a target 4-vector. Surface nodes swap in the surface statistics for
/// the nu_t channel; the other channels always use the volume statistics.
inline std::array<double, 4> normalize_targets(const std::array<double, 4>& y,
                                               bool on_surface, const NormStats& st) {
    std::array<double, 4> out;
    for (int c = 0; c < 3; ++c)
        out[c] = (y[c] - st.mu_out[c]) / (st.sigma_out[c] + NormStats::eps);
    if (on_surface)
        out[3] = (y[3] - st.mu_nut_surf) / (st.sigma_nut_surf + NormStats::eps);
    else
        out[3] = (y[3] - st.mu_out[3]) / (st.sigma_out[3] + NormStats::eps);
    return out;
}

/// Exact inverse of normalize_targets for the same on_surface flag.
inline std::array<double, 4> denormalize_targets(const std::array<double, 4>& y,
                                                 bool on_surface, const NormStats& st) {
    std::array<double, 4> out;
    for (int c = 0; c < 3; ++c)
        out[c] = y[c] * (st.sigma_out[c] + NormStats::eps) + st.mu_out[c];
    if (on_surface)
        out[3] = y[3] * (st.sigma_nut_surf + NormStats::eps) + st.mu_nut_surf;
    else
        out[3] = y[3] * (st.sigma_out[3] + NormStats::eps) + st.mu_out[3];
    return out;
}

/// Re = V * L / nu.
inline double reynolds_number(double velocity, double length, double nu) {
    if (!(nu > 0.0) || !std::isfinite(nu))
        throw ArgumentError("reynolds_number: viscosity must be positive and finite");
    const double re = velocity * length / nu;
    // A viscosity written as a decimal literal (1e-5) is not the binary value
    // 10^-5, which drags decimal-exact quotients like 10 * 1 / 1e-5 one ulp
    // off 1e6. Requantizing to 15 significant digits, the decimal precision a
    // double carries faithfully, restores those quotients; the adjustment is
    // below 1e-15 relative either way.
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.15g", re);
    return std::strtod(buf, nullptr);
}

namespace detail {

inline std::string hex_double(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

inline double parse_hex_double(const std::string& s, const char* field) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0')
        throw FormatError(std::string("norm stats: unparsable hex float in ") + field);
    return v;
}

inline nlohmann::json hex_array(const std::array<double, 4>& a) {
    nlohmann::json j = nlohmann::json::array();
    for (double v : a)
        j.push_back(hex_double(v));
    return j;
}

inline std::array<double, 4> parse_hex_array(const nlohmann::json& j, const char* field) {
    if (!j.is_array() || j.size() != 4)
        throw FormatError(std::string("norm stats: ") + field + " must be a 4-array");
    std::array<double, 4> out;
    for (int c = 0; c < 4; ++c)
        out[c] = parse_hex_double(j[c].get<std::string>(), field);
    return out;
}

} // namespace detail

/// Write stats as JSON. Values are stored as C hex-float strings so the file
/// round-trips bit-exactly; the *_approx fields are decimal and informational.
inline void write_norm_stats(const NormStats& st, const std::filesystem::path& path) {
    nlohmann::json j;
    j["mu_in"] = detail::hex_array(st.mu_in);
    j["sigma_in"] = detail::hex_array(st.sigma_in);
    j["mu_out"] = detail::hex_array(st.mu_out);
    j["sigma_out"] = detail::hex_array(st.sigma_out);
    j["mu_nut_surf"] = detail::hex_double(st.mu_nut_surf);
    j["sigma_nut_surf"] = detail::hex_double(st.sigma_nut_surf);
    j["mu_in_approx"] = st.mu_in;
    j["sigma_in_approx"] = st.sigma_in;
    j["mu_out_approx"] = st.mu_out;
    j["sigma_out_approx"] = st.sigma_out;
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw IoError("write_norm_stats: cannot open " + path.string());
    out << j.dump(2) << "\n";
    if (!out)
        throw IoError("write_norm_stats: short write to " + path.string());
}

inline NormStats read_norm_stats(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("read_norm_stats: cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("read_norm_stats: invalid JSON in " + path.string() + ": " +
                          e.what());
    }
    try {
        NormStats st;
        st.mu_in = detail::parse_hex_array(j.at("mu_in"), "mu_in");
        st.sigma_in = detail::parse_hex_array(j.at("sigma_in"), "sigma_in");
        st.mu_out = detail::parse_hex_array(j.at("mu_out"), "mu_out");
        st.sigma_out = detail::parse_hex_array(j.at("sigma_out"), "sigma_out");
        st.mu_nut_surf =
            detail::parse_hex_double(j.at("mu_nut_surf").get<std::string>(), "mu_nut_surf");
        st.sigma_nut_surf = detail::parse_hex_double(
            j.at("sigma_nut_surf").get<std::string>(), "sigma_nut_surf");
        return st;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("read_norm_stats: missing field in " + path.string() + ": " +
                          e.what());
    }
}

} // namespace afb
