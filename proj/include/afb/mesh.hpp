#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "afb/error.hpp"
#include "afb/vec.hpp"

namespace afb {

/// Fluid constants shared across force computations. Pressure fields are
/// reduced (divided by density), so rho only scales integrated forces.
struct PhysicsConfig {
    double nu = 1e-5;          ///< kinematic viscosity
    double rho = 1.0;          ///< fluid density
    double char_length = 1.0;  ///< reference length for Reynolds numbers
};

/// One flow case on one triangulated point cloud.
///
/// Targets hold (u_x, u_y, p, nu_t) per node: velocity components, reduced
/// pressure and turbulent viscosity. surface_edges list the wall polyline in
/// traversal order; rotating each edge direction by -90 degrees yields the
/// normal pointing from the solid into the fluid (closed loops are CCW).
struct MeshSample {
    std::vector<Vec2> node_pos;
    std::vector<double> sdf;                             ///< distance to the wall, >= 0
    std::vector<std::uint8_t> surface_mask;              ///< 1 on wall nodes
    std::vector<std::array<double, 4>> targets;          ///< u_x, u_y, p, nu_t
    std::vector<std::array<std::uint32_t, 3>> triangles;
    std::vector<std::array<std::uint32_t, 2>> surface_edges;
    double inlet_speed = 0.0;
    double angle_of_attack = 0.0;  ///< degrees

    std::size_t node_count() const { return node_pos.size(); }
};

/// Wall polyline in traversal order. For a closed loop the first node is not
/// repeated at the end; `closed` distinguishes loops from open chains (a flat
/// wall segment is a legitimate open chain).
struct SurfaceChain {
    std::vector<std::uint32_t> nodes;
    bool closed = false;
};

inline double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
    const Vec2 ab = b - a;
    const double len2 = ab.norm2();
    if (len2 == 0.0)
        return (p - a).norm();
    const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
    return (p - (a + t * ab)).norm();
}

inline double triangle_signed_area(const Vec2& a, const Vec2& b, const Vec2& c) {
    return 0.5 * ((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x));
}

/// Walk surface_edges and return the node sequence. The edges must already be
/// stored in traversal order (edge i ends where edge i+1 starts); anything
/// else (gaps, branches, several components) is a TopologyError.
inline SurfaceChain surface_chain(const MeshSample& sample) {
    const auto& edges = sample.surface_edges;
    if (edges.empty())
        throw TopologyError("surface_chain: sample has no surface edges");
    SurfaceChain chain;
    chain.nodes.reserve(edges.size() + 1);
    chain.nodes.push_back(edges[0][0]);
    for (std::size_t i = 0; i < edges.size(); ++i) {
        if (edges[i][0] != chain.nodes.back())
            throw TopologyError("surface_chain: edge " + std::to_string(i) +
                                " does not continue the traversal");
        chain.nodes.push_back(edges[i][1]);
    }
    chain.closed = (chain.nodes.front() == chain.nodes.back());
    if (chain.closed)
        chain.nodes.pop_back();
    std::vector<std::uint32_t> sorted = chain.nodes;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw TopologyError("surface_chain: a node is visited twice");
    return chain;
}

/// Outward wall normals (solid -> fluid), one per chain node, in chain order.
/// Each is the normalized average of the adjacent edge normals; open-chain
/// endpoints use their single edge normal.
inline std::vector<Vec2> surface_normals(const MeshSample& sample) {
    const SurfaceChain chain = surface_chain(sample);
    const std::size_t n = chain.nodes.size();
    const std::size_t edge_count = sample.surface_edges.size();

    std::vector<Vec2> edge_normal(edge_count);
    for (std::size_t e = 0; e < edge_count; ++e) {
        const Vec2 a = sample.node_pos[sample.surface_edges[e][0]];
        const Vec2 b = sample.node_pos[sample.surface_edges[e][1]];
        const Vec2 d = b - a;
        const double len = d.norm();
        if (len == 0.0)
            throw DegenerateGeometryError("surface_normals: zero-length edge " +
                                          std::to_string(e));
        edge_normal[e] = rotate_cw(d) / len;
    }

    std::vector<Vec2> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        Vec2 acc{0.0, 0.0};
        int adj = 0;
        // Edge k starts at chain node k; edge k-1 ends there.
        if (k < edge_count) {
            acc = acc + edge_normal[k];
            ++adj;
        }
        if (k > 0) {
            acc = acc + edge_normal[k - 1];
            ++adj;
        } else if (chain.closed) {
            acc = acc + edge_normal[edge_count - 1];
            ++adj;
        }
        acc = acc / static_cast<double>(adj);
        const double len = acc.norm();
        if (len < 1e-14)
            throw DegenerateGeometryError(
                "surface_normals: adjacent edge normals cancel at chain node " +
                std::to_string(k));
        out[k] = acc / len;
    }
    return out;
}

/// Euclidean distance from an arbitrary point to the wall polyline.
inline double sdf_to_surface(const Vec2& p, const MeshSample& sample) {
    if (sample.surface_edges.empty())
        throw TopologyError("sdf_to_surface: sample has no surface edges");
    double best = std::numeric_limits<double>::infinity();
    for (const auto& e : sample.surface_edges)
        best = std::min(best,
                        point_segment_distance(p, sample.node_pos[e[0]],
                                               sample.node_pos[e[1]]));
    return best;
}

namespace detail {

inline void collect(std::vector<std::string>& out, const std::string& msg) {
    out.push_back(msg);
}

} // namespace detail

/// Check every documented invariant and throw a ValidationError listing all
/// violations (with node / element indices) if any are found.
///
/// Invariants: array sizes agree; everything is finite; sdf >= 0 and is zero
/// (within 1e-9) exactly on surface-masked nodes; triangle and edge indices
/// are in range; surface edge endpoints are masked; surface edges form one
/// traversable chain or loop; closed loops are CCW (positive signed area).
inline void validate(const MeshSample& sample) {
    std::vector<std::string> bad;
    const std::size_t n = sample.node_count();

    if (sample.sdf.size() != n)
        detail::collect(bad, "sdf size " + std::to_string(sample.sdf.size()) +
                                 " != node count " + std::to_string(n));
    if (sample.surface_mask.size() != n)
        detail::collect(bad, "surface_mask size " +
                                 std::to_string(sample.surface_mask.size()) +
                                 " != node count " + std::to_string(n));
    if (sample.targets.size() != n)
        detail::collect(bad, "targets size " + std::to_string(sample.targets.size()) +
                                 " != node count " + std::to_string(n));
    if (!std::isfinite(sample.inlet_speed))
        detail::collect(bad, "inlet_speed is not finite");
    if (!std::isfinite(sample.angle_of_attack))
        detail::collect(bad, "angle_of_attack is not finite");

    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(sample.node_pos[i].x) || !std::isfinite(sample.node_pos[i].y))
            detail::collect(bad, "node " + std::to_string(i) + ": non-finite position");
        if (i < sample.sdf.size()) {
            const double d = sample.sdf[i];
            if (!std::isfinite(d))
                detail::collect(bad, "node " + std::to_string(i) + ": non-finite sdf");
            else if (d < 0.0)
                detail::collect(bad, "node " + std::to_string(i) + ": negative sdf");
            else if (i < sample.surface_mask.size()) {
                if (sample.surface_mask[i] && d > 1e-9)
                    detail::collect(bad, "node " + std::to_string(i) +
                                             ": surface node with sdf " + std::to_string(d));
                if (!sample.surface_mask[i] && d <= 1e-9)
                    detail::collect(bad, "node " + std::to_string(i) +
                                             ": volume node lies on the surface");
            }
        }
        if (i < sample.targets.size())
            for (int c = 0; c < 4; ++c)
                if (!std::isfinite(sample.targets[i][c]))
                    detail::collect(bad, "node " + std::to_string(i) +
                                             ": non-finite target channel " + std::to_string(c));
    }

    for (std::size_t t = 0; t < sample.triangles.size(); ++t)
        for (int k = 0; k < 3; ++k)
            if (sample.triangles[t][k] >= n)
                detail::collect(bad, "triangle " + std::to_string(t) +
                                         ": node index out of range");

    bool edges_ok = true;
    for (std::size_t e = 0; e < sample.surface_edges.size(); ++e)
        for (int k = 0; k < 2; ++k)
            if (sample.surface_edges[e][k] >= n) {
                detail::collect(bad, "surface edge " + std::to_string(e) +
                                         ": node index out of range");
                edges_ok = false;
            }

    if (edges_ok)
        for (std::size_t e = 0; e < sample.surface_edges.size(); ++e)
            for (int k = 0; k < 2; ++k) {
                const std::uint32_t v = sample.surface_edges[e][k];
                if (v < sample.surface_mask.size() && !sample.surface_mask[v])
                    detail::collect(bad, "surface edge " + std::to_string(e) +
                                             ": endpoint " + std::to_string(v) +
                                             " is not surface-masked");
            }

    if (edges_ok && !sample.surface_edges.empty()) {
        try {
            const SurfaceChain chain = surface_chain(sample);
            if (chain.closed) {
                double area2 = 0.0;
                for (const auto& e : sample.surface_edges) {
                    const Vec2 a = sample.node_pos[e[0]];
                    const Vec2 b = sample.node_pos[e[1]];
                    area2 += a.x * b.y - b.x * a.y;
                }
                if (area2 <= 0.0)
                    detail::collect(bad, "closed surface loop is not counter-clockwise");
            }
        } catch (const TopologyError& err) {
            detail::collect(bad, err.what());
        }
    }

    if (!bad.empty()) {
        std::string msg = "validate: " + std::to_string(bad.size()) + " violation(s):";
        for (const auto& b : bad)
            msg += "\n  - " + b;
        throw ValidationError(msg);
    }
}

// ---------------------------------------------------------------------------
// Binary sample files
//
// Layout ("AFM1", all little endian):
//   magic 'A','F','M','1'
//   u32 node_count, u32 triangle_count, u32 surface_edge_count
//   node_pos   2*N f64     sdf  N f64      surface_mask  N u8
//   targets    4*N f64     triangles 3*T u32   surface_edges 2*E u32
//   inlet_speed f64, angle_of_attack f64
// A JSON sidecar "<path>.meta.json" mirrors the scalar metadata for humans.
// ---------------------------------------------------------------------------

static_assert(std::endian::native == std::endian::little,
              "sample files are little endian; big-endian hosts need swapping");

namespace detail {

inline void put_u32(std::string& buf, std::uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    buf.append(b, 4);
}

inline void put_f64(std::string& buf, double v) {
    char b[8];
    std::memcpy(b, &v, 8);
    buf.append(b, 8);
}

/// Cursor over an in-memory file image with bounds-checked reads.
struct ByteReader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) {
        if (pos + n > buf.size())
            throw FormatError(std::string("sample file truncated while reading ") + what);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v;
        std::memcpy(&v, buf.data() + pos, 4);
        pos += 4;
        return v;
    }
    double f64(const char* what) {
        need(8, what);
        double v;
        std::memcpy(&v, buf.data() + pos, 8);
        pos += 8;
        return v;
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<std::uint8_t>(buf[pos++]);
    }
};

} // namespace detail

/// Serialize a sample to `path` and write "<path>.meta.json" beside it.
/// The sidecar records inlet speed, angle of attack, viscosity and a free-form
/// provenance string; the binary file alone round-trips the sample.
inline void write_sample(const MeshSample& sample, const std::filesystem::path& path,
                         double nu = 1e-5, const std::string& provenance = "") {
    std::string buf;
    buf.reserve(64 + sample.node_count() * 57 + sample.triangles.size() * 12 +
                sample.surface_edges.size() * 8);
    buf.append("AFM1", 4);
    detail::put_u32(buf, static_cast<std::uint32_t>(sample.node_count()));
    detail::put_u32(buf, static_cast<std::uint32_t>(sample.triangles.size()));
    detail::put_u32(buf, static_cast<std::uint32_t>(sample.surface_edges.size()));
    for (const auto& p : sample.node_pos) {
        detail::put_f64(buf, p.x);
        detail::put_f64(buf, p.y);
    }
    for (double d : sample.sdf)
        detail::put_f64(buf, d);
    for (std::uint8_t m : sample.surface_mask)
        buf.push_back(static_cast<char>(m != 0 ? 1 : 0));
    for (const auto& t : sample.targets)
        for (double v : t)
            detail::put_f64(buf, v);
    for (const auto& t : sample.triangles)
        for (std::uint32_t v : t)
            detail::put_u32(buf, v);
    for (const auto& e : sample.surface_edges)
        for (std::uint32_t v : e)
            detail::put_u32(buf, v);
    detail::put_f64(buf, sample.inlet_speed);
    detail::put_f64(buf, sample.angle_of_attack);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("write_sample: cannot open " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out)
        throw IoError("write_sample: short write to " + path.string());
    out.close();

    nlohmann::json meta;
    meta["inlet_speed"] = sample.inlet_speed;
    meta["angle_of_attack"] = sample.angle_of_attack;
    meta["nu"] = nu;
    meta["provenance"] = provenance;
    std::filesystem::path meta_path = path;
    meta_path += ".meta.json";
    std::ofstream mout(meta_path, std::ios::trunc);
    if (!mout)
        throw IoError("write_sample: cannot open " + meta_path.string());
    mout << meta.dump(2) << "\n";
}

/// Parse a binary sample file. Structural problems (bad magic, truncation,
/// trailing bytes) raise FormatError; unreadable paths raise IoError.
/// Semantic checks are the caller's business via validate().
inline MeshSample read_sample(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("read_sample: cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad())
        throw IoError("read_sample: read failure on " + path.string());
    const std::string buf = ss.str();

    detail::ByteReader r{buf};
    r.need(4, "magic");
    if (buf.compare(0, 4, "AFM1") != 0)
        throw FormatError("read_sample: bad magic in " + path.string());
    r.pos = 4;
    const std::uint32_t n = r.u32("node count");
    const std::uint32_t t = r.u32("triangle count");
    const std::uint32_t e = r.u32("surface edge count");

    MeshSample s;
    s.node_pos.resize(n);
    for (auto& p : s.node_pos) {
        p.x = r.f64("node positions");
        p.y = r.f64("node positions");
    }
    s.sdf.resize(n);
    for (auto& d : s.sdf)
        d = r.f64("sdf");
    s.surface_mask.resize(n);
    for (auto& m : s.surface_mask)
        m = r.u8("surface mask");
    s.targets.resize(n);
    for (auto& tv : s.targets)
        for (auto& v : tv)
            v = r.f64("targets");
    s.triangles.resize(t);
    for (auto& tri : s.triangles)
        for (auto& v : tri)
            v = r.u32("triangles");
    s.surface_edges.resize(e);
    for (auto& ed : s.surface_edges)
        for (auto& v : ed)
            v = r.u32("surface edges");
    s.inlet_speed = r.f64("inlet speed");
    s.angle_of_attack = r.f64("angle of attack");
    if (r.pos != buf.size())
        throw FormatError("read_sample: " + std::to_string(buf.size() - r.pos) +
                          " trailing byte(s) in " + path.string());
    return s;
}

} // namespace afb
