#pragma once

#include <cmath>

namespace afb {

/// 2-D point / vector in double precision.
struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    Vec2 operator/(double s) const { return {x / s, y / s}; }
    double dot(const Vec2& o) const { return x * o.x + y * o.y; }
    double norm2() const { return x * x + y * y; }
    double norm() const { return std::sqrt(norm2()); }
};

inline Vec2 operator*(double s, const Vec2& v) { return {s * v.x, s * v.y}; }

/// Rotate v by -90 degrees: (x, y) -> (y, -x).
inline Vec2 rotate_cw(const Vec2& v) { return {v.y, -v.x}; }

/// 2x2 matrix, row major. m[r][c].
struct Mat2 {
    double m[2][2] = {{0.0, 0.0}, {0.0, 0.0}};

    static Mat2 zero() { return {}; }

    Mat2 operator+(const Mat2& o) const {
        Mat2 r;
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                r.m[i][j] = m[i][j] + o.m[i][j];
        return r;
    }

    Mat2 operator*(double s) const {
        Mat2 r;
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                r.m[i][j] = m[i][j] * s;
        return r;
    }

    Vec2 operator*(const Vec2& v) const {
        return {m[0][0] * v.x + m[0][1] * v.y, m[1][0] * v.x + m[1][1] * v.y};
    }

    Mat2 transposed() const {
        Mat2 r;
        r.m[0][0] = m[0][0];
        r.m[0][1] = m[1][0];
        r.m[1][0] = m[0][1];
        r.m[1][1] = m[1][1];
        return r;
    }

    double trace() const { return m[0][0] + m[1][1]; }
    double det() const { return m[0][0] * m[1][1] - m[0][1] * m[1][0]; }
};

/// Symmetric part (A + A^T) / 2.
inline Mat2 symmetric_part(const Mat2& a) {
    Mat2 s;
    s.m[0][0] = a.m[0][0];
    s.m[1][1] = a.m[1][1];
    s.m[0][1] = s.m[1][0] = 0.5 * (a.m[0][1] + a.m[1][0]);
    return s;
}

} // namespace afb
