#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "afb/error.hpp"
#include "afb/rng.hpp"

namespace afb {

/// Dense row-major matrix of doubles. Feature tensors are (nodes x channels);
/// weight tensors are (out x in) so a forward pass is a row-by-row dot product.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

    static Matrix zeros(int r, int c) { return Matrix(r, c); }

    static Matrix filled(int r, int c, double v) {
        Matrix m(r, c);
        std::fill(m.a.begin(), m.a.end(), v);
        return m;
    }

    /// Entries i.i.d. uniform in [lo, hi).
    static Matrix uniform(int r, int c, double lo, double hi, Rng& rng) {
        Matrix m(r, c);
        for (double& v : m.a)
            v = rng.uniform(lo, hi);
        return m;
    }

    double& at(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
    double at(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }
    double* row(int i) { return a.data() + static_cast<std::size_t>(i) * cols; }
    const double* row(int i) const { return a.data() + static_cast<std::size_t>(i) * cols; }

    std::size_t size() const { return a.size(); }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    Matrix& operator+=(const Matrix& o) {
        if (!same_shape(o))
            throw ShapeError("Matrix += shape mismatch");
        for (std::size_t i = 0; i < a.size(); ++i)
            a[i] += o.a[i];
        return *this;
    }
};

namespace detail {

inline void require(bool ok, const char* msg) {
    if (!ok)
        throw ShapeError(msg);
}

} // namespace detail

/// C = A * B^T. A is (m x k), B is (n x k), C is (m x n). Both operands are
/// walked along contiguous rows, which is the cache-friendly orientation for
/// feature-times-weight products.
inline Matrix matmul_nt(const Matrix& A, const Matrix& B) {
    detail::require(A.cols == B.cols, "matmul_nt: inner dimensions differ");
    Matrix C(A.rows, B.rows);
    for (int i = 0; i < A.rows; ++i) {
        const double* ar = A.row(i);
        double* cr = C.row(i);
        for (int j = 0; j < B.rows; ++j) {
            const double* br = B.row(j);
            double acc = 0.0;
            for (int k = 0; k < A.cols; ++k)
                acc += ar[k] * br[k];
            cr[j] = acc;
        }
    }
    return C;
}

/// C = A * B. A is (m x k), B is (k x n), C is (m x n).
inline Matrix matmul_nn(const Matrix& A, const Matrix& B) {
    detail::require(A.cols == B.rows, "matmul_nn: inner dimensions differ");
    Matrix C(A.rows, B.cols);
    for (int i = 0; i < A.rows; ++i) {
        const double* ar = A.row(i);
        double* cr = C.row(i);
        for (int k = 0; k < A.cols; ++k) {
            const double aik = ar[k];
            if (aik == 0.0)
                continue;
            const double* br = B.row(k);
            for (int j = 0; j < B.cols; ++j)
                cr[j] += aik * br[j];
        }
    }
    return C;
}

/// C = A^T * B. A is (k x m), B is (k x n), C is (m x n).
inline Matrix matmul_tn(const Matrix& A, const Matrix& B) {
    detail::require(A.rows == B.rows, "matmul_tn: outer dimensions differ");
    Matrix C(A.cols, B.cols);
    for (int k = 0; k < A.rows; ++k) {
        const double* ar = A.row(k);
        const double* br = B.row(k);
        for (int i = 0; i < A.cols; ++i) {
            const double aki = ar[i];
            if (aki == 0.0)
                continue;
            double* cr = C.row(i);
            for (int j = 0; j < B.cols; ++j)
                cr[j] += aki * br[j];
        }
    }
    return C;
}

} // namespace afb
