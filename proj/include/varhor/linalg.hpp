#ifndef VARHOR_LINALG_HPP
#define VARHOR_LINALG_HPP

#include <cstddef>
#include <span>
#include <vector>

#include "varhor/errors.hpp"

namespace varhor {

using Vec = std::vector<double>;

// out[i] += A[i*cols+j] * x[j]
inline void matvec_acc(std::span<const double> a, std::span<const double> x, std::span<double> out,
                       int rows, int cols, double scale = 1.0) {
    for (int i = 0; i < rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < cols; ++j)
            s += a[static_cast<size_t>(i * cols + j)] * x[static_cast<size_t>(j)];
        out[static_cast<size_t>(i)] += scale * s;
    }
}

// out[j] += A[i*cols+j] * x[i]  (transposed product)
inline void matvec_t_acc(std::span<const double> a, std::span<const double> x, std::span<double> out,
                         int rows, int cols, double scale = 1.0) {
    for (int i = 0; i < rows; ++i) {
        double xi = x[static_cast<size_t>(i)];
        for (int j = 0; j < cols; ++j)
            out[static_cast<size_t>(j)] += scale * a[static_cast<size_t>(i * cols + j)] * xi;
    }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i)
        s += a[i] * b[i];
    return s;
}

// Solves the symmetric positive semi-definite system (A + ridge*I) x = b in
// place by Cholesky. Throws SingularRegression when the pivot collapses even
// with the ridge.
inline Vec cholesky_solve(Vec a, Vec b, int n, double ridge) {
    for (int i = 0; i < n; ++i)
        a[static_cast<size_t>(i * n + i)] += ridge;
    // lower Cholesky factor in place
    for (int j = 0; j < n; ++j) {
        double diag = a[static_cast<size_t>(j * n + j)];
        for (int p = 0; p < j; ++p) {
            double l = a[static_cast<size_t>(j * n + p)];
            diag -= l * l;
        }
        if (!(diag > 0.0))
            throw Error(ErrorCode::SingularRegression, "rank-deficient normal equations");
        diag = std::sqrt(diag);
        a[static_cast<size_t>(j * n + j)] = diag;
        for (int i = j + 1; i < n; ++i) {
            double s = a[static_cast<size_t>(i * n + j)];
            for (int p = 0; p < j; ++p)
                s -= a[static_cast<size_t>(i * n + p)] * a[static_cast<size_t>(j * n + p)];
            a[static_cast<size_t>(i * n + j)] = s / diag;
        }
    }
    // forward substitution L y = b
    for (int i = 0; i < n; ++i) {
        double s = b[static_cast<size_t>(i)];
        for (int p = 0; p < i; ++p)
            s -= a[static_cast<size_t>(i * n + p)] * b[static_cast<size_t>(p)];
        b[static_cast<size_t>(i)] = s / a[static_cast<size_t>(i * n + i)];
    }
    // back substitution L^T x = y
    for (int i = n - 1; i >= 0; --i) {
        double s = b[static_cast<size_t>(i)];
        for (int p = i + 1; p < n; ++p)
            s -= a[static_cast<size_t>(p * n + i)] * b[static_cast<size_t>(p)];
        b[static_cast<size_t>(i)] = s / a[static_cast<size_t>(i * n + i)];
    }
    return b;
}

} // namespace varhor

#endif
