// SPDX-License-Identifier: Apache-2.0
//
// Independent reference implementations used by the tests. They favour
// obviousness over speed and share no code with the library.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "comfort/numerics.h"

namespace oracle {

using comfort::Matrix;

inline Matrix random_matrix(int rows, int cols, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> n(0.0, scale);
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = n(gen);
    return m;
}

/// Plain triple loop.
inline Matrix matmul(const Matrix &a, const Matrix &b) {
    Matrix c = Matrix::Zero(a.rows(), b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index k = 0; k < a.cols(); ++k)
            for (Eigen::Index j = 0; j < b.cols(); ++j) c(i, j) += a(i, k) * b(k, j);
    return c;
}

inline std::vector<double> column_norms(const Matrix &w) {
    std::vector<double> out;
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
        double s = 0.0;
        for (Eigen::Index i = 0; i < w.rows(); ++i) s += w(i, j) * w(i, j);
        out.push_back(std::sqrt(s));
    }
    return out;
}

/// Cyclic Jacobi rotations; returns eigenvalues (unsorted) on the diagonal
/// of the rotated matrix and the accumulated rotation in `vectors`.
inline std::vector<double> jacobi_eigenvalues(Matrix a, Matrix *vectors = nullptr, int sweeps = 100) {
    const Eigen::Index n = a.rows();
    Matrix v = Matrix::Identity(n, n);
    for (int sweep = 0; sweep < sweeps; ++sweep) {
        double off = 0.0;
        for (Eigen::Index p = 0; p < n; ++p)
            for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (off < 1e-30) break;
        for (Eigen::Index p = 0; p < n; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                if (std::abs(a(p, q)) < 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    if (vectors) *vectors = v;
    std::vector<double> out;
    for (Eigen::Index i = 0; i < n; ++i) out.push_back(a(i, i));
    return out;
}

inline double max_abs_diff(const Matrix &a, const Matrix &b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace oracle
