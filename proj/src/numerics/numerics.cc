// SPDX-License-Identifier: Apache-2.0

#include "comfort/numerics.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "comfort/errors.h"

namespace comfort {

void check_finite(const Matrix &m, const std::string &what) {
    if (!m.allFinite()) {
        throw NumericError(what + " contains non-finite values");
    }
}

void round_to_float(Matrix &m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
    }
}

Matrix column_norms(const Matrix &w) {
    if (w.size() == 0) {
        throw DimensionError("column_norms: empty matrix");
    }
    Matrix norms(1, w.cols());
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
        norms(0, j) = w.col(j).norm();
    }
    return norms;
}

EigenDecomposition sym_eig(const Matrix &s) {
    if (s.rows() != s.cols() || s.size() == 0) {
        throw DimensionError("sym_eig: matrix must be square and non-empty");
    }
    const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
    if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale) {
        throw ValidationError("sym_eig: matrix is not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(s.cast<double>());
    if (solver.info() != Eigen::Success) {
        throw NumericError("sym_eig: eigensolver did not converge");
    }
    const auto n = s.rows();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    const Vector &ascending = solver.eigenvalues();
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return ascending[a] > ascending[b]; });

    EigenDecomposition out{Vector(n), Matrix(n, n)};
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto src = order[static_cast<std::size_t>(i)];
        out.values[i] = ascending[src];
        Vector v = solver.eigenvectors().col(src);
        Eigen::Index pivot = 0;
        v.cwiseAbs().maxCoeff(&pivot);
        if (v[pivot] < 0) v = -v;
        out.vectors.col(i) = v;
    }
    return out;
}

std::size_t Rng::below(std::size_t n) {
    std::uniform_int_distribution<std::size_t> dist(0, n - 1);
    return dist(engine_);
}

std::vector<std::size_t> Rng::sample_without_replacement(std::size_t n, std::size_t count) {
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    count = std::min(count, n);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + below(n - i);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(count);
    return pool;
}

std::vector<std::size_t> Rng::permutation(std::size_t n) { return sample_without_replacement(n, n); }

Rng Rng::fork(std::uint64_t stream) const {
    std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x9e3779b9u};
    std::uint64_t derived = 0;
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    derived = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
    return Rng(derived);
}

void fill_normal(Matrix &m, Rng &rng, double stddev) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, stddev);
}

void fill_xavier(Matrix &m, Rng &rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
}

KMeansResult kmeans2(const Matrix &points, std::uint64_t seed, int max_iterations) {
    const auto n = points.rows();
    if (n < 2) {
        throw ValidationError("kmeans2: need at least two points");
    }
    Rng rng(seed);
    const auto first = static_cast<Eigen::Index>(rng.below(static_cast<std::size_t>(n)));
    Eigen::Index second = first;
    double farthest = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double d = (points.row(i) - points.row(first)).squaredNorm();
        if (d > farthest) {
            farthest = d;
            second = i;
        }
    }
    if (farthest == 0.0) {
        throw ValidationError("kmeans2: all points are identical");
    }

    KMeansResult result;
    result.centroids.resize(2, points.cols());
    result.centroids.row(0) = points.row(first);
    result.centroids.row(1) = points.row(second);
    result.assignment.assign(static_cast<std::size_t>(n), -1);

    for (int iter = 0; iter < max_iterations; ++iter) {
        bool changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double d0 = (points.row(i) - result.centroids.row(0)).squaredNorm();
            const double d1 = (points.row(i) - result.centroids.row(1)).squaredNorm();
            const int label = d1 < d0 ? 1 : 0;
            if (result.assignment[static_cast<std::size_t>(i)] != label) {
                result.assignment[static_cast<std::size_t>(i)] = label;
                changed = true;
            }
        }
        result.iterations = iter + 1;
        if (!changed) {
            result.converged = true;
            break;
        }
        for (int c = 0; c < 2; ++c) {
            Matrix sum = Matrix::Zero(1, points.cols());
            Eigen::Index count = 0;
            for (Eigen::Index i = 0; i < n; ++i) {
                if (result.assignment[static_cast<std::size_t>(i)] == c) {
                    sum += points.row(i);
                    ++count;
                }
            }
            // An emptied cluster keeps its previous centroid.
            if (count > 0) result.centroids.row(c) = sum / static_cast<double>(count);
        }
    }
    return result;
}

void adam_update(std::span<const ParamRef> params, AdamState &state, const AdamOptions &options) {
    if (state.first_moment.empty() && state.step == 0) {
        for (const auto &p : params) {
            state.first_moment.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
            state.second_moment.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
        }
    }
    if (state.first_moment.size() != params.size()) {
        throw DimensionError("adam_update: parameter count changed between steps");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto &p = params[i];
        if (p.value->rows() != p.grad->rows() || p.value->cols() != p.grad->cols() ||
            p.value->rows() != state.first_moment[i].rows() || p.value->cols() != state.first_moment[i].cols()) {
            throw DimensionError("adam_update: shape mismatch for " + p.name);
        }
    }
    ++state.step;
    const double correction1 = 1.0 - std::pow(options.beta1, static_cast<double>(state.step));
    const double correction2 = 1.0 - std::pow(options.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Matrix &m = state.first_moment[i];
        Matrix &v = state.second_moment[i];
        const Matrix &g = *params[i].grad;
        m = options.beta1 * m + (1.0 - options.beta1) * g;
        v = options.beta2 * v + (1.0 - options.beta2) * g.cwiseProduct(g);
        auto m_hat = m.array() / correction1;
        auto v_hat = v.array() / correction2;
        params[i].value->array() -= options.lr * m_hat / (v_hat.sqrt() + options.eps);
    }
}

GradCheckReport finite_diff_grad_check(const std::function<double()> &loss, std::span<const ParamRef> params,
                                       std::size_t probes_per_param, Rng &rng, double h, double denominator_floor) {
    GradCheckReport report;
    for (const auto &p : params) {
        const auto size = static_cast<std::size_t>(p.value->size());
        for (std::size_t idx : rng.sample_without_replacement(size, probes_per_param)) {
            double &x = p.value->data()[idx];
            const double saved = x;
            x = saved + h;
            const double up = loss();
            x = saved - h;
            const double down = loss();
            x = saved;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                throw NumericError("finite_diff_grad_check: non-finite loss probing " + p.name);
            }
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = p.grad->data()[idx];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), denominator_floor});
            const double rel = std::abs(analytic - numeric) / denom;
            ++report.probes;
            if (report.worst_parameter.empty() || rel > report.max_relative_error) {
                report.max_relative_error = rel;
                report.worst_parameter = p.name + "[" + std::to_string(idx) + "]";
            }
        }
    }
    return report;
}

}  // namespace comfort
