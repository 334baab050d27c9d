// SPDX-License-Identifier: Apache-2.0
//
// Dense linear algebra and the small statistical kernels the rest of the
// library builds on. All arithmetic is done in double precision; weights are
// rounded to 32-bit floats when they are finalized or written to disk.

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace comfort {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Throws NumericError naming `what` if any entry is NaN or infinite.
void check_finite(const Matrix &m, const std::string &what);

/// Rounds every entry to the nearest 32-bit float, in place.
void round_to_float(Matrix &m);

/// 1×cols row of per-column L2 norms.
Matrix column_norms(const Matrix &w);

struct EigenDecomposition {
    Vector values;   // descending
    Matrix vectors;  // column i pairs with values[i]
};

/// Eigendecomposition of a symmetric matrix. Eigenvalues come back in
/// descending order (stable for ties); each eigenvector is sign-normalised so
/// its largest-magnitude component is positive.
EigenDecomposition sym_eig(const Matrix &s);

/// Seeded random source. One generator drives all randomness in a run;
/// `fork` derives independent, reproducible sub-streams.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

    double normal() { return normal_(engine_); }
    double normal(double mean, double stddev) { return mean + stddev * normal_(engine_); }
    double uniform() { return uniform_(engine_); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(engine_); }
    /// Uniform integer in [0, n).
    std::size_t below(std::size_t n);
    /// `count` distinct indices from [0, n), in draw order.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count);
    std::vector<std::size_t> permutation(std::size_t n);
    Rng fork(std::uint64_t stream) const;
    std::uint64_t seed() const { return seed_; }

  private:
    std::mt19937_64 engine_;
    std::uint64_t seed_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// Fills `m` with N(0, stddev²) entries.
void fill_normal(Matrix &m, Rng &rng, double stddev);
/// Glorot/Xavier uniform for a fan_in×fan_out weight.
void fill_xavier(Matrix &m, Rng &rng);

struct KMeansResult {
    std::vector<int> assignment;  // 0 or 1 per point
    Matrix centroids;             // 2×features
    int iterations = 0;
    bool converged = false;
};

/// Two-cluster Lloyd iteration on the rows of `points`. The first centroid is
/// a seeded random point, the second the point farthest from it. Stops when no
/// assignment changes or after `max_iterations`. Throws ValidationError when
/// every point is identical.
KMeansResult kmeans2(const Matrix &points, std::uint64_t seed, int max_iterations = 100);

/// A trainable tensor: its current value and the gradient slot the training
/// loop fills before an optimizer step.
struct ParamRef {
    std::string name;
    Matrix *value = nullptr;
    Matrix *grad = nullptr;
};

struct AdamOptions {
    double lr = 0.005;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<Matrix> first_moment;
    std::vector<Matrix> second_moment;
    std::int64_t step = 0;
};

/// One bias-corrected Adam step over `params`. The state is sized on first use
/// and must keep seeing the same parameter shapes afterwards.
void adam_update(std::span<const ParamRef> params, AdamState &state, const AdamOptions &options = {});

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::string worst_parameter;
    std::size_t probes = 0;
};

/// Compares the analytic gradients already stored in `params[i].grad` with
/// central differences of `loss` on up to `probes_per_param` random
/// coordinates of every parameter. Relative error is
/// |analytic - numeric| / max(|analytic|, |numeric|, denominator_floor).
GradCheckReport finite_diff_grad_check(const std::function<double()> &loss, std::span<const ParamRef> params,
                                       std::size_t probes_per_param, Rng &rng, double h = 1e-4,
                                       double denominator_floor = 1e-6);

}  // namespace comfort
