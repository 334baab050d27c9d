// SPDX-License-Identifier: Apache-2.0

#include "comfort/synth.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "comfort/errors.h"

namespace comfort {
namespace {

constexpr double kLog2Pi = 1.8378770664093453;

// N×M matrix of log(w_m) + log N(x_n | mu_m, diag(v_m)).
Matrix component_log_densities(const GmmModel &model, const Matrix &x) {
    const auto m = model.components();
    Matrix out(x.rows(), m);
    for (int c = 0; c < m; ++c) {
        const double log_w = model.weights[c] > 0.0 ? std::log(model.weights[c]) : -std::numeric_limits<double>::infinity();
        const Eigen::RowVectorXd inv_var = model.variances.row(c).cwiseInverse();
        const double log_norm = -0.5 * (model.dim() * kLog2Pi + model.variances.row(c).array().log().sum());
        Matrix diff = x.rowwise() - model.means.row(c);
        out.col(c) = (log_w + log_norm - 0.5 * (diff.array().square().rowwise() * inv_var.array()).rowwise().sum()).matrix();
    }
    return out;
}

// Row-wise log-sum-exp; also turns `log_dens` into log-responsibilities.
Vector normalise_rows(Matrix &log_dens) {
    Vector lse(log_dens.rows());
    for (Eigen::Index i = 0; i < log_dens.rows(); ++i) {
        const double mx = log_dens.row(i).maxCoeff();
        lse[i] = mx + std::log((log_dens.row(i).array() - mx).exp().sum());
        log_dens.row(i).array() -= lse[i];
    }
    return lse;
}

}  // namespace

double gmm_log_likelihood(const GmmModel &model, const Matrix &instances) {
    Matrix dens = component_log_densities(model, instances);
    return normalise_rows(dens).sum();
}

GmmFitResult gmm_fit(const Matrix &instances, int components, std::uint64_t seed, const GmmFitOptions &options) {
    const auto n = instances.rows();
    const auto d = instances.cols();
    if (components < 1) {
        throw ValidationError("gmm_fit: need at least one component");
    }
    if (n < components) {
        throw ValidationError("gmm_fit: " + std::to_string(n) + " instances for " + std::to_string(components) +
                              " components");
    }
    check_finite(instances, "gmm_fit input");

    Rng rng(seed);
    GmmFitResult result;
    GmmModel &model = result.model;
    model.weights = Vector::Constant(components, 1.0 / components);
    model.means.resize(components, d);
    const auto picks = rng.sample_without_replacement(static_cast<std::size_t>(n), static_cast<std::size_t>(components));
    for (int c = 0; c < components; ++c) model.means.row(c) = instances.row(static_cast<Eigen::Index>(picks[static_cast<std::size_t>(c)]));
    const Eigen::RowVectorXd global_mean = instances.colwise().mean();
    const Eigen::RowVectorXd global_var =
        (instances.rowwise() - global_mean).array().square().colwise().mean().max(options.variance_floor);
    model.variances = global_var.replicate(components, 1);

    double previous = -std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < options.max_iterations; ++iter) {
        Matrix log_resp = component_log_densities(model, instances);
        const double ll = normalise_rows(log_resp).sum();
        result.log_likelihood.push_back(ll);
        if (!std::isfinite(ll)) {
            throw NumericError("gmm_fit: log-likelihood became non-finite");
        }
        if (iter > 0 && (ll - previous) / static_cast<double>(n) < options.tolerance) {
            result.converged = true;
            break;
        }
        previous = ll;
        result.iterations = iter + 1;

        const Matrix resp = log_resp.array().exp();
        const Vector mass = resp.colwise().sum().transpose();
        for (int c = 0; c < components; ++c) {
            if (mass[c] <= 0.0) {
                model.weights[c] = 0.0;
                continue;
            }
            model.weights[c] = mass[c] / static_cast<double>(n);
            const Eigen::RowVectorXd mean = (resp.col(c).transpose() * instances) / mass[c];
            Matrix diff = instances.rowwise() - mean;
            const Eigen::RowVectorXd var = (resp.col(c).transpose() * diff.array().square().matrix()) / mass[c];
            model.means.row(c) = mean;
            model.variances.row(c) = var.array().max(options.variance_floor);
        }
        model.weights /= model.weights.sum();
    }
    if (!result.converged) {
        result.log_likelihood.push_back(gmm_log_likelihood(model, instances));
    }
    return result;
}

Matrix gmm_sample(const GmmModel &model, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    const auto d = model.dim();
    Matrix out(static_cast<Eigen::Index>(n), d);
    Vector cumulative(model.components());
    double acc = 0.0;
    for (int c = 0; c < model.components(); ++c) cumulative[c] = (acc += model.weights[c]);
    const Matrix stddev = model.variances.cwiseSqrt();
    for (std::size_t i = 0; i < n; ++i) {
        const double u = rng.uniform() * acc;
        int c = 0;
        while (c + 1 < model.components() && (u >= cumulative[c] || model.weights[c] == 0.0)) ++c;
        for (int j = 0; j < d; ++j) {
            out(static_cast<Eigen::Index>(i), j) = model.means(c, j) + stddev(c, j) * rng.normal();
        }
    }
    return out;
}

std::vector<SensorSequence> instances_to_sequences(const Matrix &instances, const std::string &subject_prefix,
                                                   std::size_t sequences_per_subject) {
    const auto count = static_cast<std::size_t>(instances.rows()) / kTokensPerSequence;
    std::vector<SensorSequence> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        out[i].tokens = instances.middleRows(static_cast<Eigen::Index>(i * kTokensPerSequence), kTokensPerSequence);
        const std::size_t subject = sequences_per_subject == 0 ? 0 : i / sequences_per_subject;
        out[i].subject = subject_prefix + std::to_string(subject);
    }
    return out;
}

std::vector<SensorSequence> make_synthetic_task(const SyntheticTaskSpec &spec) {
    if (spec.class_count() < 2) {
        throw ValidationError("make_synthetic_task: need at least two classes");
    }
    if (spec.sequences_per_class < 1) {
        throw ValidationError("make_synthetic_task: need at least one sequence per class");
    }
    const std::size_t subjects = std::clamp<std::size_t>(spec.subjects_per_class, 1, spec.sequences_per_class);
    Rng rng(spec.seed);
    std::vector<SensorSequence> out;
    out.reserve(spec.class_count() * spec.sequences_per_class);
    for (std::size_t c = 0; c < spec.class_count(); ++c) {
        const Matrix instances =
            gmm_sample(spec.class_models[c], spec.sequences_per_class * kTokensPerSequence, rng.fork(c).seed());
        // Sequences are dealt to subjects in contiguous runs.
        for (std::size_t i = 0; i < spec.sequences_per_class; ++i) {
            SensorSequence seq;
            seq.tokens = instances.middleRows(static_cast<Eigen::Index>(i * kTokensPerSequence), kTokensPerSequence);
            seq.label = static_cast<int>(c);
            seq.task = spec.task_id;
            seq.subject = spec.task_id + "/c" + std::to_string(c) + "s" +
                          std::to_string(i * subjects / spec.sequences_per_class);
            out.push_back(std::move(seq));
        }
    }
    return out;
}

Matrix gmm_marginal_variance(const GmmModel &model) {
    const Matrix mean = model.weights.transpose() * model.means;
    Matrix second = model.weights.transpose() * (model.variances.array() + model.means.array().square()).matrix();
    return second.array() - mean.array().square();
}

GmmModel reference_healthy_model(int dim, int components, std::uint64_t seed, double component_stddev) {
    Rng rng(seed);
    GmmModel model;
    model.weights = Vector::Constant(components, 1.0 / components);
    model.means.resize(components, dim);
    fill_normal(model.means, rng, 1.0);
    model.variances = Matrix::Constant(components, dim, component_stddev * component_stddev);
    return model;
}

SyntheticTaskSpec separated_task_spec(const std::string &task_id, const GmmModel &healthy, int classes,
                                      double separation, std::size_t sequences_per_class, std::uint64_t seed) {
    if (classes < 2 || classes - 1 > healthy.dim()) {
        throw ValidationError("separated_task_spec: need 2..dim+1 classes");
    }
    Rng rng(seed);
    SyntheticTaskSpec spec;
    spec.task_id = task_id;
    spec.seed = rng.fork(1).seed();
    spec.sequences_per_class = sequences_per_class;
    spec.nominal_bayes_accuracy = nominal_bayes_accuracy(classes, separation);
    spec.class_names.push_back("healthy");
    spec.class_models.push_back(healthy);

    // Orthonormal shift directions from a QR of a Gaussian matrix.
    Matrix gauss(healthy.dim(), classes - 1);
    fill_normal(gauss, rng, 1.0);
    const Matrix q = Eigen::HouseholderQR<Matrix>(gauss).householderQ() * Matrix::Identity(healthy.dim(), classes - 1);
    const double sigma = std::sqrt(gmm_marginal_variance(healthy).mean());
    for (int c = 1; c < classes; ++c) {
        GmmModel shifted = healthy;
        shifted.means.rowwise() += (separation * sigma) * q.col(c - 1).transpose();
        spec.class_names.push_back("disease" + std::to_string(c));
        spec.class_models.push_back(std::move(shifted));
    }
    return spec;
}

double nominal_bayes_accuracy(int classes, double separation) {
    // Pairwise error for two Gaussians at distance s*sqrt(15) sigma, union-bounded.
    const double z = separation * std::sqrt(static_cast<double>(kTokensPerSequence)) / 2.0;
    const double pairwise = 0.5 * std::erfc(z / std::numbers::sqrt2);
    return std::max(0.0, 1.0 - (classes - 1) * pairwise);
}

}  // namespace comfort
