// SPDX-License-Identifier: Apache-2.0
//
// Diagonal-covariance Gaussian mixtures: EM estimation and sampling for the
// healthy pre-training corpus, plus labelled synthetic disease tasks with a
// known class structure.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "comfort/datapipe.h"
#include "comfort/numerics.h"

namespace comfort {

struct GmmModel {
    Vector weights;    // M, on the simplex
    Matrix means;      // M×D
    Matrix variances;  // M×D, diagonal covariances

    int components() const { return static_cast<int>(weights.size()); }
    int dim() const { return static_cast<int>(means.cols()); }
};

struct GmmFitOptions {
    int max_iterations = 200;
    /// Stop once the mean per-instance log-likelihood improves by less.
    double tolerance = 1e-6;
    double variance_floor = 1e-6;
};

struct GmmFitResult {
    GmmModel model;
    /// Total log-likelihood of the data under the parameters at the start of
    /// each iteration, followed by the final parameters' value.
    std::vector<double> log_likelihood;
    int iterations = 0;
    bool converged = false;
};

GmmFitResult gmm_fit(const Matrix &instances, int components, std::uint64_t seed, const GmmFitOptions &options = {});

/// Total log-likelihood of `instances` under `model`.
double gmm_log_likelihood(const GmmModel &model, const Matrix &instances);

/// Per-feature variance of the mixture (within-component plus the spread of
/// the component means), 1×D.
Matrix gmm_marginal_variance(const GmmModel &model);

/// n×D draws: a component by weight, then a diagonal Gaussian draw.
Matrix gmm_sample(const GmmModel &model, std::size_t n, std::uint64_t seed);

/// Groups consecutive instances into 15-token sequences; the remainder is dropped.
std::vector<SensorSequence> instances_to_sequences(const Matrix &instances, const std::string &subject_prefix,
                                                   std::size_t sequences_per_subject);

struct SyntheticTaskSpec {
    std::string task_id;
    std::vector<std::string> class_names;  // class 0 is the healthy class
    std::vector<GmmModel> class_models;
    std::size_t sequences_per_class = 100;
    std::size_t subjects_per_class = 4;
    std::uint64_t seed = 0;
    /// For documentation only; not used when sampling.
    double nominal_bayes_accuracy = 0.0;

    std::size_t class_count() const { return class_models.size(); }
};

/// Per class, draws instances from the class model and assembles them into
/// 15-token sequences spread across `subjects_per_class` subjects. Output is
/// ordered subject by subject, each subject's sequences chronologically.
std::vector<SensorSequence> make_synthetic_task(const SyntheticTaskSpec &spec);

/// A seeded reference mixture standing in for healthy-individual sensor data
/// after preprocessing: `components` isotropic blobs in `dim` features.
GmmModel reference_healthy_model(int dim, int components, std::uint64_t seed, double component_stddev = 0.3);

/// Healthy class = `healthy`; each disease class shifts every component mean
/// by `separation` times the mixture's standard deviation (square root of
/// the mean marginal per-feature variance) along its own random orthonormal
/// direction, so every pair of classes is at least that far apart. Measured
/// this way the shift is what a linear read-out of pooled tokens sees.
SyntheticTaskSpec separated_task_spec(const std::string &task_id, const GmmModel &healthy, int classes,
                                      double separation, std::size_t sequences_per_class, std::uint64_t seed);

/// Union-bound lower estimate of sequence-level Bayes accuracy for
/// single-blob classes at pairwise distance `separation` sigma with 15 i.i.d.
/// tokens per sequence.
double nominal_bayes_accuracy(int classes, double separation);

}  // namespace comfort
