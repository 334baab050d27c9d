// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <map>

#include "comfort/errors.h"
#include "comfort/synth.h"
#include "oracles.h"

using namespace comfort;

namespace {

GmmModel single(const Matrix &mean, const Matrix &variance) {
    GmmModel m;
    m.weights = Vector::Ones(1);
    m.means = mean;
    m.variances = variance;
    return m;
}

// Nearest-class-mean rule on the token average, an independent classifier.
double nearest_mean_accuracy(const std::vector<SensorSequence> &seqs, int classes) {
    std::vector<Matrix> centre(static_cast<std::size_t>(classes), Matrix::Zero(1, seqs[0].tokens.cols()));
    std::vector<int> count(static_cast<std::size_t>(classes), 0);
    for (const auto &s : seqs) {
        centre[static_cast<std::size_t>(s.label)] += s.tokens.colwise().mean();
        ++count[static_cast<std::size_t>(s.label)];
    }
    for (int c = 0; c < classes; ++c) centre[static_cast<std::size_t>(c)] /= count[static_cast<std::size_t>(c)];
    int hits = 0;
    for (const auto &s : seqs) {
        const Matrix m = s.tokens.colwise().mean();
        int best = 0;
        for (int c = 1; c < classes; ++c) {
            if ((m - centre[static_cast<std::size_t>(c)]).norm() < (m - centre[static_cast<std::size_t>(best)]).norm()) best = c;
        }
        hits += best == s.label;
    }
    return static_cast<double>(hits) / static_cast<double>(seqs.size());
}

}  // namespace

TEST_SUITE("synth") {

TEST_CASE("one component recovers the sample moments") {
    const Matrix x = oracle::random_matrix(2000, 3, 1, 2.0).array() + 1.0;
    const auto fit = gmm_fit(x, 1, 0);
    const Matrix mean = x.colwise().mean();
    for (int j = 0; j < 3; ++j) {
        double var = 0.0;
        for (Eigen::Index i = 0; i < x.rows(); ++i) var += (x(i, j) - mean(0, j)) * (x(i, j) - mean(0, j));
        var /= static_cast<double>(x.rows());
        CHECK(fit.model.means(0, j) == doctest::Approx(mean(0, j)).epsilon(0.02));
        CHECK(fit.model.variances(0, j) == doctest::Approx(var).epsilon(0.02));
    }
    CHECK(fit.model.weights(0) == doctest::Approx(1.0));
}

TEST_CASE("two separated blobs are recovered and EM never decreases the likelihood") {
    Matrix x = oracle::random_matrix(1000, 2, 2, 0.5);
    x.topRows(500).array() += 10.0;
    x.bottomRows(500).array() -= 10.0;
    const auto fit = gmm_fit(x, 2, 3);
    std::vector<double> firsts{fit.model.means(0, 0), fit.model.means(1, 0)};
    std::sort(firsts.begin(), firsts.end());
    CHECK(firsts[0] == doctest::Approx(-10.0).epsilon(0.05));
    CHECK(firsts[1] == doctest::Approx(10.0).epsilon(0.05));
    for (std::size_t i = 1; i < fit.log_likelihood.size(); ++i) {
        CHECK(fit.log_likelihood[i] >= fit.log_likelihood[i - 1] - 1e-6 * std::abs(fit.log_likelihood[i - 1]));
    }
    CHECK(std::abs(fit.model.weights.sum() - 1.0) < 1e-9);
}

TEST_CASE("constant data is held at the variance floor") {
    const auto fit = gmm_fit(Matrix::Constant(50, 2, 4.0), 1, 0);
    CHECK(fit.model.variances(0, 0) == doctest::Approx(1e-6));
    CHECK(fit.model.means(0, 1) == 4.0);
    CHECK_THROWS_AS(gmm_fit(Matrix::Zero(2, 2), 3, 0), ValidationError);
}

TEST_CASE("sampling edge cases") {
    Matrix mean(1, 3);
    mean << 1, 2, 3;
    const Matrix s = gmm_sample(single(mean, Matrix::Zero(1, 3)), 10, 4);
    for (int i = 0; i < 10; ++i) CHECK(s.row(i) == mean.row(0));

    GmmModel two;
    two.weights = Vector(2);
    two.weights << 1.0, 0.0;
    two.means = Matrix(2, 1);
    two.means << 0.0, 100.0;
    two.variances = Matrix::Constant(2, 1, 1.0);
    const Matrix draws = gmm_sample(two, 500, 5);
    CHECK(draws.maxCoeff() < 50.0);
    CHECK(gmm_sample(two, 20, 9) == gmm_sample(two, 20, 9));
}

TEST_CASE("fitted then sampled data matches the source moments") {
    const GmmModel source = reference_healthy_model(6, 3, 7, 0.5);
    const Matrix data = gmm_sample(source, 20000, 8);
    const auto fit = gmm_fit(data, 3, 9);
    const Matrix resampled = gmm_sample(fit.model, 100000, 10);
    Matrix model_mean = Matrix::Zero(1, 6);
    for (int c = 0; c < 3; ++c) model_mean += fit.model.weights(c) * fit.model.means.row(c);
    const Matrix sample_mean = resampled.colwise().mean();
    const Matrix source_mean = data.colwise().mean();
    const Matrix source_var = (data.rowwise() - source_mean.row(0)).array().square().colwise().mean();
    const Matrix sample_var = (resampled.rowwise() - sample_mean.row(0)).array().square().colwise().mean();
    const double scale = std::sqrt(source_var.mean());
    for (int j = 0; j < 6; ++j) {
        // 1% of the feature scale for the model mean, 5% for the source moments.
        CHECK(std::abs(sample_mean(0, j) - model_mean(0, j)) < 0.01 * scale);
        CHECK(std::abs(sample_mean(0, j) - source_mean(0, j)) < 0.05 * scale);
        CHECK(sample_var(0, j) == doctest::Approx(source_var(0, j)).epsilon(0.05));
    }
}

TEST_CASE("synthetic tasks are balanced, labelled and reproducible") {
    const GmmModel healthy = reference_healthy_model(16, 2, 1);
    const auto spec = separated_task_spec("t", healthy, 2, 3.0, 100, 2);
    const auto seqs = make_synthetic_task(spec);
    REQUIRE(seqs.size() == 200);
    std::map<int, int> per_class;
    for (const auto &s : seqs) {
        ++per_class[s.label];
        CHECK(s.tokens.rows() == 15);
        CHECK(s.task == "t");
    }
    CHECK(per_class[0] == 100);
    CHECK(per_class[1] == 100);
    const auto again = make_synthetic_task(spec);
    CHECK(encode_tensor(sequences_to_tensor(again)) == encode_tensor(sequences_to_tensor(seqs)));
}

TEST_CASE("separated classes are linearly separable, identical ones are not") {
    const GmmModel healthy = reference_healthy_model(16, 1, 3);
    const auto spec = separated_task_spec("sep", healthy, 3, 5.0, 100, 4);
    CHECK(spec.nominal_bayes_accuracy >= 0.99);
    CHECK(nearest_mean_accuracy(make_synthetic_task(spec), 3) >= 0.99);

    auto same = spec;
    same.class_models = {healthy, healthy, healthy};
    const double chance = nearest_mean_accuracy(make_synthetic_task(same), 3);
    // Centroids fitted on the same data overfit a little; stay near 1/3.
    CHECK(chance < 0.6);
}

TEST_CASE("mixture variance matches sampled moments") {
    const GmmModel model = reference_healthy_model(6, 3, 8, 0.5);
    const Matrix x = gmm_sample(model, 200000, 9);
    const Matrix mean = x.colwise().mean();
    const Matrix var = (x.rowwise() - mean.row(0)).array().square().colwise().mean();
    const Matrix want = gmm_marginal_variance(model);
    for (int j = 0; j < 6; ++j) CHECK(var(0, j) == doctest::Approx(want(0, j)).epsilon(0.03));
}

TEST_CASE("separation holds for a linear read-out of multimodal classes") {
    const GmmModel healthy = reference_healthy_model(32, 4, 5, 0.3);
    const auto spec = separated_task_spec("multi", healthy, 3, 3.0, 200, 6);
    CHECK(spec.nominal_bayes_accuracy >= 0.99);
    CHECK(nearest_mean_accuracy(make_synthetic_task(spec), 3) >= 0.97);
}

TEST_CASE("nominal Bayes accuracy") {
    CHECK(nominal_bayes_accuracy(3, 5.0) > 0.999);
    CHECK(nominal_bayes_accuracy(4, 3.0) > 0.99);
    CHECK(nominal_bayes_accuracy(2, 0.0) == doctest::Approx(0.5));
}

TEST_CASE("corpus sequences group consecutive instances") {
    const Matrix x = oracle::random_matrix(100, 4, 1);
    const auto seqs = instances_to_sequences(x, "h", 2);
    REQUIRE(seqs.size() == 6);
    CHECK(seqs[1].tokens.row(0) == x.row(15));
    CHECK(seqs[2].subject == "h1");
}

}  // TEST_SUITE
