// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <set>

#include "comfort/datapipe.h"
#include "comfort/errors.h"
#include "comfort/synth.h"
#include "oracles.h"

using namespace comfort;

namespace {

RawRecording recording(const std::vector<ChannelSpec> &layout, double seconds, double start = 0.0) {
    RawRecording r;
    r.subject = "s";
    r.label = 1;
    for (const auto &c : layout) {
        Stream s{c.name, c.rate_hz, start, {}};
        const auto n = static_cast<std::size_t>(seconds * c.rate_hz);
        for (std::size_t i = 0; i < n; ++i) s.samples.push_back(static_cast<double>(i) / c.rate_hz);
        r.streams.push_back(std::move(s));
    }
    return r;
}

std::vector<SensorSequence> roster(const std::vector<std::size_t> &counts, int d = 2) {
    std::vector<SensorSequence> out;
    for (std::size_t s = 0; s < counts.size(); ++s) {
        for (std::size_t i = 0; i < counts[s]; ++i) {
            SensorSequence q;
            q.tokens = Matrix::Constant(kTokensPerSequence, d, static_cast<double>(i));
            q.subject = "subject" + std::to_string(s);
            q.label = 0;
            out.push_back(std::move(q));
        }
    }
    return out;
}

std::vector<SensorSequence> from_rows(const Matrix &rows) {
    // Every row becomes one token of a 15-token sequence; rows must be a multiple of 15.
    std::vector<SensorSequence> out;
    for (Eigen::Index i = 0; i + kTokensPerSequence <= rows.rows(); i += kTokensPerSequence) {
        SensorSequence s;
        s.tokens = rows.middleRows(i, kTokensPerSequence);
        s.subject = "x";
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace

TEST_SUITE("datapipe") {

TEST_CASE("the standard channel layout has 299 features") {
    const auto layout = standard_channel_layout();
    CHECK(feature_dim(layout) == 299);
    std::size_t watch = 0;
    for (std::size_t i = 0; i < 7; ++i) watch += static_cast<std::size_t>(layout[i].rate_hz);
    CHECK(watch == 169);
    CHECK(layout.size() == 7 + 26);
}

TEST_CASE("windowing counts follow floor(duration / 15)") {
    const std::vector<ChannelSpec> layout{{"a", 2}, {"b", 3}};
    CHECK(align_and_window(recording(layout, 60), layout).size() == 4);
    CHECK(align_and_window(recording(layout, 29), layout).size() == 1);
    CHECK(align_and_window(recording(layout, 14), layout).empty());
    for (int secs = 0; secs < 100; secs += 7) {
        CHECK(align_and_window(recording(layout, secs), layout).size() == static_cast<std::size_t>(secs / 15));
    }
}

TEST_CASE("windowing concatenates channels in layout order") {
    const std::vector<ChannelSpec> layout{{"a", 2}, {"b", 3}};
    const auto seqs = align_and_window(recording(layout, 30), layout);
    REQUIRE(seqs.size() == 2);
    const Matrix &t = seqs[1].tokens;
    CHECK(t.rows() == 15);
    CHECK(t.cols() == 5);
    // Second window, third second: t = 17 s.
    CHECK(t(2, 0) == doctest::Approx(17.0));
    CHECK(t(2, 1) == doctest::Approx(17.5));
    CHECK(t(2, 2) == doctest::Approx(17.0));
    CHECK(t(2, 4) == doctest::Approx(17.0 + 2.0 / 3.0));
    CHECK(seqs[0].label == 1);
}

TEST_CASE("windowing aligns streams on their common start") {
    const std::vector<ChannelSpec> layout{{"a", 1}, {"b", 1}};
    RawRecording r = recording(layout, 40);
    r.streams[1].start_seconds = 5.0;  // b starts 5 s later, so a is cut at t=5
    const auto seqs = align_and_window(r, layout);
    REQUIRE(seqs.size() == 2);
    CHECK(seqs[0].tokens(0, 0) == 5.0);
    CHECK(seqs[0].tokens(0, 1) == 0.0);
}

TEST_CASE("windowing rejects missing channels and rate mismatches") {
    const std::vector<ChannelSpec> layout{{"a", 2}, {"b", 3}};
    RawRecording r = recording(layout, 30);
    r.streams.pop_back();
    CHECK_THROWS_AS(align_and_window(r, layout), ValidationError);
    RawRecording wrong = recording(layout, 30);
    wrong.streams[0].rate_hz = 4;
    CHECK_THROWS_AS(align_and_window(wrong, layout), ValidationError);
}

TEST_CASE("chronological split examples") {
    auto one = chronological_split(roster({10}));
    CHECK(one.train.size() == 7);
    CHECK(one.validation.size() == 1);
    CHECK(one.test.size() == 2);
    auto single = chronological_split(roster({1}));
    CHECK(single.train.empty());
    CHECK(single.validation.empty());
    CHECK(single.test.size() == 1);
    auto two = chronological_split(roster({10, 10}));
    CHECK(two.train.size() == 14);
    CHECK(two.validation.size() == 2);
    CHECK(two.test.size() == 4);
    CHECK_THROWS_AS(chronological_split(std::vector<SensorSequence>{}), ValidationError);
}

TEST_CASE("chronological split preserves each subject's order") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::size_t> counts;
        const auto subjects = 1 + rng.below(6);
        for (std::size_t s = 0; s < subjects; ++s) counts.push_back(1 + rng.below(40));
        const auto seqs = roster(counts);
        const auto split = chronological_split(seqs);
        for (std::size_t s = 0; s < counts.size(); ++s) {
            const std::string name = "subject" + std::to_string(s);
            std::vector<double> order;
            std::size_t sizes[3] = {0, 0, 0};
            int part = 0;
            for (const auto *list : {&split.train, &split.validation, &split.test}) {
                for (const auto &q : *list) {
                    if (q.subject == name) {
                        order.push_back(q.tokens(0, 0));
                        ++sizes[part];
                    }
                }
                ++part;
            }
            const std::size_t n = counts[s];
            CHECK(sizes[0] == n * 7 / 10);
            CHECK(sizes[1] == n / 10);
            CHECK(sizes[0] + sizes[1] + sizes[2] == n);
            for (std::size_t i = 0; i < order.size(); ++i) CHECK(order[i] == static_cast<double>(i));
        }
    }
}

TEST_CASE("subject prefix keeps the earliest share per subject") {
    const auto seqs = roster({10, 5});
    const auto p = subject_prefix(seqs, 0.4);
    REQUIRE(p.size() == 4 + 2);
    CHECK(p[0].tokens(0, 0) == 0.0);
    CHECK(p[3].tokens(0, 0) == 3.0);
    CHECK(p[4].subject == "subject1");
    CHECK(subject_prefix(seqs, 0.01).size() == 2);
    CHECK_THROWS_AS(subject_prefix(seqs, 0.0), ValidationError);
}

TEST_CASE("min-max scaling examples") {
    Matrix rows(15, 2);
    for (int i = 0; i < 15; ++i) rows.row(i) << 2.0 + 4.0 * (i % 3) / 2.0, 5.0;
    const auto train = from_rows(rows);
    const auto scaler = minmax_fit(train);
    const auto scaled = minmax_apply(scaler, train);
    CHECK(scaled[0].tokens(0, 0) == 0.0);
    CHECK(scaled[0].tokens(1, 0) == 0.5);
    CHECK(scaled[0].tokens(2, 0) == 1.0);
    CHECK(scaled[0].tokens(5, 1) == 0.0);

    SensorSequence test;
    test.tokens = Matrix::Constant(15, 2, 8.0);
    test.tokens(0, 0) = -3.0;
    const auto out = minmax_apply(scaler, std::vector<SensorSequence>{test});
    CHECK(out[0].tokens(1, 0) == 1.0);
    CHECK(out[0].tokens(0, 0) == 0.0);
}

TEST_CASE("min-max keeps every value in the unit interval") {
    const auto train = from_rows(oracle::random_matrix(150, 6, 1, 3.0));
    const auto other = from_rows(oracle::random_matrix(150, 6, 2, 5.0));
    const auto scaler = minmax_fit(train);
    for (const auto *set : {&train, &other}) {
        for (const auto &s : minmax_apply(scaler, *set)) {
            CHECK(s.tokens.minCoeff() >= 0.0);
            CHECK(s.tokens.maxCoeff() <= 1.0);
        }
    }
}

TEST_CASE("pca on a line explains all variance with one component") {
    Matrix rows(30, 2);
    for (int i = 0; i < 30; ++i) rows.row(i) << i, i;
    const auto model = pca_fit(from_rows(rows), 1);
    CHECK(model.explained_variance_ratio == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("pca explained variance equals the eigenvalue mass of the covariance") {
    const Matrix raw = oracle::random_matrix(300, 8, 5) * oracle::random_matrix(8, 8, 6);
    const auto train = from_rows(raw);
    // Independent covariance of standardised data, population statistics.
    const Matrix mean = raw.colwise().mean();
    Matrix z = raw.rowwise() - mean.row(0);
    for (int j = 0; j < z.cols(); ++j) z.col(j) /= std::sqrt(z.col(j).squaredNorm() / static_cast<double>(z.rows()));
    Matrix cov = oracle::matmul(z.transpose(), z) / static_cast<double>(z.rows());
    auto eig = oracle::jacobi_eigenvalues(cov);
    std::sort(eig.rbegin(), eig.rend());
    double total = 0.0;
    for (double v : eig) total += v;
    double previous = 0.0;
    for (int k = 1; k <= 8; ++k) {
        const auto model = pca_fit(train, k);
        double top = 0.0;
        for (int i = 0; i < k; ++i) top += eig[static_cast<std::size_t>(i)];
        CHECK(std::abs(model.explained_variance_ratio - top / total) < 1e-9);
        CHECK(model.explained_variance_ratio >= previous - 1e-15);
        previous = model.explained_variance_ratio;
        const Matrix gram = model.projection.transpose() * model.projection;
        CHECK(oracle::max_abs_diff(gram, Matrix::Identity(k, k)) < 1e-6);
    }
    CHECK(previous == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("pca with k = D reconstructs the standardised data") {
    const Matrix raw = oracle::random_matrix(150, 6, 8);
    const auto train = from_rows(raw);
    const auto model = pca_fit(train, 6);
    const auto projected = pca_apply(model, train);
    for (std::size_t i = 0; i < train.size(); ++i) {
        const Matrix z = (train[i].tokens.rowwise() - model.mean.row(0)).array().rowwise() / model.stddev.row(0).array();
        const Matrix back = projected[i].tokens * model.projection.transpose();
        CHECK(oracle::max_abs_diff(back, z) <= 1e-5);
    }
}

TEST_CASE("pca applies train statistics and validates k") {
    const auto train = from_rows(oracle::random_matrix(150, 4, 9));
    CHECK_THROWS_AS(pca_fit(train, 5), ValidationError);
    CHECK_THROWS_AS(pca_fit(train, 0), ValidationError);
    const auto model = pca_fit(train, 2);
    const auto test = from_rows(oracle::random_matrix(30, 4, 10));
    const auto out = pca_apply(model, test);
    const Matrix z = (test[0].tokens.rowwise() - model.mean.row(0)).array().rowwise() / model.stddev.row(0).array();
    CHECK(oracle::max_abs_diff(out[0].tokens, z * model.projection) < 1e-12);
    CHECK(out[0].tokens.cols() == 2);
}

TEST_CASE("ctrl partition rejects the planted high-loss regime") {
    Matrix curves(20, 5);
    for (int i = 0; i < 20; ++i)
        for (int e = 0; e < 5; ++e) curves(i, e) = (i % 4 == 0 ? 3.0 : 0.1) + 0.01 * ((i * 7 + e) % 5);
    const auto part = ctrl_partition(curves, 1);
    CHECK_FALSE(part.degenerate);
    REQUIRE(part.rejected.size() == 5);
    for (auto i : part.rejected) CHECK(i % 4 == 0);
}

TEST_CASE("ctrl keeps everything when losses are indistinguishable") {
    const auto part = ctrl_partition(Matrix::Constant(6, 4, 0.2), 1);
    CHECK(part.degenerate);
    CHECK(part.retained.size() == 6);

    std::vector<SensorSequence> same(8);
    for (auto &s : same) {
        s.tokens = Matrix::Constant(15, 3, 0.5);
        s.label = 1;
    }
    CtrlConfig cfg;
    cfg.epochs = 5;
    const auto r = ctrl_clean(same, cfg, 4);
    CHECK(r.degenerate);
    CHECK(r.clean.size() == same.size());
}

TEST_CASE("ctrl with fewer than two samples returns the input with a warning") {
    std::vector<SensorSequence> one(1);
    one[0].tokens = Matrix::Zero(15, 2);
    one[0].label = 0;
    const auto r = ctrl_clean(one, {}, 0);
    CHECK(r.warning);
    CHECK(r.clean.size() == 1);
}

TEST_CASE("ctrl rejects most flipped labels and is deterministic") {
    // Unimodal classes: with multimodal ones some clean samples are as hard
    // to fit as flipped ones and share their loss curves.
    const GmmModel healthy = reference_healthy_model(8, 1, 11);
    const auto spec = separated_task_spec("ctrl", healthy, 2, 4.0, 100, 12);
    auto seqs = make_synthetic_task(spec);
    Rng rng(13);
    std::set<std::size_t> flipped;
    for (auto i : rng.sample_without_replacement(seqs.size(), seqs.size() / 10)) {
        seqs[i].label = 1 - seqs[i].label;
        flipped.insert(i);
    }
    const auto r = ctrl_clean(seqs, {}, 21);
    std::size_t caught = 0;
    for (auto i : r.rejected) caught += flipped.count(i);
    CHECK(static_cast<double>(caught) >= 0.8 * static_cast<double>(flipped.size()));
    const auto again = ctrl_clean(seqs, {}, 21);
    CHECK(again.rejected == r.rejected);
    CHECK(again.loss_curves == r.loss_curves);
}

TEST_CASE("dataset directories round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "comfort_test_dataset";
    std::filesystem::remove_all(dir);
    Dataset d;
    d.name = "demo";
    d.class_names = {"healthy", "sick"};
    d.splits = chronological_split(roster({10, 10}, 3));
    for (auto &s : d.splits.test) s.label = 1;
    d.splits.provenance = {"minmax fit on train"};
    save_dataset(dir, d);
    const Dataset back = load_dataset(dir);
    CHECK(back.name == "demo");
    CHECK(back.class_names == d.class_names);
    CHECK(back.splits.train.size() == 14);
    CHECK(back.splits.test[3].label == 1);
    CHECK(back.splits.test[3].subject == d.splits.test[3].subject);
    CHECK(back.splits.train[5].tokens == d.splits.train[5].tokens);
    CHECK(back.splits.provenance == d.splits.provenance);
    std::filesystem::remove_all(dir);
}

TEST_CASE("tensor blobs have the documented layout") {
    Tensor t{{2, 3}, {1, 2, 3, 4, 5, 6}};
    const std::string bytes = encode_tensor(t);
    CHECK(bytes.substr(0, 4) == "CMFT");
    CHECK(bytes.size() == 4 + 4 + 4 + 4 + 2 * 8 + 6 * 4);
    CHECK(static_cast<unsigned char>(bytes[4]) == 1);  // version, little-endian
    CHECK(static_cast<unsigned char>(bytes[8]) == 1);  // float32
    CHECK(static_cast<unsigned char>(bytes[12]) == 2); // rank
    CHECK(static_cast<unsigned char>(bytes[16]) == 2);
    CHECK(static_cast<unsigned char>(bytes[24]) == 3);
    float first = 0;
    std::memcpy(&first, bytes.data() + 32, 4);
    CHECK(first == 1.0f);
    const Tensor back = decode_tensor(bytes);
    CHECK(back.dims == t.dims);
    CHECK(back.values == t.values);
    for (std::size_t cut = 0; cut < bytes.size(); ++cut) CHECK_THROWS_AS(decode_tensor(bytes.substr(0, cut)), FormatError);
    CHECK_THROWS_AS(decode_tensor(bytes + "x"), FormatError);
    std::string bumped = bytes;
    bumped[4] = 2;
    CHECK_THROWS_AS(decode_tensor(bumped), VersionError);
}

}  // TEST_SUITE
