// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "comfort/checkpoint.h"
#include "comfort/errors.h"
#include "comfort/trainer.h"
#include "fixtures.h"
#include "oracles.h"

using namespace comfort;

namespace {

SensorSequence random_sequence(int dim, std::uint64_t seed) {
    SensorSequence s;
    s.tokens = oracle::random_matrix(15, dim, seed);
    return s;
}

EncoderWeights tiny_w0(std::uint64_t seed) {
    Rng rng(seed);
    auto w = EncoderWeights::xavier(fixture::tiny_config(), rng, false);
    round_to_storage(w);
    return w;
}

TrainConfig small_train(int epochs) {
    TrainConfig t;
    t.finetune_epochs = epochs;
    t.pretrain_epochs = epochs;
    t.batch_size = 16;
    t.lr = 0.01;
    t.adapter.rank = 2;
    t.adapter.alpha = 2.0;
    return t;
}

Dataset tiny_task(std::uint64_t seed, std::size_t per_class = 40) {
    const GmmModel healthy = reference_healthy_model(8, 1, seed);
    return fixture::separated_dataset("tiny", healthy, 3, 4.0, per_class, seed + 1);
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("masking picks 5 windows and floor(0.15 D) features") {
    CHECK(masked_per_window(128) == 19);
    CHECK(masked_per_window(20) == 3);
    CHECK(masked_per_window(6) == 1);
    CHECK(masked_per_window(1) == 1);

    const auto seq = random_sequence(128, 1);
    const auto m = mdm_mask(seq, 42);
    REQUIRE(m.spec.windows.size() == 5);
    CHECK(m.spec.masked_count() == 95);
    CHECK(std::is_sorted(m.spec.windows.begin(), m.spec.windows.end()));
    CHECK(std::adjacent_find(m.spec.windows.begin(), m.spec.windows.end()) == m.spec.windows.end());
    const Matrix ind = m.spec.indicator(15, 128);
    CHECK(ind.sum() == 95.0);
    for (int t = 0; t < 15; ++t) {
        for (int d = 0; d < 128; ++d) {
            if (ind(t, d) == 0.0) CHECK(m.masked.tokens(t, d) == seq.tokens(t, d));
        }
    }
    for (std::size_t w = 0; w < 5; ++w) {
        CHECK(m.spec.features[w].size() == 19);
        for (std::size_t j = 0; j < 19; ++j) {
            CHECK(m.masked.tokens(m.spec.windows[w], m.spec.features[w][j]) == m.spec.values[w][j]);
        }
    }

    const auto again = mdm_mask(seq, 42);
    CHECK(again.spec.windows == m.spec.windows);
    CHECK(again.spec.features == m.spec.features);
    CHECK(again.spec.values == m.spec.values);
    CHECK(mdm_mask(seq, 43).spec.values != m.spec.values);

    SensorSequence narrow;
    narrow.tokens = oracle::random_matrix(4, 8, 2);
    CHECK_THROWS_AS(mdm_mask(narrow, 1), ValidationError);
}

TEST_CASE("replacement values look standard normal") {
    const auto seq = random_sequence(128, 3);
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (std::uint64_t s = 0; s < 200; ++s) {
        for (const auto &row : mdm_mask(seq, s).spec.values) {
            for (double v : row) {
                sum += v;
                sq += v * v;
                ++n;
            }
        }
    }
    const double mean = sum / static_cast<double>(n);
    CHECK(std::abs(mean) < 0.05);
    CHECK(sq / static_cast<double>(n) - mean * mean == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("masked loss ignores unmasked targets") {
    Rng rng(5);
    const auto w = EncoderWeights::xavier(fixture::tiny_config(), rng, true);
    std::vector<SensorSequence> corpus{random_sequence(8, 6), random_sequence(8, 7)};
    const std::vector<std::size_t> idx{0, 1};
    MdmBatch batch = make_mdm_batch(corpus, idx, 9, true);
    const double base = mdm_loss(w, batch);
    for (Eigen::Index i = 0; i < batch.target.rows(); ++i) {
        for (Eigen::Index j = 0; j < batch.target.cols(); ++j) {
            if (batch.weight(i, j) == 0.0) batch.target(i, j) += 100.0;
        }
    }
    CHECK(mdm_loss(w, batch) == base);

    MdmBatch full = make_mdm_batch(corpus, idx, 9, false);
    CHECK(full.weight.isOnes());
    CHECK(full.input == make_mdm_batch(corpus, idx, 9, true).input);
}

TEST_CASE("reconstruction gradients match finite differences") {
    Rng rng(8);
    auto w = EncoderWeights::xavier(fixture::tiny_config(), rng, true);
    std::vector<SensorSequence> corpus{random_sequence(8, 10), random_sequence(8, 11), random_sequence(8, 12)};
    const std::vector<std::size_t> idx{0, 1, 2};
    const MdmBatch batch = make_mdm_batch(corpus, idx, 3, true);
    EncoderWeights grads = w.zeros_like();
    mdm_loss(w, batch, &grads);
    std::vector<Matrix *> slots;
    grads.for_each([&](const std::string &, Matrix &m) { slots.push_back(&m); });
    std::vector<ParamRef> params;
    std::size_t i = 0;
    w.for_each([&](const std::string &name, Matrix &m) { params.push_back({name, &m, slots[i++]}); });
    Rng probe(4);
    const auto report = finite_diff_grad_check([&] { return mdm_loss(w, batch); }, params, 5, probe);
    CHECK(report.max_relative_error <= 1e-3);
    MESSAGE("worst ", report.worst_parameter, " rel ", report.max_relative_error);
}

TEST_CASE("a constant corpus is learned quickly") {
    std::vector<SensorSequence> corpus(32);
    for (auto &s : corpus) s.tokens = Matrix::Constant(15, 8, 0.5);
    auto t = small_train(200);
    t.stop_loss = 1e-3;
    t.lr = 0.01;
    const auto r = pretrain(fixture::tiny_config(), corpus, t);
    CHECK(r.converged);
    CHECK(r.loss_history.back() < 1e-3);
    CHECK(r.epochs < 200);
}

TEST_CASE("pre-training lowers the loss and is deterministic") {
    const GmmModel g = reference_healthy_model(8, 2, 3, 0.2);
    const auto corpus = instances_to_sequences(gmm_sample(g, 15 * 64, 4), "c", 8);
    auto t = small_train(20);
    t.stop_loss = 1e-9;
    const auto a = pretrain(fixture::tiny_config(), corpus, t);
    CHECK(a.epochs == 20);
    CHECK_FALSE(a.converged);
    CHECK(a.loss_history.back() < a.initial_loss);
    CHECK(a.loss_history.back() < a.loss_history.front());
    CHECK(a.log.size() == 20);
    CHECK(a.weights.has_head());
    const auto b = pretrain(fixture::tiny_config(), corpus, t);
    CHECK(encode_checkpoint(a.weights) == encode_checkpoint(b.weights));
    CHECK(a.loss_history == b.loss_history);
    t.seed = 1;
    CHECK(encode_checkpoint(pretrain(fixture::tiny_config(), corpus, t).weights) != encode_checkpoint(a.weights));

    auto bad = corpus;
    bad[3].tokens(2, 2) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(pretrain(fixture::tiny_config(), bad, t), NumericError);
    bad = corpus;
    bad[1].tokens = Matrix::Zero(15, 9);
    CHECK_THROWS_AS(pretrain(fixture::tiny_config(), bad, t), DimensionError);
}

TEST_CASE("task loss gradients match finite differences for every method") {
    const auto w0 = tiny_w0(20);
    const Matrix tokens = oracle::random_matrix(15 * 4, 8, 21);
    const std::vector<int> labels{0, 1, 1, 0};
    for (auto method : {AdapterMethod::kLora, AdapterMethod::kDora, AdapterMethod::kCola, AdapterMethod::kFull,
                        AdapterMethod::kScratch}) {
        auto bundle = fixture::random_bundle(method, w0, 22);
        Rng init(23);
        bundle.classifier = Classifier::xavier(8, 2, init, 16, 8);
        for (auto &t : bundle.targets)
            if (method == AdapterMethod::kDora) t.magnitude = t.magnitude.cwiseAbs().array() + 0.5;
        AdapterBundle grads = bundle.zeros_like();
        task_loss(w0, bundle, tokens, labels, &grads);
        const auto params = trainable_params(bundle, grads);
        Rng probe(24);
        const auto report = finite_diff_grad_check([&] { return task_loss(w0, bundle, tokens, labels); },
                                                   params, 4, probe, 1e-5);
        CHECK_MESSAGE(report.max_relative_error <= 1e-3, method_name(method), " worst ", report.worst_parameter,
                      " rel ", report.max_relative_error);
    }
}

TEST_CASE("fine-tuning leaves W0 untouched and tracks the best epoch") {
    const auto w0 = tiny_w0(30);
    const std::string w0_bytes = encode_checkpoint(w0);
    const Dataset d = tiny_task(31);
    for (auto method : {AdapterMethod::kLora, AdapterMethod::kDora, AdapterMethod::kCola, AdapterMethod::kFull,
                        AdapterMethod::kScratch}) {
        const auto r = finetune(w0, d, method, small_train(6));
        CHECK(encode_checkpoint(w0) == w0_bytes);
        CHECK(r.bundle.method == method);
        CHECK(r.bundle.metadata.class_names == d.class_names);
        CHECK(r.best_epoch >= 1);
        CHECK(r.best_epoch <= 6);
        CHECK(r.best_validation_accuracy >= 0.0);
        // The retained bundle reproduces the logged best validation accuracy.
        const auto best = std::find_if(r.log.begin(), r.log.end(), [&](const EpochLog &e) {
            return e.epoch == r.best_epoch && e.split == "validation";
        });
        REQUIRE(best != r.log.end());
        CHECK(*best->accuracy == doctest::Approx(r.best_validation_accuracy));
        std::size_t hits = 0;
        const auto preds = predict(w0, r.bundle, d.splits.validation);
        for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i].label == d.splits.validation[i].label;
        CHECK(static_cast<double>(hits) / static_cast<double>(preds.size()) ==
              doctest::Approx(r.best_validation_accuracy).epsilon(1e-6));
        // Six epochs over a chain of three: two per stage.
        if (method == AdapterMethod::kCola) CHECK(r.bundle.active_stage == (r.best_epoch - 1) / 2);
    }
}

TEST_CASE("full fine-tuning stores W0 + dW exactly") {
    const auto w0 = tiny_w0(32);
    const Dataset d = tiny_task(33);
    const auto r = finetune(w0, d, AdapterMethod::kFull, small_train(4));
    REQUIRE(r.bundle.dense);
    const EncoderWeights eff = effective_encoder(w0, r.bundle);
    bool moved = false;
    eff.for_each([&](const std::string &name, const Matrix &m) {
        const Matrix want = w0.tensor(name) + r.bundle.dense->tensor(name);
        CHECK(m == want);
        moved |= !r.bundle.dense->tensor(name).isZero();
    });
    CHECK(moved);
}

TEST_CASE("training fraction uses a per-subject prefix") {
    const auto w0 = tiny_w0(34);
    const Dataset d = tiny_task(35, 80);
    auto t = small_train(2);
    const auto whole = finetune(w0, d, AdapterMethod::kLora, t);
    t.fraction = 0.4;
    const auto part = finetune(w0, d, AdapterMethod::kLora, t);
    CHECK(whole.train_sequences == d.splits.train.size());
    CHECK(part.train_sequences == subject_prefix(d.splits.train, 0.4).size());
    CHECK(part.train_sequences < whole.train_sequences);
    t.fraction = 0.0;
    CHECK_THROWS_AS(finetune(w0, d, AdapterMethod::kLora, t), ValidationError);
}

TEST_CASE("fine-tuning rejects out-of-range labels and bad shapes") {
    const auto w0 = tiny_w0(36);
    Dataset d = tiny_task(37);
    REQUIRE_FALSE(d.splits.validation.empty());
    d.splits.train[0].label = 3;
    CHECK_THROWS_AS(finetune(w0, d, AdapterMethod::kLora, small_train(1)), ValidationError);
    d = tiny_task(37);
    d.splits.validation[0].label = -1;
    CHECK_THROWS_AS(finetune(w0, d, AdapterMethod::kLora, small_train(1)), ValidationError);
    d = tiny_task(37);
    d.splits.train[0].tokens = Matrix::Zero(15, 7);
    CHECK_THROWS_AS(finetune(w0, d, AdapterMethod::kLora, small_train(1)), DimensionError);
}

TEST_CASE("fine-tuning is deterministic for a seed") {
    const auto w0 = tiny_w0(38);
    const Dataset d = tiny_task(39);
    const auto a = finetune(w0, d, AdapterMethod::kDora, small_train(3));
    const auto b = finetune(w0, d, AdapterMethod::kDora, small_train(3));
    bool same = true;
    a.bundle.for_each_tensor([&](const std::string &name, const Matrix &m) {
        b.bundle.for_each_tensor([&](const std::string &n2, const Matrix &m2) {
            if (n2 == name) same &= m == m2;
        });
    });
    CHECK(same);
}

TEST_CASE("metrics on hand-built predictions") {
    const std::vector<int> truth{0, 1, 2, 0};
    auto m = metrics_from_predictions(truth, truth, 3, 0);
    CHECK(m.accuracy == 1.0);
    REQUIRE(m.f1);
    CHECK(*m.f1 == 1.0);

    // Predicting the wrong disease still counts as a detected positive.
    const std::vector<int> cross{0, 2, 1, 0};
    m = metrics_from_predictions(truth, cross, 3, 0);
    CHECK(m.accuracy == 0.5);
    CHECK(m.tp == 2);
    CHECK(*m.f1 == 1.0);
    CHECK(m.confusion[1][2] == 1);

    std::vector<int> t2, p2;
    for (int i = 0; i < 8; ++i) { t2.push_back(1); p2.push_back(1); }
    t2.push_back(0); p2.push_back(1);
    t2.push_back(1); p2.push_back(0);
    for (int i = 0; i < 5; ++i) { t2.push_back(0); p2.push_back(0); }
    m = metrics_from_predictions(t2, p2, 2, 0);
    CHECK(m.tp == 8);
    CHECK(m.fp == 1);
    CHECK(m.fn == 1);
    CHECK(m.tn == 5);
    CHECK(*m.f1 == doctest::Approx(16.0 / 18.0));

    const std::vector<int> healthy{0, 0, 0};
    m = metrics_from_predictions(healthy, healthy, 2, 0);
    CHECK_FALSE(m.f1.has_value());
    CHECK(m.accuracy == 1.0);

    CHECK_THROWS_AS(metrics_from_predictions(truth, std::vector<int>{0, 1}, 3, 0), DimensionError);
    CHECK_THROWS_AS(evaluate(tiny_w0(1), adapter_init(AdapterMethod::kLora, tiny_w0(1), 2, {}, 1), {}, 0),
                    ValidationError);
}

TEST_CASE("metrics log format") {
    const std::vector<EpochLog> log{{1, "train", 0.5, std::nullopt}, {1, "validation", 0.25, 0.75}};
    const std::string text = format_metrics_log(log);
    CHECK(text.starts_with("epoch\tsplit\tloss\taccuracy\n"));
    CHECK(text.find("1\ttrain\t") != std::string::npos);
    CHECK(text.find("\t-\n") != std::string::npos);
    CHECK(text.find("\t0.75") != std::string::npos);
}

TEST_CASE("training configuration validation") {
    TrainConfig t;
    CHECK_NOTHROW(t.validate());
    t.lr = 0.0;
    CHECK_THROWS_AS(t.validate(), ValidationError);
    t = TrainConfig{};
    t.batch_size = 0;
    CHECK_THROWS_AS(t.validate(), ValidationError);
    t = TrainConfig{};
    t.fraction = 1.5;
    CHECK_THROWS_AS(t.validate(), ValidationError);
}

}  // TEST_SUITE
