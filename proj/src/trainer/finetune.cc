// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

#include "comfort/errors.h"
#include "comfort/trainer.h"

namespace comfort {
namespace {

constexpr std::size_t kEvalChunk = 256;

Matrix stack_indexed(std::span<const SensorSequence> seqs, std::span<const std::size_t> indices) {
    const auto t = seqs[indices.front()].tokens.rows();
    Matrix out(static_cast<Eigen::Index>(indices.size()) * t, seqs[indices.front()].tokens.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        out.middleRows(static_cast<Eigen::Index>(i) * t, t) = seqs[indices[i]].tokens;
    }
    return out;
}

void check_split(std::span<const SensorSequence> split, const EncoderConfig &config, int classes, const char *name) {
    for (const auto &s : split) {
        if (s.tokens.rows() != config.seq_len || s.tokens.cols() != config.feature_dim()) {
            throw DimensionError(std::string("finetune: ") + name + " sequences must be " +
                                 std::to_string(config.seq_len) + "x" + std::to_string(config.feature_dim()));
        }
        if (s.label < 0 || s.label >= classes) {
            throw ValidationError(std::string("finetune: ") + name + " label " + std::to_string(s.label) +
                                  " outside [0, " + std::to_string(classes) + ")");
        }
    }
}

bool adapts_beyond_attention(const AdapterBundle &bundle) {
    for (const auto &t : bundle.targets) {
        bool attention = false;
        for (const char *role : {".query", ".key", ".value", ".output"}) attention |= t.target.ends_with(role);
        if (!attention) return true;
    }
    return false;
}

struct SplitScore {
    double loss = 0.0;
    double accuracy = 0.0;
};

SplitScore score_split(const EncoderWeights &w0, const AdapterBundle &bundle, std::span<const SensorSequence> split) {
    const EncoderWeights effective = effective_encoder(w0, bundle);
    SplitScore s;
    std::size_t hits = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < split.size(); start += kEvalChunk) {
        idx.clear();
        std::vector<int> labels;
        for (std::size_t i = start; i < std::min(split.size(), start + kEvalChunk); ++i) {
            idx.push_back(i);
            labels.push_back(split[i].label);
        }
        const Matrix pooled = pool(encoder_forward(effective, stack_indexed(split, idx)), effective.config.seq_len);
        const Matrix logits = classifier_logits(bundle.classifier, pooled);
        s.loss += cross_entropy(logits, labels) * static_cast<double>(idx.size());
        for (Eigen::Index i = 0; i < logits.rows(); ++i) {
            Eigen::Index best = 0;
            logits.row(i).maxCoeff(&best);
            hits += static_cast<int>(best) == labels[static_cast<std::size_t>(i)] ? 1 : 0;
        }
    }
    s.loss /= static_cast<double>(split.size());
    s.accuracy = static_cast<double>(hits) / static_cast<double>(split.size());
    return s;
}

}  // namespace

double task_loss(const EncoderWeights &w0, const AdapterBundle &bundle, const Matrix &stacked_tokens,
                 std::span<const int> labels, AdapterBundle *grads) {
    const EncoderWeights effective = effective_encoder(w0, bundle);
    const int t = effective.config.seq_len;
    EncoderTrace trace;
    const Matrix embeddings = encoder_forward(effective, stacked_tokens, grads ? &trace : nullptr);
    const Matrix pooled = pool(embeddings, t);
    ClassifierTrace ctrace;
    const Matrix logits = classifier_logits(bundle.classifier, pooled, grads ? &ctrace : nullptr);
    Matrix d_logits;
    const double loss = cross_entropy(logits, labels, grads ? &d_logits : nullptr);
    if (!grads) return loss;

    const Matrix d_pooled = classifier_backward(bundle.classifier, ctrace, d_logits, grads->classifier);
    const Matrix d_embed = pool_backward(d_pooled, t);
    EncoderWeights d_effective = effective.zeros_like();
    const WeightGrads scope = is_low_rank(bundle.method) && !adapts_beyond_attention(bundle)
                                  ? WeightGrads::kAttentionProjections
                                  : WeightGrads::kAll;
    encoder_backward(effective, trace, d_embed, d_effective, scope);
    adapter_backward(w0, bundle, d_effective, *grads);
    return loss;
}

FinetuneResult finetune(const EncoderWeights &w0, const Dataset &dataset, AdapterMethod method,
                        const TrainConfig &train) {
    train.validate();
    w0.config.validate();
    const int classes = static_cast<int>(dataset.class_names.size());
    if (classes < 2) throw ValidationError("finetune: a task needs at least two classes");
    if (dataset.healthy_class < 0 || dataset.healthy_class >= classes) {
        throw ValidationError("finetune: healthy class outside the class range");
    }
    check_split(dataset.splits.train, w0.config, classes, "train");
    check_split(dataset.splits.validation, w0.config, classes, "validation");
    check_split(dataset.splits.test, w0.config, classes, "test");

    const std::vector<SensorSequence> train_set = train.fraction < 1.0
                                                      ? subject_prefix(dataset.splits.train, train.fraction)
                                                      : dataset.splits.train;
    if (train_set.empty()) throw ValidationError("finetune: empty training split");
    const auto &validation = dataset.splits.validation;

    const Rng root(train.seed);
    Rng order_rng = root.fork(11);
    Rng stage_rng = root.fork(12);

    FinetuneResult r;
    r.train_sequences = train_set.size();
    r.bundle = adapter_init(method, w0, classes, train.adapter, train.seed, dataset.name);
    r.bundle.metadata.class_names = dataset.class_names;
    r.bundle.metadata.healthy_class = dataset.healthy_class;
    AdapterBundle &bundle = r.bundle;

    const int stages = method == AdapterMethod::kCola ? bundle.chain_length : 1;
    const int per_stage = std::max(1, train.finetune_epochs / stages);
    const int total_epochs = method == AdapterMethod::kCola ? per_stage * stages : train.finetune_epochs;

    std::vector<int> labels(train_set.size());
    for (std::size_t i = 0; i < train_set.size(); ++i) labels[i] = train_set[i].label;

    AdapterBundle grads = bundle.zeros_like();
    std::vector<ParamRef> params = trainable_params(bundle, grads);
    AdamState adam;
    const AdamOptions options{train.lr};
    const auto bs = static_cast<std::size_t>(train.batch_size);
    std::optional<AdapterBundle> best;
    r.best_validation_accuracy = -1.0;

    for (int epoch = 1; epoch <= total_epochs; ++epoch) {
        if (method == AdapterMethod::kCola && epoch > 1 && (epoch - 1) % per_stage == 0) {
            cola_advance_stage(bundle, stage_rng, train.adapter.init_stddev);
            grads = bundle.zeros_like();
            params = trainable_params(bundle, grads);
            adam = AdamState{};
        }
        const auto order = order_rng.permutation(train_set.size());
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += bs) {
            const std::span<const std::size_t> idx(order.data() + start, std::min(bs, order.size() - start));
            std::vector<int> batch_labels;
            for (std::size_t i : idx) batch_labels.push_back(labels[i]);
            for (auto &p : params) p.grad->setZero();
            const double loss = task_loss(w0, bundle, stack_indexed(train_set, idx), batch_labels, &grads);
            if (!std::isfinite(loss)) {
                throw NumericError("finetune: non-finite loss at epoch " + std::to_string(epoch) + " (" +
                                   std::string(method_name(method)) + ")");
            }
            adam_update(params, adam, options);
            loss_sum += loss * static_cast<double>(idx.size());
        }
        r.log.push_back({epoch, "train", loss_sum / static_cast<double>(train_set.size()), std::nullopt});

        if (!validation.empty()) {
            const SplitScore score = score_split(w0, bundle, validation);
            r.log.push_back({epoch, "validation", score.loss, score.accuracy});
            // Ties keep the earlier epoch.
            if (score.accuracy > r.best_validation_accuracy) {
                r.best_validation_accuracy = score.accuracy;
                r.best_epoch = epoch;
                best = bundle;
            }
        }
    }
    if (validation.empty()) {
        r.best_epoch = total_epochs;
        r.best_validation_accuracy = 0.0;
    } else {
        bundle = std::move(*best);
    }
    round_to_storage(bundle);
    return r;
}

}  // namespace comfort
