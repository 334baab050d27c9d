// SPDX-License-Identifier: Apache-2.0

#include <algorithm>

#include "comfort/errors.h"
#include "comfort/trainer.h"

namespace comfort {

std::vector<Prediction> predict(const EncoderWeights &w0, const AdapterBundle &bundle,
                                std::span<const SensorSequence> sequences) {
    constexpr std::size_t kChunk = 256;
    const EncoderWeights effective = effective_encoder(w0, bundle);
    const int t = effective.config.seq_len;
    std::vector<Prediction> out;
    out.reserve(sequences.size());
    for (std::size_t start = 0; start < sequences.size(); start += kChunk) {
        const auto chunk = sequences.subspan(start, std::min(kChunk, sequences.size() - start));
        for (const auto &s : chunk) {
            if (s.tokens.rows() != t || s.tokens.cols() != effective.config.feature_dim()) {
                throw DimensionError("predict: sequences must be " + std::to_string(t) + "x" +
                                     std::to_string(effective.config.feature_dim()));
            }
        }
        const Matrix probs = classify(pool(encoder_forward(effective, stack_instances(chunk)), t), bundle.classifier);
        for (Eigen::Index i = 0; i < probs.rows(); ++i) {
            Prediction p;
            Eigen::Index best = 0;
            probs.row(i).maxCoeff(&best);
            p.label = static_cast<int>(best);
            p.probabilities.assign(probs.row(i).data(), probs.row(i).data() + probs.cols());
            out.push_back(std::move(p));
        }
    }
    return out;
}

Metrics metrics_from_predictions(std::span<const int> truth, std::span<const int> predicted, int classes,
                                 int healthy_class) {
    if (truth.size() != predicted.size()) throw DimensionError("metrics: label and prediction counts differ");
    if (truth.empty()) throw ValidationError("metrics: no examples");
    if (classes < 2 || healthy_class < 0 || healthy_class >= classes) {
        throw ValidationError("metrics: healthy class outside the class range");
    }
    Metrics m;
    m.count = truth.size();
    m.confusion.assign(static_cast<std::size_t>(classes), std::vector<std::size_t>(static_cast<std::size_t>(classes), 0));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const int y = truth[i];
        const int p = predicted[i];
        if (y < 0 || y >= classes || p < 0 || p >= classes) throw ValidationError("metrics: label out of range");
        ++m.confusion[static_cast<std::size_t>(y)][static_cast<std::size_t>(p)];
        hits += y == p ? 1 : 0;
        const bool sick = y != healthy_class;
        const bool flagged = p != healthy_class;
        if (sick && flagged) ++m.tp;
        if (sick && !flagged) ++m.fn;
        if (!sick && flagged) ++m.fp;
        if (!sick && !flagged) ++m.tn;
    }
    m.accuracy = static_cast<double>(hits) / static_cast<double>(m.count);
    if (m.tp + m.fn > 0) {
        m.f1 = 2.0 * static_cast<double>(m.tp) / static_cast<double>(2 * m.tp + m.fp + m.fn);
    }
    return m;
}

Metrics evaluate(const EncoderWeights &w0, const AdapterBundle &bundle, std::span<const SensorSequence> test,
                 int healthy_class) {
    if (test.empty()) throw ValidationError("evaluate: empty test split");
    const auto preds = predict(w0, bundle, test);
    std::vector<int> truth, predicted;
    for (std::size_t i = 0; i < test.size(); ++i) {
        truth.push_back(test[i].label);
        predicted.push_back(preds[i].label);
    }
    return metrics_from_predictions(truth, predicted, bundle.classifier.classes(), healthy_class);
}

}  // namespace comfort
