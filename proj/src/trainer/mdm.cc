// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "comfort/checkpoint.h"
#include "comfort/errors.h"
#include "comfort/trainer.h"

namespace comfort {
namespace {

Matrix stack_indexed(std::span<const SensorSequence> corpus, std::span<const std::size_t> indices) {
    const auto t = corpus[indices.front()].tokens.rows();
    const auto d = corpus[indices.front()].tokens.cols();
    Matrix out(static_cast<Eigen::Index>(indices.size()) * t, d);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const Matrix &tokens = corpus[indices[i]].tokens;
        if (tokens.rows() != t || tokens.cols() != d) throw DimensionError("mdm: inconsistent sequence shapes");
        out.middleRows(static_cast<Eigen::Index>(i) * t, t) = tokens;
    }
    return out;
}

}  // namespace

int masked_per_window(int feature_dim) {
    if (feature_dim < 1) throw ValidationError("masking needs at least one feature");
    return std::max(1, static_cast<int>(std::floor(kMaskFraction * feature_dim)));
}

std::size_t MaskSpec::masked_count() const {
    std::size_t n = 0;
    for (const auto &f : features) n += f.size();
    return n;
}

Matrix MaskSpec::indicator(int tokens, int feature_dim) const {
    Matrix m = Matrix::Zero(tokens, feature_dim);
    for (std::size_t w = 0; w < windows.size(); ++w) {
        for (int f : features[w]) m(windows[w], f) = 1.0;
    }
    return m;
}

MaskedSequence mdm_mask(const SensorSequence &sequence, std::uint64_t seed) {
    const auto t = static_cast<std::size_t>(sequence.tokens.rows());
    const int d = static_cast<int>(sequence.tokens.cols());
    if (t < static_cast<std::size_t>(kMaskedWindows)) {
        throw ValidationError("masking needs at least " + std::to_string(kMaskedWindows) + " windows");
    }
    const int per_window = masked_per_window(d);
    Rng rng(seed);
    MaskedSequence out{sequence, {}};
    for (std::size_t w : rng.sample_without_replacement(t, kMaskedWindows)) out.spec.windows.push_back(static_cast<int>(w));
    std::sort(out.spec.windows.begin(), out.spec.windows.end());
    for (int w : out.spec.windows) {
        std::vector<int> features;
        for (std::size_t f : rng.sample_without_replacement(static_cast<std::size_t>(d), per_window)) {
            features.push_back(static_cast<int>(f));
        }
        std::sort(features.begin(), features.end());
        std::vector<double> values;
        for (int f : features) {
            const double v = rng.normal();
            out.masked.tokens(w, f) = v;
            values.push_back(v);
        }
        out.spec.features.push_back(std::move(features));
        out.spec.values.push_back(std::move(values));
    }
    return out;
}

void TrainConfig::validate() const {
    if (!(lr > 0.0) || batch_size < 1 || pretrain_epochs < 1 || !(stop_loss >= 0.0) || finetune_epochs < 1) {
        throw ValidationError("training config: rates, sizes and epoch counts must be positive");
    }
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ValidationError("training config: fraction must be in (0, 1]");
}

std::string format_metrics_log(std::span<const EpochLog> log) {
    std::ostringstream out;
    out << "epoch\tsplit\tloss\taccuracy\n";
    out << std::setprecision(8);
    for (const auto &e : log) {
        out << e.epoch << '\t' << e.split << '\t' << e.loss << '\t';
        if (e.accuracy) {
            out << *e.accuracy;
        } else {
            out << '-';
        }
        out << '\n';
    }
    return out.str();
}

MdmBatch make_mdm_batch(std::span<const SensorSequence> corpus, std::span<const std::size_t> indices,
                        std::uint64_t mask_seed, bool masked_only) {
    if (indices.empty()) throw ValidationError("mdm: empty batch");
    MdmBatch b;
    b.sequences = static_cast<int>(indices.size());
    b.target = stack_indexed(corpus, indices);
    b.input = b.target;
    b.weight = masked_only ? Matrix::Zero(b.target.rows(), b.target.cols()) : Matrix::Ones(b.target.rows(), b.target.cols());
    const auto t = corpus[indices.front()].tokens.rows();
    const Rng base(mask_seed);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const MaskedSequence m = mdm_mask(corpus[indices[i]], base.fork(indices[i]).seed());
        const auto row = static_cast<Eigen::Index>(i) * t;
        b.input.middleRows(row, t) = m.masked.tokens;
        if (masked_only) {
            b.weight.middleRows(row, t) = m.spec.indicator(static_cast<int>(t), static_cast<int>(b.target.cols()));
        }
    }
    return b;
}

double mdm_loss(const EncoderWeights &weights, const MdmBatch &batch, EncoderWeights *grads) {
    EncoderTrace trace;
    const Matrix embeddings = encoder_forward(weights, batch.input, grads ? &trace : nullptr);
    const Matrix recon = reconstruct(weights, embeddings);
    const double denom = batch.weight.sum();
    if (!(denom > 0.0)) throw ValidationError("mdm: no entries carry loss weight");
    const Matrix diff = (recon - batch.target).cwiseProduct(batch.weight);
    const double loss = diff.cwiseProduct(recon - batch.target).sum() / denom;
    if (grads) {
        const Matrix d_recon = (2.0 / denom) * diff;
        grads->head.noalias() += embeddings.transpose() * d_recon;
        grads->head_bias += d_recon.colwise().sum();
        const Matrix d_embed = d_recon * weights.head.transpose();
        encoder_backward(weights, trace, d_embed, *grads, WeightGrads::kAll);
    }
    return loss;
}

double mdm_evaluate(const EncoderWeights &weights, std::span<const SensorSequence> corpus, std::uint64_t mask_seed,
                    bool masked_only) {
    if (corpus.empty()) throw ValidationError("mdm: empty corpus");
    constexpr std::size_t kChunk = 256;
    double weighted = 0.0;
    double total = 0.0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < corpus.size(); start += kChunk) {
        idx.clear();
        for (std::size_t i = start; i < std::min(corpus.size(), start + kChunk); ++i) idx.push_back(i);
        const MdmBatch b = make_mdm_batch(corpus, idx, mask_seed, masked_only);
        const double w = b.weight.sum();
        weighted += mdm_loss(weights, b) * w;
        total += w;
    }
    return weighted / total;
}

namespace {

std::string format_loss(double v) {
    std::ostringstream s;
    s << std::setprecision(6) << v;
    return s.str();
}

}  // namespace

PretrainResult pretrain(const EncoderConfig &config, std::span<const SensorSequence> corpus,
                        const TrainConfig &train) {
    config.validate();
    train.validate();
    if (corpus.empty()) throw ValidationError("pretrain: empty corpus");
    for (const auto &s : corpus) {
        if (s.tokens.rows() != config.seq_len || s.tokens.cols() != config.feature_dim()) {
            throw DimensionError("pretrain: sequences must be " + std::to_string(config.seq_len) + "x" +
                                 std::to_string(config.feature_dim()));
        }
        check_finite(s.tokens, "pretrain corpus");
    }
    const Rng root(train.seed);
    Rng init_rng = root.fork(1);
    Rng order_rng = root.fork(2);
    const Rng mask_root = root.fork(3);

    PretrainResult r;
    r.weights = EncoderWeights::xavier(config, init_rng, /*with_head=*/true);
    const std::uint64_t eval_seed = mask_root.fork(0).seed();
    r.initial_loss = mdm_evaluate(r.weights, corpus, eval_seed, train.masked_only);

    EncoderWeights grads = r.weights.zeros_like();
    std::vector<ParamRef> params;
    {
        std::vector<Matrix *> slots;
        grads.for_each([&](const std::string &, Matrix &m) { slots.push_back(&m); });
        std::size_t i = 0;
        r.weights.for_each([&](const std::string &name, Matrix &m) { params.push_back({name, &m, slots[i++]}); });
    }
    AdamState adam;
    const AdamOptions options{train.lr};
    const auto bs = static_cast<std::size_t>(train.batch_size);

    for (int epoch = 1; epoch <= train.pretrain_epochs; ++epoch) {
        const auto order = order_rng.permutation(corpus.size());
        const std::uint64_t mask_seed = mask_root.fork(static_cast<std::uint64_t>(epoch)).seed();
        double weighted = 0.0;
        double total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += bs) {
            const std::span<const std::size_t> idx(order.data() + start, std::min(bs, order.size() - start));
            const MdmBatch batch = make_mdm_batch(corpus, idx, mask_seed, train.masked_only);
            for (auto &p : params) p.grad->setZero();
            const double loss = mdm_loss(r.weights, batch, &grads);
            if (!std::isfinite(loss)) {
                throw NumericError("pretrain: non-finite loss at epoch " + std::to_string(epoch) + ", batch starting " +
                                   std::to_string(start) + " (last epoch loss " +
                                   (r.loss_history.empty() ? std::string("n/a") : format_loss(r.loss_history.back())) +
                                   ")");
            }
            adam_update(params, adam, options);
            const double w = batch.weight.sum();
            weighted += loss * w;
            total += w;
        }
        const double epoch_loss = weighted / total;
        r.loss_history.push_back(epoch_loss);
        r.log.push_back({epoch, "train", epoch_loss, std::nullopt});
        r.epochs = epoch;
        if (epoch_loss < train.stop_loss) {
            r.converged = true;
            break;
        }
    }
    round_to_storage(r.weights);
    r.final_loss = mdm_evaluate(r.weights, corpus, eval_seed, train.masked_only);
    return r;
}

}  // namespace comfort
