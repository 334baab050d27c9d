// SPDX-License-Identifier: Apache-2.0
//
// Encoder-only transformer over 15-token sensor sequences (BERT-tiny shape:
// 2 layers, hidden 128, 2 heads, FFN 512) with post-norm residual blocks, a
// reconstruction head for masked-data pre-training and per-task classifiers.
//
// Row-vector convention throughout: a linear map is y = x W + b with W stored
// in×out, so "column j" of a weight is the fan-in of output unit j.
//
// Batches are stacked: n sequences of T tokens form one (n·T)×H matrix.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <span>
#include <string_view>
#include <vector>

#include "comfort/numerics.h"

namespace comfort {

enum class PositionalEncoding : std::uint32_t {
    kSinusoidal = 0,
    kLearned = 1,
};

struct EncoderConfig {
    int layers = 2;
    int hidden = 128;
    int heads = 2;
    int ffn = 512;
    int seq_len = 15;
    PositionalEncoding positional = PositionalEncoding::kSinusoidal;
    double layer_norm_eps = 1e-12;

    /// Inputs are already H-dimensional; there is no input projection.
    int feature_dim() const { return hidden; }
    int head_dim() const { return hidden / heads; }
    void validate() const;
    bool operator==(const EncoderConfig &) const = default;
};

struct LayerWeights {
    Matrix query, query_bias;
    Matrix key, key_bias;
    Matrix value, value_bias;
    Matrix output, output_bias;
    Matrix ffn_in, ffn_in_bias;
    Matrix ffn_out, ffn_out_bias;
    Matrix norm1_gain, norm1_bias;
    Matrix norm2_gain, norm2_bias;
};

/// The foundation weights W0.
struct EncoderWeights {
    EncoderConfig config;
    std::vector<LayerWeights> layers;
    /// seq_len×H. Fixed sinusoids, or a trained table when configured.
    Matrix positional;
    /// Reconstruction head, H×H and 1×H. Empty when absent.
    Matrix head, head_bias;

    bool has_head() const { return head.size() > 0; }

    /// Zero projections and FFN, unit layer-norm gains.
    static EncoderWeights zeros(const EncoderConfig &config, bool with_head);
    /// Xavier-uniform weights, zero biases, unit layer-norm gains.
    static EncoderWeights xavier(const EncoderConfig &config, Rng &rng, bool with_head);

    /// Visits every parameter tensor as (name, matrix). The positional table
    /// is included only when learned; the head only when present.
    template <class F>
    void for_each(F &&f);
    template <class F>
    void for_each(F &&f) const;

    /// Tensor by name, e.g. "layer1.value.weight". Throws ValidationError.
    Matrix &tensor(std::string_view name);
    const Matrix &tensor(std::string_view name) const;

    std::size_t parameter_count(bool include_head = false) const;
    /// Same shapes, all zeros (used for gradient buffers and deltas).
    EncoderWeights zeros_like() const;
};

/// The four attention projections of every layer, e.g. "layer0.query".
std::vector<std::string> attention_targets(const EncoderConfig &config);

Matrix sinusoidal_table(int seq_len, int hidden);

/// H -> 512 -> 128 -> classes with ReLU hidden activations and a softmax output.
struct Classifier {
    Matrix hidden1, hidden1_bias;
    Matrix hidden2, hidden2_bias;
    Matrix output, output_bias;

    int classes() const { return static_cast<int>(output.cols()); }
    int input_dim() const { return static_cast<int>(hidden1.rows()); }

    static Classifier xavier(int input, int classes, Rng &rng, int hidden1 = 512, int hidden2 = 128);
    static Classifier zeros(int input, int classes, int hidden1 = 512, int hidden2 = 128);
    Classifier zeros_like() const;

    template <class F>
    void for_each(F &&f);
    template <class F>
    void for_each(F &&f) const;

    std::size_t parameter_count() const;
};

// --- encoder pass ------------------------------------------------------------

struct LayerTrace {
    Matrix input;
    Matrix q, k, v;
    std::vector<Matrix> attention;  // per sequence, per head: T×T probabilities
    Matrix context;
    Matrix norm1_hat, norm1_out;
    Vector norm1_rstd;
    Matrix ffn_pre, ffn_act;
    Matrix norm2_hat;
    Vector norm2_rstd;
};

struct EncoderTrace {
    std::vector<LayerTrace> layers;
    int batch = 0;
};

enum class WeightGrads {
    kAll,
    /// Only the query/key/value/output weight matrices (what adapters need).
    kAttentionProjections,
};

/// (n·T)×H token embeddings for n stacked sequences. Fills `trace` for a
/// subsequent backward pass when non-null.
Matrix encoder_forward(const EncoderWeights &weights, const Matrix &stacked_tokens, EncoderTrace *trace = nullptr);

enum class Projection { kQuery = 0, kKey = 1, kValue = 2, kOutput = 3 };

/// Computes input · W for one attention projection (bias excluded). Lets an
/// adapter compose its update on the fly instead of materialising W.
using ProjectionFn = std::function<Matrix(int layer, Projection role, const Matrix &input, const Matrix &weight)>;

/// Forward pass routing every attention projection through `project`.
Matrix encoder_forward_with(const EncoderWeights &weights, const Matrix &stacked_tokens, const ProjectionFn &project);

/// Accumulates parameter gradients into `grads` (same shapes as `weights`)
/// given d(loss)/d(output). Gradient buffers outside `scope` are left alone.
void encoder_backward(const EncoderWeights &weights, const EncoderTrace &trace, const Matrix &d_output,
                      EncoderWeights &grads, WeightGrads scope = WeightGrads::kAll);

/// Mean over each sequence's tokens: (n·T)×H -> n×H.
Matrix pool(const Matrix &embeddings, int seq_len);
Matrix pool_backward(const Matrix &d_pooled, int seq_len);

/// Per-token affine map through the reconstruction head. StateError if absent.
Matrix reconstruct(const EncoderWeights &weights, const Matrix &embeddings);

// --- classifier pass ----------------------------------------------------------

struct ClassifierTrace {
    Matrix input, pre1, act1, pre2, act2;
};

Matrix classifier_logits(const Classifier &classifier, const Matrix &pooled, ClassifierTrace *trace = nullptr);
/// Row-wise softmax.
Matrix softmax_rows(const Matrix &logits);
/// Class probabilities, one row per pooled input.
Matrix classify(const Matrix &pooled, const Classifier &classifier);
/// Accumulates into `grads`; returns d(loss)/d(pooled).
Matrix classifier_backward(const Classifier &classifier, const ClassifierTrace &trace, const Matrix &d_logits,
                           Classifier &grads);

/// Mean cross-entropy of `logits` against `labels`; `d_logits` (optional)
/// receives its gradient.
double cross_entropy(const Matrix &logits, std::span<const int> labels, Matrix *d_logits = nullptr);

// --- template definitions ---------------------------------------------------

namespace detail {

template <class W, class F>
void visit_encoder(W &w, F &&f) {
    for (std::size_t i = 0; i < w.layers.size(); ++i) {
        auto &l = w.layers[i];
        const std::string p = "layer" + std::to_string(i) + ".";
        f(p + "query.weight", l.query);
        f(p + "query.bias", l.query_bias);
        f(p + "key.weight", l.key);
        f(p + "key.bias", l.key_bias);
        f(p + "value.weight", l.value);
        f(p + "value.bias", l.value_bias);
        f(p + "output.weight", l.output);
        f(p + "output.bias", l.output_bias);
        f(p + "ffn_in.weight", l.ffn_in);
        f(p + "ffn_in.bias", l.ffn_in_bias);
        f(p + "ffn_out.weight", l.ffn_out);
        f(p + "ffn_out.bias", l.ffn_out_bias);
        f(p + "norm1.gain", l.norm1_gain);
        f(p + "norm1.bias", l.norm1_bias);
        f(p + "norm2.gain", l.norm2_gain);
        f(p + "norm2.bias", l.norm2_bias);
    }
    if (w.config.positional == PositionalEncoding::kLearned) f(std::string("positional"), w.positional);
    if (w.has_head()) {
        f(std::string("head.weight"), w.head);
        f(std::string("head.bias"), w.head_bias);
    }
}

template <class C, class F>
void visit_classifier(C &c, F &&f) {
    f(std::string("classifier.hidden1.weight"), c.hidden1);
    f(std::string("classifier.hidden1.bias"), c.hidden1_bias);
    f(std::string("classifier.hidden2.weight"), c.hidden2);
    f(std::string("classifier.hidden2.bias"), c.hidden2_bias);
    f(std::string("classifier.output.weight"), c.output);
    f(std::string("classifier.output.bias"), c.output_bias);
}

}  // namespace detail

template <class F>
void EncoderWeights::for_each(F &&f) {
    detail::visit_encoder(*this, std::forward<F>(f));
}

template <class F>
void EncoderWeights::for_each(F &&f) const {
    detail::visit_encoder(*this, std::forward<F>(f));
}

template <class F>
void Classifier::for_each(F &&f) {
    detail::visit_classifier(*this, std::forward<F>(f));
}

template <class F>
void Classifier::for_each(F &&f) const {
    detail::visit_classifier(*this, std::forward<F>(f));
}

}  // namespace comfort
