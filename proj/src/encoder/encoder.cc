// SPDX-License-Identifier: Apache-2.0

#include "comfort/encoder.h"

#include <cmath>
#include <numbers>

#include "comfort/errors.h"

namespace comfort {
namespace {

Matrix zeros(Eigen::Index r, Eigen::Index c) { return Matrix::Zero(r, c); }
Matrix ones(Eigen::Index r, Eigen::Index c) { return Matrix::Ones(r, c); }

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

Matrix affine(const Matrix &x, const Matrix &w, const Matrix &b) {
    Matrix y = x * w;
    y.rowwise() += b.row(0);
    return y;
}

// Row-wise layer norm; returns gain * xhat + bias and records xhat and 1/std.
Matrix layer_norm(const Matrix &x, const Matrix &gain, const Matrix &bias, double eps, Matrix &xhat, Vector &rstd) {
    const auto h = static_cast<double>(x.cols());
    xhat.resize(x.rows(), x.cols());
    rstd.resize(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double mean = x.row(i).sum() / h;
        const double var = (x.row(i).array() - mean).square().sum() / h;
        rstd[i] = 1.0 / std::sqrt(var + eps);
        xhat.row(i) = (x.row(i).array() - mean) * rstd[i];
    }
    Matrix y = xhat.array().rowwise() * gain.row(0).array();
    y.rowwise() += bias.row(0);
    return y;
}

Matrix layer_norm_backward(const Matrix &dy, const Matrix &xhat, const Vector &rstd, const Matrix &gain,
                           Matrix *d_gain, Matrix *d_bias) {
    if (d_gain) *d_gain += (dy.cwiseProduct(xhat)).colwise().sum();
    if (d_bias) *d_bias += dy.colwise().sum();
    const Matrix dxhat = dy.array().rowwise() * gain.row(0).array();
    const auto h = static_cast<double>(dy.cols());
    Matrix dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
        const double mean_d = dxhat.row(i).sum() / h;
        const double mean_dx = dxhat.row(i).dot(xhat.row(i)) / h;
        dx.row(i) = rstd[i] * (dxhat.row(i).array() - mean_d - xhat.row(i).array() * mean_dx);
    }
    return dx;
}

void softmax_in_place(Matrix &m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double mx = m.row(i).maxCoeff();
        m.row(i) = (m.row(i).array() - mx).exp();
        m.row(i) /= m.row(i).sum();
    }
}

}  // namespace

void EncoderConfig::validate() const {
    if (layers < 1 || hidden < 1 || heads < 1 || ffn < 1 || seq_len < 1) {
        throw ValidationError("encoder config: all sizes must be positive");
    }
    if (hidden % heads != 0) {
        throw ValidationError("encoder config: hidden size must be divisible by head count");
    }
}

Matrix sinusoidal_table(int seq_len, int hidden) {
    Matrix table(seq_len, hidden);
    for (int pos = 0; pos < seq_len; ++pos) {
        for (int i = 0; i < hidden; ++i) {
            const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / hidden);
            table(pos, i) = (i % 2 == 0) ? std::sin(pos * rate) : std::cos(pos * rate);
        }
    }
    return table;
}

std::vector<std::string> attention_targets(const EncoderConfig &config) {
    std::vector<std::string> out;
    for (int l = 0; l < config.layers; ++l) {
        for (const char *role : {"query", "key", "value", "output"}) {
            out.push_back("layer" + std::to_string(l) + "." + role);
        }
    }
    return out;
}

EncoderWeights EncoderWeights::zeros(const EncoderConfig &config, bool with_head) {
    config.validate();
    const int h = config.hidden;
    EncoderWeights w;
    w.config = config;
    for (int l = 0; l < config.layers; ++l) {
        LayerWeights lw;
        for (Matrix *m : {&lw.query, &lw.key, &lw.value, &lw.output}) *m = comfort::zeros(h, h);
        for (Matrix *b : {&lw.query_bias, &lw.key_bias, &lw.value_bias, &lw.output_bias}) *b = comfort::zeros(1, h);
        lw.ffn_in = comfort::zeros(h, config.ffn);
        lw.ffn_in_bias = comfort::zeros(1, config.ffn);
        lw.ffn_out = comfort::zeros(config.ffn, h);
        lw.ffn_out_bias = comfort::zeros(1, h);
        lw.norm1_gain = ones(1, h);
        lw.norm1_bias = comfort::zeros(1, h);
        lw.norm2_gain = ones(1, h);
        lw.norm2_bias = comfort::zeros(1, h);
        w.layers.push_back(std::move(lw));
    }
    w.positional = config.positional == PositionalEncoding::kSinusoidal ? sinusoidal_table(config.seq_len, h)
                                                                        : comfort::zeros(config.seq_len, h);
    if (with_head) {
        w.head = comfort::zeros(h, h);
        w.head_bias = comfort::zeros(1, h);
    }
    return w;
}

EncoderWeights EncoderWeights::xavier(const EncoderConfig &config, Rng &rng, bool with_head) {
    EncoderWeights w = zeros(config, with_head);
    for (auto &l : w.layers) {
        for (Matrix *m : {&l.query, &l.key, &l.value, &l.output, &l.ffn_in, &l.ffn_out}) fill_xavier(*m, rng);
    }
    if (config.positional == PositionalEncoding::kLearned) fill_normal(w.positional, rng, 0.02);
    if (with_head) fill_xavier(w.head, rng);
    return w;
}

Matrix &EncoderWeights::tensor(std::string_view name) {
    Matrix *found = nullptr;
    for_each([&](const std::string &n, Matrix &m) {
        if (n == name) found = &m;
    });
    if (!found) {
        throw ValidationError("unknown encoder tensor '" + std::string(name) + "'");
    }
    return *found;
}

const Matrix &EncoderWeights::tensor(std::string_view name) const {
    return const_cast<EncoderWeights *>(this)->tensor(name);
}

std::size_t EncoderWeights::parameter_count(bool include_head) const {
    std::size_t n = 0;
    for_each([&](const std::string &name, const Matrix &m) {
        if (!include_head && name.starts_with("head.")) return;
        n += static_cast<std::size_t>(m.size());
    });
    return n;
}

EncoderWeights EncoderWeights::zeros_like() const {
    EncoderWeights z = *this;
    z.for_each([](const std::string &, Matrix &m) { m.setZero(); });
    return z;
}

Classifier Classifier::zeros(int input, int classes, int hidden1, int hidden2) {
    if (classes < 2) {
        throw ValidationError("classifier needs at least two classes");
    }
    Classifier c;
    c.hidden1 = comfort::zeros(input, hidden1);
    c.hidden1_bias = comfort::zeros(1, hidden1);
    c.hidden2 = comfort::zeros(hidden1, hidden2);
    c.hidden2_bias = comfort::zeros(1, hidden2);
    c.output = comfort::zeros(hidden2, classes);
    c.output_bias = comfort::zeros(1, classes);
    return c;
}

Classifier Classifier::xavier(int input, int classes, Rng &rng, int hidden1, int hidden2) {
    Classifier c = zeros(input, classes, hidden1, hidden2);
    fill_xavier(c.hidden1, rng);
    fill_xavier(c.hidden2, rng);
    fill_xavier(c.output, rng);
    return c;
}

Classifier Classifier::zeros_like() const {
    Classifier z = *this;
    z.for_each([](const std::string &, Matrix &m) { m.setZero(); });
    return z;
}

std::size_t Classifier::parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::string &, const Matrix &m) { n += static_cast<std::size_t>(m.size()); });
    return n;
}

namespace {

Matrix forward_impl(const EncoderWeights &weights, const Matrix &stacked_tokens, EncoderTrace *trace,
                    const ProjectionFn *project) {
    const auto &cfg = weights.config;
    const int t_len = cfg.seq_len;
    const int h = cfg.hidden;
    if (stacked_tokens.cols() != cfg.feature_dim()) {
        throw DimensionError("encoder_forward: expected " + std::to_string(cfg.feature_dim()) + " features, got " +
                             std::to_string(stacked_tokens.cols()));
    }
    if (stacked_tokens.rows() % t_len != 0) {
        throw DimensionError("encoder_forward: row count is not a multiple of the sequence length");
    }
    const auto n = static_cast<int>(stacked_tokens.rows() / t_len);
    const int dh = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Matrix x = stacked_tokens;
    for (int s = 0; s < n; ++s) x.middleRows(s * t_len, t_len) += weights.positional;

    if (trace) {
        trace->layers.assign(weights.layers.size(), LayerTrace{});
        trace->batch = n;
    }
    LayerTrace scratch;
    for (std::size_t li = 0; li < weights.layers.size(); ++li) {
        const auto &l = weights.layers[li];
        LayerTrace &lt = trace ? trace->layers[li] : scratch;
        lt.input = x;
        const int layer = static_cast<int>(li);
        auto projected = [&](Projection role, const Matrix &in, const Matrix &w, const Matrix &b) -> Matrix {
            if (!project) return affine(in, w, b);
            Matrix y = (*project)(layer, role, in, w);
            y.rowwise() += b.row(0);
            return y;
        };
        lt.q = projected(Projection::kQuery, x, l.query, l.query_bias);
        lt.k = projected(Projection::kKey, x, l.key, l.key_bias);
        lt.v = projected(Projection::kValue, x, l.value, l.value_bias);
        lt.context.resize(x.rows(), h);
        lt.attention.resize(static_cast<std::size_t>(n * cfg.heads));
        for (int s = 0; s < n; ++s) {
            for (int a = 0; a < cfg.heads; ++a) {
                Matrix &p = lt.attention[static_cast<std::size_t>(s * cfg.heads + a)];
                p.noalias() = scale * lt.q.block(s * t_len, a * dh, t_len, dh) *
                              lt.k.block(s * t_len, a * dh, t_len, dh).transpose();
                softmax_in_place(p);
                lt.context.block(s * t_len, a * dh, t_len, dh).noalias() = p * lt.v.block(s * t_len, a * dh, t_len, dh);
            }
        }
        Matrix residual1 = x + projected(Projection::kOutput, lt.context, l.output, l.output_bias);
        lt.norm1_out = layer_norm(residual1, l.norm1_gain, l.norm1_bias, cfg.layer_norm_eps, lt.norm1_hat, lt.norm1_rstd);
        lt.ffn_pre = affine(lt.norm1_out, l.ffn_in, l.ffn_in_bias);
        lt.ffn_act = lt.ffn_pre.unaryExpr(&gelu);
        Matrix residual2 = lt.norm1_out + affine(lt.ffn_act, l.ffn_out, l.ffn_out_bias);
        x = layer_norm(residual2, l.norm2_gain, l.norm2_bias, cfg.layer_norm_eps, lt.norm2_hat, lt.norm2_rstd);
    }
    return x;
}

}  // namespace

Matrix encoder_forward(const EncoderWeights &weights, const Matrix &stacked_tokens, EncoderTrace *trace) {
    return forward_impl(weights, stacked_tokens, trace, nullptr);
}

Matrix encoder_forward_with(const EncoderWeights &weights, const Matrix &stacked_tokens, const ProjectionFn &project) {
    return forward_impl(weights, stacked_tokens, nullptr, &project);
}

void encoder_backward(const EncoderWeights &weights, const EncoderTrace &trace, const Matrix &d_output,
                      EncoderWeights &grads, WeightGrads scope) {
    const auto &cfg = weights.config;
    const int t_len = cfg.seq_len;
    const int dh = cfg.head_dim();
    const int n = trace.batch;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const bool all = scope == WeightGrads::kAll;

    Matrix dx = d_output;
    for (std::size_t li = weights.layers.size(); li-- > 0;) {
        const auto &l = weights.layers[li];
        const LayerTrace &lt = trace.layers[li];
        auto &g = grads.layers[li];

        const Matrix d_res2 = layer_norm_backward(dx, lt.norm2_hat, lt.norm2_rstd, l.norm2_gain,
                                                  all ? &g.norm2_gain : nullptr, all ? &g.norm2_bias : nullptr);
        if (all) {
            g.ffn_out.noalias() += lt.ffn_act.transpose() * d_res2;
            g.ffn_out_bias += d_res2.colwise().sum();
        }
        Matrix d_pre = d_res2 * l.ffn_out.transpose();
        d_pre.array() *= lt.ffn_pre.unaryExpr(&gelu_derivative).array();
        if (all) {
            g.ffn_in.noalias() += lt.norm1_out.transpose() * d_pre;
            g.ffn_in_bias += d_pre.colwise().sum();
        }
        Matrix d_norm1 = d_res2;
        d_norm1.noalias() += d_pre * l.ffn_in.transpose();

        const Matrix d_res1 = layer_norm_backward(d_norm1, lt.norm1_hat, lt.norm1_rstd, l.norm1_gain,
                                                  all ? &g.norm1_gain : nullptr, all ? &g.norm1_bias : nullptr);
        g.output.noalias() += lt.context.transpose() * d_res1;
        if (all) g.output_bias += d_res1.colwise().sum();
        const Matrix d_context = d_res1 * l.output.transpose();

        Matrix dq(lt.q.rows(), lt.q.cols());
        Matrix dk(lt.k.rows(), lt.k.cols());
        Matrix dv(lt.v.rows(), lt.v.cols());
        for (int s = 0; s < n; ++s) {
            for (int a = 0; a < cfg.heads; ++a) {
                const Matrix &p = lt.attention[static_cast<std::size_t>(s * cfg.heads + a)];
                const auto rows = s * t_len;
                const auto cols = a * dh;
                const auto dc = d_context.block(rows, cols, t_len, dh);
                dv.block(rows, cols, t_len, dh).noalias() = p.transpose() * dc;
                Matrix dp = dc * lt.v.block(rows, cols, t_len, dh).transpose();
                // Softmax backward: dS = P ⊙ (dP - rowsum(dP ⊙ P)).
                const Vector row_dot = dp.cwiseProduct(p).rowwise().sum();
                Matrix ds = p.cwiseProduct(dp.colwise() - row_dot);
                ds *= scale;
                dq.block(rows, cols, t_len, dh).noalias() = ds * lt.k.block(rows, cols, t_len, dh);
                dk.block(rows, cols, t_len, dh).noalias() = ds.transpose() * lt.q.block(rows, cols, t_len, dh);
            }
        }
        g.query.noalias() += lt.input.transpose() * dq;
        g.key.noalias() += lt.input.transpose() * dk;
        g.value.noalias() += lt.input.transpose() * dv;
        if (all) {
            g.query_bias += dq.colwise().sum();
            g.key_bias += dk.colwise().sum();
            g.value_bias += dv.colwise().sum();
        }
        dx = d_res1;
        dx.noalias() += dq * l.query.transpose();
        dx.noalias() += dk * l.key.transpose();
        dx.noalias() += dv * l.value.transpose();
    }
    if (all && cfg.positional == PositionalEncoding::kLearned) {
        for (int s = 0; s < n; ++s) grads.positional += dx.middleRows(s * t_len, t_len);
    }
}

Matrix pool(const Matrix &embeddings, int seq_len) {
    if (seq_len <= 0 || embeddings.rows() % seq_len != 0) {
        throw DimensionError("pool: row count is not a multiple of the sequence length");
    }
    const auto n = embeddings.rows() / seq_len;
    Matrix out(n, embeddings.cols());
    for (Eigen::Index s = 0; s < n; ++s) {
        out.row(s) = embeddings.middleRows(s * seq_len, seq_len).colwise().sum() / static_cast<double>(seq_len);
    }
    return out;
}

Matrix pool_backward(const Matrix &d_pooled, int seq_len) {
    Matrix out(d_pooled.rows() * seq_len, d_pooled.cols());
    for (Eigen::Index s = 0; s < d_pooled.rows(); ++s) {
        out.middleRows(s * seq_len, seq_len) = (d_pooled.row(s) / static_cast<double>(seq_len)).replicate(seq_len, 1);
    }
    return out;
}

Matrix reconstruct(const EncoderWeights &weights, const Matrix &embeddings) {
    if (!weights.has_head()) {
        throw StateError("reconstruct: encoder has no reconstruction head");
    }
    if (embeddings.cols() != weights.head.rows()) {
        throw DimensionError("reconstruct: embedding width does not match the head");
    }
    return affine(embeddings, weights.head, weights.head_bias);
}

Matrix classifier_logits(const Classifier &c, const Matrix &pooled, ClassifierTrace *trace) {
    if (pooled.cols() != c.input_dim()) {
        throw DimensionError("classifier: expected " + std::to_string(c.input_dim()) + " inputs");
    }
    ClassifierTrace local;
    ClassifierTrace &t = trace ? *trace : local;
    t.input = pooled;
    t.pre1 = affine(pooled, c.hidden1, c.hidden1_bias);
    t.act1 = t.pre1.cwiseMax(0.0);
    t.pre2 = affine(t.act1, c.hidden2, c.hidden2_bias);
    t.act2 = t.pre2.cwiseMax(0.0);
    return affine(t.act2, c.output, c.output_bias);
}

Matrix softmax_rows(const Matrix &logits) {
    Matrix p = logits;
    softmax_in_place(p);
    return p;
}

Matrix classify(const Matrix &pooled, const Classifier &classifier) {
    return softmax_rows(classifier_logits(classifier, pooled));
}

Matrix classifier_backward(const Classifier &c, const ClassifierTrace &t, const Matrix &d_logits, Classifier &g) {
    g.output.noalias() += t.act2.transpose() * d_logits;
    g.output_bias += d_logits.colwise().sum();
    Matrix d2 = d_logits * c.output.transpose();
    d2 = (t.pre2.array() > 0.0).select(d2, 0.0);
    g.hidden2.noalias() += t.act1.transpose() * d2;
    g.hidden2_bias += d2.colwise().sum();
    Matrix d1 = d2 * c.hidden2.transpose();
    d1 = (t.pre1.array() > 0.0).select(d1, 0.0);
    g.hidden1.noalias() += t.input.transpose() * d1;
    g.hidden1_bias += d1.colwise().sum();
    return d1 * c.hidden1.transpose();
}

double cross_entropy(const Matrix &logits, std::span<const int> labels, Matrix *d_logits) {
    if (static_cast<std::size_t>(logits.rows()) != labels.size()) {
        throw DimensionError("cross_entropy: label count does not match batch");
    }
    const Matrix p = softmax_rows(logits);
    const auto n = static_cast<double>(labels.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i];
        if (y < 0 || y >= logits.cols()) {
            throw ValidationError("cross_entropy: label " + std::to_string(y) + " outside class range");
        }
        const auto row = static_cast<Eigen::Index>(i);
        const double mx = logits.row(row).maxCoeff();
        loss += mx + std::log((logits.row(row).array() - mx).exp().sum()) - logits(row, y);
    }
    if (d_logits) {
        *d_logits = p;
        for (std::size_t i = 0; i < labels.size(); ++i) (*d_logits)(static_cast<Eigen::Index>(i), labels[i]) -= 1.0;
        *d_logits /= n;
    }
    return loss / n;
}

}  // namespace comfort
