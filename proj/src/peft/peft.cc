// SPDX-License-Identifier: Apache-2.0

#include "comfort/peft.h"

#include <array>
#include <map>

#include "comfort/errors.h"

namespace comfort {
namespace {

constexpr double kNormGuard = 1e-12;

std::string weight_name(const std::string &target) { return target + ".weight"; }

Matrix low_rank_sum(const TargetAdapter &adapter, double scale, Eigen::Index rows, Eigen::Index cols) {
    Matrix delta = Matrix::Zero(rows, cols);
    for (const auto &stage : adapter.stages) delta.noalias() += scale * stage.b * stage.a;
    return delta;
}

Matrix guarded_norms(const Matrix &w) {
    Matrix norms = column_norms(w);
    if (norms.minCoeff() < kNormGuard) {
        throw NumericError("dora: effective weight has a zero-norm column");
    }
    return norms;
}

LowRankPair fresh_pair(Eigen::Index d, Eigen::Index k, int rank, Rng &rng, double stddev) {
    LowRankPair p{Matrix::Zero(d, rank), Matrix(rank, k)};
    fill_normal(p.a, rng, stddev);
    return p;
}

}  // namespace

std::string_view method_name(AdapterMethod method) {
    switch (method) {
    case AdapterMethod::kLora: return "lora";
    case AdapterMethod::kDora: return "dora";
    case AdapterMethod::kCola: return "cola";
    case AdapterMethod::kFull: return "full";
    case AdapterMethod::kScratch: return "scratch";
    }
    return "unknown";
}

AdapterMethod parse_method(std::string_view name) {
    for (auto m : {AdapterMethod::kLora, AdapterMethod::kDora, AdapterMethod::kCola, AdapterMethod::kFull,
                   AdapterMethod::kScratch}) {
        if (method_name(m) == name) return m;
    }
    throw ValidationError("unknown fine-tuning method '" + std::string(name) + "'");
}

bool is_low_rank(AdapterMethod method) {
    return method == AdapterMethod::kLora || method == AdapterMethod::kDora || method == AdapterMethod::kCola;
}

AdapterBundle AdapterBundle::zeros_like() const {
    AdapterBundle z = *this;
    z.for_each_tensor([](const std::string &, Matrix &m) { m.setZero(); });
    return z;
}

std::size_t AdapterBundle::parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const std::string &, const Matrix &m) { n += static_cast<std::size_t>(m.size()); });
    return n;
}

AdapterBundle adapter_init(AdapterMethod method, const EncoderWeights &w0, int classes, const AdapterOptions &options,
                           std::uint64_t seed, std::string task_id) {
    Rng rng(seed);
    Rng classifier_rng = rng.fork(1);
    Rng factor_rng = rng.fork(2);

    AdapterBundle bundle;
    bundle.task_id = std::move(task_id);
    bundle.method = method;
    bundle.rank = options.rank;
    bundle.alpha = options.alpha;
    bundle.chain_length = method == AdapterMethod::kCola ? options.chain_length : 1;
    bundle.metadata.seed = seed;
    bundle.classifier = Classifier::xavier(w0.config.hidden, classes, classifier_rng);

    if (method == AdapterMethod::kFull) {
        bundle.dense = w0.zeros_like();
        bundle.dense->head.resize(0, 0);
        bundle.dense->head_bias.resize(0, 0);
        return bundle;
    }
    if (method == AdapterMethod::kScratch) {
        Rng encoder_rng = rng.fork(3);
        bundle.dense = EncoderWeights::xavier(w0.config, encoder_rng, /*with_head=*/false);
        return bundle;
    }

    if (options.rank < 1) {
        throw ValidationError("adapter_init: rank must be at least 1");
    }
    if (method == AdapterMethod::kCola && options.chain_length < 1) {
        throw ValidationError("adapter_init: CoLA chain length must be at least 1");
    }
    const auto targets = options.targets.empty() ? attention_targets(w0.config) : options.targets;
    if (targets.empty()) {
        throw ValidationError("adapter_init: no targets");
    }
    for (const auto &name : targets) {
        if (name.starts_with("head") || !name.starts_with("layer")) {
            throw ValidationError("adapter_init: '" + name + "' is not an adaptable encoder matrix");
        }
        const Matrix &base = w0.tensor(weight_name(name));
        if (base.rows() == 1) {
            throw ValidationError("adapter_init: '" + name + "' is not a weight matrix");
        }
        TargetAdapter t;
        t.target = name;
        t.stages.push_back(fresh_pair(base.rows(), base.cols(), options.rank, factor_rng, options.init_stddev));
        if (method == AdapterMethod::kDora) t.magnitude = column_norms(base);
        bundle.targets.push_back(std::move(t));
    }
    return bundle;
}

Matrix effective_weight(const Matrix &w0, const TargetAdapter &adapter, AdapterMethod method, double scale) {
    for (const auto &stage : adapter.stages) {
        if (stage.b.rows() != w0.rows() || stage.a.cols() != w0.cols() || stage.b.cols() != stage.a.rows()) {
            throw DimensionError("effective_weight: factor shapes do not match " + adapter.target);
        }
    }
    Matrix w = w0 + low_rank_sum(adapter, scale, w0.rows(), w0.cols());
    if (method == AdapterMethod::kDora) {
        if (adapter.magnitude.cols() != w0.cols()) {
            throw DimensionError("effective_weight: magnitude length does not match " + adapter.target);
        }
        const Matrix norms = guarded_norms(w);
        w = w.array().rowwise() * (adapter.magnitude.row(0).array() / norms.row(0).array());
    } else if (!is_low_rank(method)) {
        throw ValidationError("effective_weight: not a low-rank method");
    }
    return w;
}

EncoderWeights effective_encoder(const EncoderWeights &w0, const AdapterBundle &bundle) {
    switch (bundle.method) {
    case AdapterMethod::kScratch:
        if (!bundle.dense) throw StateError("scratch bundle carries no encoder");
        return *bundle.dense;
    case AdapterMethod::kFull: {
        if (!bundle.dense) throw StateError("full bundle carries no weight deltas");
        EncoderWeights out = w0;
        bundle.dense->for_each([&](const std::string &name, const Matrix &delta) {
            Matrix &w = out.tensor(name);
            if (w.rows() != delta.rows() || w.cols() != delta.cols()) {
                throw DimensionError("full bundle delta shape mismatch for " + name);
            }
            w += delta;
        });
        return out;
    }
    default: {
        EncoderWeights out = w0;
        for (const auto &t : bundle.targets) {
            out.tensor(weight_name(t.target)) =
                effective_weight(w0.tensor(weight_name(t.target)), t, bundle.method, bundle.scale());
        }
        return out;
    }
    }
}

Matrix encoder_forward_composed(const EncoderWeights &w0, const AdapterBundle &bundle, const Matrix &stacked_tokens) {
    if (!is_low_rank(bundle.method)) {
        return encoder_forward(effective_encoder(w0, bundle), stacked_tokens);
    }
    static constexpr std::array<const char *, 4> kRoles = {"query", "key", "value", "output"};
    std::map<std::string, const TargetAdapter *> by_name;
    for (const auto &t : bundle.targets) by_name[t.target] = &t;
    // Non-attention targets have no projection hook; fold them in up front.
    EncoderWeights base = w0;
    for (const auto &t : bundle.targets) {
        bool attention = false;
        for (const char *role : kRoles) attention |= t.target.ends_with(std::string(".") + role);
        if (!attention) {
            base.tensor(weight_name(t.target)) =
                effective_weight(w0.tensor(weight_name(t.target)), t, bundle.method, bundle.scale());
        }
    }
    const double s = bundle.scale();
    ProjectionFn project = [&](int layer, Projection role, const Matrix &x, const Matrix &w) -> Matrix {
        auto it = by_name.find("layer" + std::to_string(layer) + "." + kRoles[static_cast<int>(role)]);
        Matrix y = x * w;
        if (it == by_name.end()) return y;
        const TargetAdapter &t = *it->second;
        for (const auto &stage : t.stages) y.noalias() += s * (x * stage.b) * stage.a;
        if (bundle.method == AdapterMethod::kDora) {
            const Matrix norms = guarded_norms(w + low_rank_sum(t, s, w.rows(), w.cols()));
            y = y.array().rowwise() * (t.magnitude.row(0).array() / norms.row(0).array());
        }
        return y;
    };
    return encoder_forward_with(base, stacked_tokens, project);
}

Matrix encode(const EncoderWeights &w0, const AdapterBundle *bundle, const SensorSequence &sequence) {
    if (sequence.tokens.cols() != w0.config.feature_dim()) {
        throw DimensionError("encode: sequence has " + std::to_string(sequence.tokens.cols()) +
                             " features, encoder expects " + std::to_string(w0.config.feature_dim()));
    }
    if (!bundle) return encoder_forward(w0, sequence.tokens);
    return encoder_forward(effective_encoder(w0, *bundle), sequence.tokens);
}

void adapter_backward(const EncoderWeights &w0, const AdapterBundle &bundle, const EncoderWeights &d_effective,
                      AdapterBundle &grads) {
    if (!is_low_rank(bundle.method)) {
        if (!grads.dense) throw StateError("adapter_backward: dense gradient buffer missing");
        grads.dense->for_each([&](const std::string &name, Matrix &g) { g += d_effective.tensor(name); });
        return;
    }
    const double s = bundle.scale();
    for (std::size_t i = 0; i < bundle.targets.size(); ++i) {
        const TargetAdapter &t = bundle.targets[i];
        TargetAdapter &gt = grads.targets[i];
        Matrix g = d_effective.tensor(weight_name(t.target));
        if (bundle.method == AdapterMethod::kDora) {
            const Matrix &base = w0.tensor(weight_name(t.target));
            const Matrix direction = base + low_rank_sum(t, s, base.rows(), base.cols());
            const Matrix norms = guarded_norms(direction);
            // Exact derivative through the column norm, no detach.
            for (Eigen::Index j = 0; j < direction.cols(); ++j) {
                const double n = norms(0, j);
                const double dot = g.col(j).dot(direction.col(j));
                gt.magnitude(0, j) += dot / n;
                const double m = t.magnitude(0, j);
                g.col(j) = (m / n) * (g.col(j) - (dot / (n * n)) * direction.col(j));
            }
        }
        const auto stage = static_cast<std::size_t>(bundle.method == AdapterMethod::kCola ? bundle.active_stage : 0);
        const LowRankPair &p = t.stages[stage];
        gt.stages[stage].b.noalias() += s * g * p.a.transpose();
        gt.stages[stage].a.noalias() += s * p.b.transpose() * g;
    }
}

std::vector<ParamRef> trainable_params(AdapterBundle &bundle, AdapterBundle &grads) {
    std::vector<ParamRef> out;
    if (is_low_rank(bundle.method)) {
        const auto stage = static_cast<std::size_t>(bundle.method == AdapterMethod::kCola ? bundle.active_stage : 0);
        for (std::size_t i = 0; i < bundle.targets.size(); ++i) {
            auto &t = bundle.targets[i];
            auto &g = grads.targets[i];
            if (bundle.method == AdapterMethod::kDora) {
                out.push_back({t.target + ".magnitude", &t.magnitude, &g.magnitude});
            }
            const std::string j = std::to_string(stage);
            out.push_back({t.target + ".lora_b." + j, &t.stages[stage].b, &g.stages[stage].b});
            out.push_back({t.target + ".lora_a." + j, &t.stages[stage].a, &g.stages[stage].a});
        }
    } else {
        std::vector<Matrix *> grad_slots;
        grads.dense->for_each([&](const std::string &, Matrix &m) { grad_slots.push_back(&m); });
        std::size_t i = 0;
        bundle.dense->for_each(
            [&](const std::string &name, Matrix &m) { out.push_back({"dense." + name, &m, grad_slots[i++]}); });
    }
    std::vector<Matrix *> classifier_grads;
    grads.classifier.for_each([&](const std::string &, Matrix &m) { classifier_grads.push_back(&m); });
    std::size_t i = 0;
    bundle.classifier.for_each(
        [&](const std::string &name, Matrix &m) { out.push_back({name, &m, classifier_grads[i++]}); });
    return out;
}

void cola_advance_stage(AdapterBundle &bundle, Rng &rng, double init_stddev) {
    if (bundle.method != AdapterMethod::kCola) {
        throw StateError("cola_advance_stage: bundle is " + std::string(method_name(bundle.method)));
    }
    if (bundle.active_stage + 1 >= bundle.chain_length) {
        throw StateError("cola_advance_stage: already at the last of " + std::to_string(bundle.chain_length) +
                         " stages");
    }
    ++bundle.active_stage;
    for (auto &t : bundle.targets) {
        const auto d = t.stages.front().b.rows();
        const auto k = t.stages.front().a.cols();
        t.stages.push_back(fresh_pair(d, k, bundle.rank, rng, init_stddev));
    }
}

void round_to_storage(AdapterBundle &bundle) {
    bundle.for_each_tensor([](const std::string &, Matrix &m) { round_to_float(m); });
}

}  // namespace comfort
