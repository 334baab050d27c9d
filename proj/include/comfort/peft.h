// SPDX-License-Identifier: Apache-2.0
//
// Low-rank adapters over frozen encoder weights.
//
// With W0 ∈ R^{d×k}, B ∈ R^{d×r}, A ∈ R^{r×k} and s = α / r:
//
//   lora  W = W0 + s·B·A
//   dora  W = m ⊙ (W0 + s·B·A) / ‖W0 + s·B·A‖_col   (m is 1×k)
//   cola  W = W0 + Σ_j s·B_j·A_j over the stages initialised so far
//
// B starts at zero and A at N(0, 0.02²), so a fresh adapter reproduces W0
// (DoRA's m starts at the column norms of W0).
//
// The same bundle type also carries the two dense baselines: `full` stores
// ΔW = W_finetuned − W0 for every encoder tensor, `scratch` stores a complete
// independently trained encoder. Each bundle owns its task classifier.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "comfort/datapipe.h"
#include "comfort/encoder.h"
#include "comfort/numerics.h"

namespace comfort {

enum class AdapterMethod : std::uint32_t {
    kLora = 1,
    kDora = 2,
    kCola = 3,
    kFull = 4,
    kScratch = 5,
};

std::string_view method_name(AdapterMethod method);
/// Accepts "lora", "dora", "cola", "full", "scratch". Throws ValidationError.
AdapterMethod parse_method(std::string_view name);
bool is_low_rank(AdapterMethod method);

struct LowRankPair {
    Matrix b;  // d×r
    Matrix a;  // r×k
};

struct TargetAdapter {
    std::string target;  // e.g. "layer0.query"
    std::vector<LowRankPair> stages;
    Matrix magnitude;  // DoRA only, 1×k
};

struct BundleMetadata {
    std::vector<std::string> class_names;
    int healthy_class = 0;
    std::uint64_t seed = 0;
    std::string dataset_fingerprint;
};

struct AdapterBundle {
    std::string task_id;
    AdapterMethod method = AdapterMethod::kLora;
    int rank = 8;
    double alpha = 8.0;
    int chain_length = 1;
    int active_stage = 0;
    std::vector<TargetAdapter> targets;
    Classifier classifier;
    /// full: ΔW per encoder tensor. scratch: the complete encoder.
    std::optional<EncoderWeights> dense;
    BundleMetadata metadata;

    double scale() const { return alpha / static_cast<double>(rank); }

    /// Every stored tensor payload as (name, matrix), in serialization order.
    template <class F>
    void for_each_tensor(F &&f);
    template <class F>
    void for_each_tensor(F &&f) const;

    /// Same structure with every tensor zeroed (gradient buffers).
    AdapterBundle zeros_like() const;
    std::size_t parameter_count() const;
};

struct AdapterOptions {
    int rank = 8;
    double alpha = 8.0;
    int chain_length = 3;
    double init_stddev = 0.02;
    /// Empty selects every attention projection.
    std::vector<std::string> targets;
};

/// Fresh bundle with a Xavier-initialised classifier for `classes` classes.
AdapterBundle adapter_init(AdapterMethod method, const EncoderWeights &w0, int classes, const AdapterOptions &options,
                           std::uint64_t seed, std::string task_id = {});

/// Effective weight of one target.
Matrix effective_weight(const Matrix &w0, const TargetAdapter &adapter, AdapterMethod method, double scale);

/// W0 with every adapted matrix replaced by its effective weight (or
/// W0 + ΔW for full bundles, the stored encoder for scratch bundles).
EncoderWeights effective_encoder(const EncoderWeights &w0, const AdapterBundle &bundle);

/// Forward pass that composes each low-rank update on the fly,
/// x·W0 + s·(x·B)·A, instead of materialising the effective weights.
Matrix encoder_forward_composed(const EncoderWeights &w0, const AdapterBundle &bundle, const Matrix &stacked_tokens);

/// 15×H token embeddings of one sequence, optionally through an adapter.
Matrix encode(const EncoderWeights &w0, const AdapterBundle *bundle, const SensorSequence &sequence);

/// Maps d(loss)/d(effective weights) onto the bundle's adapter factors,
/// accumulating into `grads` (shaped like the bundle).
void adapter_backward(const EncoderWeights &w0, const AdapterBundle &bundle, const EncoderWeights &d_effective,
                      AdapterBundle &grads);

/// The tensors an optimizer may update: adapter factors (DoRA magnitudes,
/// only CoLA's active stage) or dense tensors, plus the classifier. W0 is
/// never included.
std::vector<ParamRef> trainable_params(AdapterBundle &bundle, AdapterBundle &grads);

/// Freezes the active CoLA stage and starts the next one at B = 0.
/// StateError when not CoLA or already at the last stage.
void cola_advance_stage(AdapterBundle &bundle, Rng &rng, double init_stddev = 0.02);

/// Rounds every tensor to float32 precision, the stored representation.
void round_to_storage(AdapterBundle &bundle);

template <class F>
void AdapterBundle::for_each_tensor(F &&f) {
    for (auto &t : targets) {
        if (method == AdapterMethod::kDora) f(t.target + ".magnitude", t.magnitude);
        for (std::size_t j = 0; j < t.stages.size(); ++j) {
            f(t.target + ".lora_b." + std::to_string(j), t.stages[j].b);
            f(t.target + ".lora_a." + std::to_string(j), t.stages[j].a);
        }
    }
    if (dense) {
        dense->for_each([&](const std::string &name, Matrix &m) { f("dense." + name, m); });
    }
    classifier.for_each(f);
}

template <class F>
void AdapterBundle::for_each_tensor(F &&f) const {
    const_cast<AdapterBundle *>(this)->for_each_tensor(
        [&](const std::string &name, Matrix &m) { f(name, static_cast<const Matrix &>(m)); });
}

}  // namespace comfort
