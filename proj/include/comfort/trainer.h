// SPDX-License-Identifier: Apache-2.0
//
// Masked-data-modeling pre-training, per-task fine-tuning (low-rank adapters,
// full fine-tuning, training from scratch) and evaluation.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "comfort/datapipe.h"
#include "comfort/encoder.h"
#include "comfort/peft.h"

namespace comfort {

// --- masking -----------------------------------------------------------------

inline constexpr int kMaskedWindows = 5;
inline constexpr double kMaskFraction = 0.15;

/// floor(0.15 D), at least 1.
int masked_per_window(int feature_dim);

struct MaskSpec {
    std::vector<int> windows;                // 5 distinct token indices, ascending
    std::vector<std::vector<int>> features;  // per window, ascending feature indices
    std::vector<std::vector<double>> values; // replacement per masked entry

    std::size_t masked_count() const;
    /// T×D indicator of masked entries.
    Matrix indicator(int tokens, int feature_dim) const;
};

struct MaskedSequence {
    SensorSequence masked;
    MaskSpec spec;
};

/// Picks 5 windows uniformly without replacement and, in each, replaces
/// floor(0.15 D) features with independent N(0, 1) draws. The input is the
/// reconstruction target and is left untouched.
MaskedSequence mdm_mask(const SensorSequence &sequence, std::uint64_t seed);

// --- configuration and logs -------------------------------------------------------

struct TrainConfig {
    double lr = 0.005;
    int batch_size = 128;
    int pretrain_epochs = 1000;
    double stop_loss = 0.001;
    int finetune_epochs = 300;
    std::uint64_t seed = 0;
    /// Share of each subject's training sequences used, as a chronological prefix.
    double fraction = 1.0;
    /// Reconstruction loss over masked entries only; false uses every entry.
    bool masked_only = true;
    AdapterOptions adapter;

    void validate() const;
};

struct EpochLog {
    int epoch = 0;
    std::string split;
    double loss = 0.0;
    std::optional<double> accuracy;
};

/// "epoch<TAB>split<TAB>loss<TAB>accuracy" lines with a header; "-" marks a
/// missing accuracy.
std::string format_metrics_log(std::span<const EpochLog> log);

// --- pre-training ---------------------------------------------------------------

/// A stacked batch of masked inputs, original targets and the loss weights
/// (the mask indicator, or all ones for full-sequence loss).
struct MdmBatch {
    Matrix input;
    Matrix target;
    Matrix weight;
    int sequences = 0;
};

MdmBatch make_mdm_batch(std::span<const SensorSequence> corpus, std::span<const std::size_t> indices,
                        std::uint64_t mask_seed, bool masked_only);

/// Weighted mean squared reconstruction error; fills `grads` (shaped like
/// `weights`, head included) when non-null.
double mdm_loss(const EncoderWeights &weights, const MdmBatch &batch, EncoderWeights *grads = nullptr);

/// Mean loss over the whole corpus with a fixed masking drawn from `mask_seed`.
double mdm_evaluate(const EncoderWeights &weights, std::span<const SensorSequence> corpus, std::uint64_t mask_seed,
                    bool masked_only = true);

struct PretrainResult {
    EncoderWeights weights;            // W0 with its reconstruction head
    std::vector<double> loss_history;  // epoch-mean training loss
    double initial_loss = 0.0;         // mdm_evaluate at initialisation
    double final_loss = 0.0;           // mdm_evaluate of the stored weights, same masking
    int epochs = 0;
    bool converged = false;            // stop loss reached
    std::vector<EpochLog> log;
};

/// Adam on the masked reconstruction loss from a Xavier initialisation until
/// the epoch-mean loss drops below `stop_loss` or `pretrain_epochs` run out.
/// NumericError on a non-finite loss.
PretrainResult pretrain(const EncoderConfig &config, std::span<const SensorSequence> corpus,
                        const TrainConfig &train);

// --- fine-tuning ------------------------------------------------------------------

/// Mean cross-entropy of a stacked batch through W0 composed with `bundle`.
/// When `grads` is non-null (shaped like `bundle`), accumulates the gradient
/// of every bundle tensor; W0 receives none.
double task_loss(const EncoderWeights &w0, const AdapterBundle &bundle, const Matrix &stacked_tokens,
                 std::span<const int> labels, AdapterBundle *grads = nullptr);

struct FinetuneResult {
    AdapterBundle bundle;
    int best_epoch = 0;
    double best_validation_accuracy = 0.0;
    std::size_t train_sequences = 0;
    std::vector<EpochLog> log;
};

/// Trains a bundle of `method` for `dataset` and returns the epoch with the
/// highest validation accuracy (the last epoch when there is no validation
/// split), rounded to storage precision. CoLA splits the epochs evenly over
/// its chain. W0 is never modified. ValidationError on out-of-range labels.
FinetuneResult finetune(const EncoderWeights &w0, const Dataset &dataset, AdapterMethod method,
                        const TrainConfig &train);

// --- evaluation --------------------------------------------------------------------

struct Prediction {
    int label = 0;
    std::vector<double> probabilities;
};

std::vector<Prediction> predict(const EncoderWeights &w0, const AdapterBundle &bundle,
                                std::span<const SensorSequence> sequences);

struct Metrics {
    std::size_t count = 0;
    double accuracy = 0.0;
    /// Healthy vs any disease class; absent when there are no positives.
    std::optional<double> f1;
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    /// confusion[true][predicted]
    std::vector<std::vector<std::size_t>> confusion;
};

Metrics metrics_from_predictions(std::span<const int> truth, std::span<const int> predicted, int classes,
                                 int healthy_class);

/// ValidationError on an empty split.
Metrics evaluate(const EncoderWeights &w0, const AdapterBundle &bundle, std::span<const SensorSequence> test,
                 int healthy_class);

}  // namespace comfort
