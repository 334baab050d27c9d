// SPDX-License-Identifier: Apache-2.0
//
// Raw multi-rate sensor streams -> windowed token sequences -> chronological
// splits -> min-max scaling -> PCA -> loss-curve (CTRL) cleaning.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "comfort/numerics.h"
#include "comfort/tensor_io.h"

namespace comfort {

inline constexpr int kTokensPerSequence = 15;
inline constexpr int kUnlabeled = -1;

/// One 15-second window: one row per 1-second instance.
struct SensorSequence {
    Matrix tokens;
    std::string subject;
    int label = kUnlabeled;
    std::string task;
};

struct ChannelSpec {
    std::string name;
    int rate_hz = 0;
};

struct Stream {
    std::string channel;
    int rate_hz = 0;
    double start_seconds = 0.0;
    std::vector<double> samples;
};

struct RawRecording {
    std::string subject;
    int label = kUnlabeled;
    std::vector<Stream> streams;
};

/// Smartwatch channels then smartphone channels, each in table order;
/// multi-axis sensors expand to one channel per axis. 299 features per second.
std::vector<ChannelSpec> standard_channel_layout();

/// Features per 1-second instance: the sum of channel rates.
std::size_t feature_dim(std::span<const ChannelSpec> layout);

/// Aligns streams on their common time span and cuts non-overlapping windows
/// of `window_seconds` 1-second instances. Within an instance channels are
/// concatenated in `layout` order, samples in time order. A trailing partial
/// window is dropped; less than one window yields an empty result.
std::vector<SensorSequence> align_and_window(const RawRecording &recording, std::span<const ChannelSpec> layout,
                                             int window_seconds = kTokensPerSequence);

struct SplitDataset {
    std::vector<SensorSequence> train;
    std::vector<SensorSequence> validation;
    std::vector<SensorSequence> test;
    /// Human-readable log of which transforms were fit, and on which split.
    std::vector<std::string> provenance;
};

struct SplitFractions {
    double train = 0.7;
    double validation = 0.1;
};

/// Per subject (in order of first appearance): the earliest floor(0.7 n)
/// sequences go to train, the next floor(0.1 n) to validation, the rest to test.
SplitDataset chronological_split(std::span<const SensorSequence> sequences, SplitFractions fractions = {});

/// Chronological prefix of each subject's sequences: max(1, floor(fraction n)).
std::vector<SensorSequence> subject_prefix(std::span<const SensorSequence> sequences, double fraction);

struct MinMaxScaler {
    Matrix min;  // 1×D
    Matrix max;  // 1×D
};

MinMaxScaler minmax_fit(std::span<const SensorSequence> train);
/// (x - min) / (max - min) clipped to [0, 1]; constant features map to 0.
std::vector<SensorSequence> minmax_apply(const MinMaxScaler &scaler, std::span<const SensorSequence> sequences);

struct PcaModel {
    Matrix mean;        // 1×D
    Matrix stddev;      // 1×D, zero-variance features store 1
    Matrix projection;  // D×k, orthonormal columns
    Vector eigenvalues; // all D, descending
    int k = 0;
    double explained_variance_ratio = 0.0;
};

/// Standardises train instances with population statistics, eigendecomposes
/// their covariance and keeps the `k` leading eigenvectors.
PcaModel pca_fit(std::span<const SensorSequence> train, int k = 128);
/// Standardises with the fitted train statistics, then projects.
std::vector<SensorSequence> pca_apply(const PcaModel &model, std::span<const SensorSequence> sequences);

struct CtrlConfig {
    int hidden = 128;
    int epochs = 30;
    int batch_size = 128;
    double lr = 0.005;
    /// Clusters whose centroid mean losses differ by less than this are
    /// treated as one population and nothing is rejected.
    double min_centroid_gap = 1e-3;
};

struct CtrlPartition {
    std::vector<std::size_t> retained;
    std::vector<std::size_t> rejected;
    bool degenerate = false;
};

struct CtrlResult {
    std::vector<SensorSequence> clean;
    std::vector<std::size_t> rejected;
    Matrix loss_curves;  // samples × epochs
    bool degenerate = false;
    /// Set when the split was too small to clean and was returned unchanged.
    bool warning = false;
};

/// Clusters per-sample loss curves (rows) into two groups and rejects the
/// group with the larger centroid mean.
CtrlPartition ctrl_partition(const Matrix &loss_curves, std::uint64_t seed, double min_centroid_gap = 1e-3);

/// Trains a two-layer perceptron probe on the flattened sequences, records
/// every sample's loss after each epoch and keeps the low-loss cluster.
CtrlResult ctrl_clean(std::span<const SensorSequence> split, const CtrlConfig &config, std::uint64_t seed);

// --- on-disk datasets ------------------------------------------------------
//
// A dataset directory holds `manifest.json` (name, feature dim, label map,
// per-split sequence counts, subjects and labels, transform provenance) and
// one rank-3 [n, 15, D] CMFT blob per split.

struct Dataset {
    std::string name;
    std::vector<std::string> class_names;
    int healthy_class = 0;
    SplitDataset splits;
};

void save_dataset(const std::filesystem::path &dir, const Dataset &dataset);
Dataset load_dataset(const std::filesystem::path &dir);

/// A bare [n, 15, D] blob without labels, as consumed by `detect`.
void save_sequences(const std::filesystem::path &path, std::span<const SensorSequence> sequences);
std::vector<SensorSequence> load_sequences(const std::filesystem::path &path);

Tensor sequences_to_tensor(std::span<const SensorSequence> sequences);
std::vector<SensorSequence> tensor_to_sequences(const Tensor &tensor);

/// Stacks every token row of every sequence into one instances×D matrix.
Matrix stack_instances(std::span<const SensorSequence> sequences);

// --- raw corpora and the full pipeline ----------------------------------------
//
// A raw corpus manifest is JSON:
//
//   {"format": "comfort-raw", "name": "...", "classes": ["healthy", ...],
//    "healthy_class": 0,
//    "layout": [{"channel": "gsr", "rate_hz": 4}, ...],        (optional)
//    "recordings": [{"subject": "s01", "label": 0, "streams": [
//        {"channel": "gsr", "rate_hz": 4, "start_seconds": 0.0,
//         "samples": [...]  or  "file": "s01_gsr.txt"}]}]}
//
// Sample files hold whitespace-separated numbers and resolve relative to the
// manifest. Without "layout" the standard 299-feature layout applies.

struct RawCorpus {
    std::string name;
    std::vector<std::string> class_names;
    int healthy_class = 0;
    std::vector<ChannelSpec> layout;
    std::vector<RawRecording> recordings;
};

RawCorpus load_raw_corpus(const std::filesystem::path &manifest);

struct PreprocessOptions {
    int pca_dim = 128;
    bool clean = true;
    std::uint64_t seed = 0;
    SplitFractions fractions;
    CtrlConfig ctrl;
};

/// Windowing, chronological split, min-max and PCA fitted on train, then
/// CTRL cleaning of every split. Each step is recorded in the provenance.
Dataset preprocess(const RawCorpus &corpus, const PreprocessOptions &options);

}  // namespace comfort
