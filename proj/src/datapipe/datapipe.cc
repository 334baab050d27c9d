// SPDX-License-Identifier: Apache-2.0

#include "comfort/datapipe.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

#include "comfort/errors.h"

namespace comfort {

std::vector<ChannelSpec> standard_channel_layout() {
    std::vector<ChannelSpec> layout = {
        {"watch.gsr", 4},      {"watch.skin_temperature", 4},
        {"watch.accel.x", 32}, {"watch.accel.y", 32},
        {"watch.accel.z", 32}, {"watch.heart_rate", 1},
        {"watch.bvp", 64},
    };
    const char *phone[] = {"humidity",           "illuminance",        "color.r",          "color.g",
                           "color.b",            "color.w",            "ambient_temperature", "gravity.x",
                           "gravity.y",          "gravity.z",          "angular_velocity.x", "angular_velocity.y",
                           "angular_velocity.z", "orientation.x",      "orientation.y",    "orientation.z",
                           "accel.x",            "accel.y",            "accel.z",          "linear_accel.x",
                           "linear_accel.y",     "linear_accel.z",     "air_pressure",     "proximity",
                           "wifi_strength",      "magnetic_field"};
    for (const char *name : phone) layout.push_back({std::string("phone.") + name, 5});
    return layout;
}

std::size_t feature_dim(std::span<const ChannelSpec> layout) {
    std::size_t d = 0;
    for (const auto &c : layout) d += static_cast<std::size_t>(c.rate_hz);
    return d;
}

std::vector<SensorSequence> align_and_window(const RawRecording &recording, std::span<const ChannelSpec> layout,
                                             int window_seconds) {
    if (window_seconds <= 0) {
        throw ValidationError("align_and_window: window must be positive");
    }
    std::vector<const Stream *> ordered;
    for (const auto &spec : layout) {
        if (spec.rate_hz <= 0) {
            throw ValidationError("align_and_window: channel " + spec.name + " has non-positive rate");
        }
        auto it = std::find_if(recording.streams.begin(), recording.streams.end(),
                               [&](const Stream &s) { return s.channel == spec.name; });
        if (it == recording.streams.end()) {
            throw ValidationError("align_and_window: subject " + recording.subject + " is missing channel " +
                                  spec.name);
        }
        if (it->rate_hz != spec.rate_hz) {
            throw ValidationError("align_and_window: channel " + spec.name + " sampled at " +
                                  std::to_string(it->rate_hz) + " Hz, layout expects " +
                                  std::to_string(spec.rate_hz));
        }
        ordered.push_back(&*it);
    }
    if (ordered.empty()) return {};

    double common_start = ordered.front()->start_seconds;
    for (const Stream *s : ordered) common_start = std::max(common_start, s->start_seconds);

    // First sample index at the common start, and whole seconds available from there.
    std::vector<std::size_t> first_index;
    long long seconds = -1;
    for (const Stream *s : ordered) {
        const auto idx = static_cast<std::size_t>(std::llround((common_start - s->start_seconds) * s->rate_hz));
        first_index.push_back(idx);
        const long long available =
            idx >= s->samples.size() ? 0 : static_cast<long long>((s->samples.size() - idx) / s->rate_hz);
        seconds = seconds < 0 ? available : std::min(seconds, available);
    }

    const std::size_t d = feature_dim(layout);
    const long long windows = seconds / window_seconds;
    std::vector<SensorSequence> out;
    out.reserve(static_cast<std::size_t>(std::max(0LL, windows)));
    for (long long w = 0; w < windows; ++w) {
        SensorSequence seq;
        seq.subject = recording.subject;
        seq.label = recording.label;
        seq.tokens.resize(window_seconds, static_cast<Eigen::Index>(d));
        for (int t = 0; t < window_seconds; ++t) {
            const long long second = w * window_seconds + t;
            Eigen::Index col = 0;
            for (std::size_t c = 0; c < ordered.size(); ++c) {
                const Stream &s = *ordered[c];
                const std::size_t base = first_index[c] + static_cast<std::size_t>(second * s.rate_hz);
                for (int k = 0; k < s.rate_hz; ++k) seq.tokens(t, col++) = s.samples[base + static_cast<std::size_t>(k)];
            }
        }
        check_finite(seq.tokens, "sensor window for subject " + recording.subject);
        out.push_back(std::move(seq));
    }
    return out;
}

namespace {

std::size_t floor_fraction(double fraction, std::size_t n) {
    return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
}

// Subjects in order of first appearance, each with its sequence indices in order.
std::vector<std::vector<std::size_t>> group_by_subject(std::span<const SensorSequence> sequences) {
    std::vector<std::vector<std::size_t>> groups;
    std::unordered_map<std::string, std::size_t> slot;
    for (std::size_t i = 0; i < sequences.size(); ++i) {
        auto [it, inserted] = slot.try_emplace(sequences[i].subject, groups.size());
        if (inserted) groups.emplace_back();
        groups[it->second].push_back(i);
    }
    return groups;
}

}  // namespace

SplitDataset chronological_split(std::span<const SensorSequence> sequences, SplitFractions fractions) {
    if (sequences.empty()) {
        throw ValidationError("chronological_split: no sequences");
    }
    if (fractions.train < 0 || fractions.validation < 0 || fractions.train + fractions.validation > 1.0) {
        throw ValidationError("chronological_split: fractions must be non-negative and sum to at most 1");
    }
    SplitDataset out;
    for (const auto &group : group_by_subject(sequences)) {
        const std::size_t n = group.size();
        const std::size_t n_train = floor_fraction(fractions.train, n);
        const std::size_t n_val = floor_fraction(fractions.validation, n);
        for (std::size_t j = 0; j < n; ++j) {
            const auto &seq = sequences[group[j]];
            if (j < n_train) {
                out.train.push_back(seq);
            } else if (j < n_train + n_val) {
                out.validation.push_back(seq);
            } else {
                out.test.push_back(seq);
            }
        }
    }
    return out;
}

std::vector<SensorSequence> subject_prefix(std::span<const SensorSequence> sequences, double fraction) {
    if (!(fraction > 0.0) || fraction > 1.0) {
        throw ValidationError("subject_prefix: fraction must be in (0, 1]");
    }
    std::vector<SensorSequence> out;
    for (const auto &group : group_by_subject(sequences)) {
        const std::size_t keep = std::max<std::size_t>(1, floor_fraction(fraction, group.size()));
        for (std::size_t j = 0; j < keep; ++j) out.push_back(sequences[group[j]]);
    }
    return out;
}

Matrix stack_instances(std::span<const SensorSequence> sequences) {
    if (sequences.empty()) return Matrix(0, 0);
    const auto d = sequences.front().tokens.cols();
    Eigen::Index rows = 0;
    for (const auto &s : sequences) {
        if (s.tokens.cols() != d) {
            throw DimensionError("stack_instances: inconsistent feature dimension");
        }
        rows += s.tokens.rows();
    }
    Matrix out(rows, d);
    Eigen::Index r = 0;
    for (const auto &s : sequences) {
        out.middleRows(r, s.tokens.rows()) = s.tokens;
        r += s.tokens.rows();
    }
    return out;
}

MinMaxScaler minmax_fit(std::span<const SensorSequence> train) {
    const Matrix x = stack_instances(train);
    if (x.rows() == 0) {
        throw ValidationError("minmax_fit: no training instances");
    }
    return MinMaxScaler{x.colwise().minCoeff(), x.colwise().maxCoeff()};
}

std::vector<SensorSequence> minmax_apply(const MinMaxScaler &scaler, std::span<const SensorSequence> sequences) {
    std::vector<SensorSequence> out(sequences.begin(), sequences.end());
    const Matrix range = scaler.max - scaler.min;
    for (auto &seq : out) {
        if (seq.tokens.cols() != range.cols()) {
            throw DimensionError("minmax_apply: feature dimension mismatch");
        }
        for (Eigen::Index j = 0; j < range.cols(); ++j) {
            const double lo = scaler.min(0, j);
            const double span = range(0, j);
            for (Eigen::Index i = 0; i < seq.tokens.rows(); ++i) {
                double &v = seq.tokens(i, j);
                v = span > 0.0 ? std::clamp((v - lo) / span, 0.0, 1.0) : 0.0;
            }
        }
    }
    return out;
}

PcaModel pca_fit(std::span<const SensorSequence> train, int k) {
    const Matrix x = stack_instances(train);
    const auto d = x.cols();
    if (k <= 0 || k > d) {
        throw ValidationError("pca_fit: k=" + std::to_string(k) + " must be in [1, " + std::to_string(d) + "]");
    }
    if (x.rows() <= k) {
        throw ValidationError("pca_fit: need more training instances than k");
    }
    const double n = static_cast<double>(x.rows());
    PcaModel model;
    model.k = k;
    model.mean = x.colwise().mean();
    Matrix centered = x.rowwise() - model.mean.row(0);
    model.stddev = (centered.colwise().squaredNorm() / n).cwiseSqrt();
    for (Eigen::Index j = 0; j < d; ++j) {
        if (model.stddev(0, j) == 0.0) model.stddev(0, j) = 1.0;
    }
    centered = centered.array().rowwise() / model.stddev.row(0).array();
    Matrix cov = (centered.transpose() * centered) / n;
    cov = 0.5 * (cov + cov.transpose());
    const EigenDecomposition eig = sym_eig(cov);
    model.eigenvalues = eig.values;
    model.projection = eig.vectors.leftCols(k);
    const double total = eig.values.sum();
    model.explained_variance_ratio = total > 0.0 ? eig.values.head(k).sum() / total : 1.0;
    return model;
}

std::vector<SensorSequence> pca_apply(const PcaModel &model, std::span<const SensorSequence> sequences) {
    std::vector<SensorSequence> out(sequences.begin(), sequences.end());
    for (auto &seq : out) {
        if (seq.tokens.cols() != model.mean.cols()) {
            throw DimensionError("pca_apply: feature dimension mismatch");
        }
        Matrix z = (seq.tokens.rowwise() - model.mean.row(0)).array().rowwise() / model.stddev.row(0).array();
        seq.tokens = z * model.projection;
    }
    return out;
}

}  // namespace comfort
