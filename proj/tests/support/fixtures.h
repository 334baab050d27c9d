// SPDX-License-Identifier: Apache-2.0
//
// Builders shared by the unit and acceptance tests.

#pragma once

#include <filesystem>
#include <string>

#include "comfort/peft.h"
#include "comfort/synth.h"

namespace fixture {

using namespace comfort;

inline EncoderConfig tiny_config() {
    EncoderConfig c;
    c.hidden = 8;
    c.heads = 2;
    c.ffn = 12;
    return c;
}

/// A bundle of `method` with every stored tensor filled with noise, a
/// random rank, class count and CoLA stage, rounded to storage precision.
inline AdapterBundle random_bundle(AdapterMethod method, const EncoderWeights &w0, std::uint64_t seed) {
    Rng rng(seed);
    AdapterOptions opts;
    opts.rank = 1 + static_cast<int>(rng.below(4));
    opts.alpha = 1.0 + static_cast<double>(rng.below(16));
    const int classes = 2 + static_cast<int>(rng.below(3));
    AdapterBundle b = adapter_init(method, w0, classes, opts, seed, "task-" + std::to_string(seed));
    b.metadata.class_names.clear();
    for (int c = 0; c < classes; ++c) b.metadata.class_names.push_back("class " + std::to_string(c));
    b.metadata.dataset_fingerprint = std::to_string(rng.below(1000000));
    if (method == AdapterMethod::kCola) {
        const auto advances = rng.below(static_cast<std::size_t>(b.chain_length));
        for (std::size_t i = 0; i < advances; ++i) cola_advance_stage(b, rng);
    }
    b.for_each_tensor([&](const std::string &, Matrix &m) { fill_normal(m, rng, 0.5); });
    round_to_storage(b);
    return b;
}

/// A fresh scratch directory under the system temp path.
inline std::filesystem::path temp_dir(const std::string &name) {
    const auto dir = std::filesystem::temp_directory_path() / ("comfort_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

/// Task dataset from `separated_task_spec`, split chronologically per subject.
inline Dataset separated_dataset(const std::string &name, const GmmModel &healthy, int classes, double separation,
                                 std::size_t per_class, std::uint64_t seed) {
    const auto spec = separated_task_spec(name, healthy, classes, separation, per_class, seed);
    Dataset d;
    d.name = name;
    d.class_names = spec.class_names;
    d.healthy_class = 0;
    d.splits = chronological_split(make_synthetic_task(spec));
    return d;
}

}  // namespace fixture
