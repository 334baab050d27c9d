// SPDX-License-Identifier: Apache-2.0

#include <json.hpp>

#include "comfort/datapipe.h"
#include "comfort/errors.h"

namespace comfort {
namespace {

using nlohmann::json;

constexpr const char *kSplitNames[] = {"train", "validation", "test"};

std::vector<SensorSequence> &split_ref(SplitDataset &d, int i) {
    return i == 0 ? d.train : (i == 1 ? d.validation : d.test);
}

const std::vector<SensorSequence> &split_ref(const SplitDataset &d, int i) {
    return i == 0 ? d.train : (i == 1 ? d.validation : d.test);
}

}  // namespace

Tensor sequences_to_tensor(std::span<const SensorSequence> sequences) {
    Tensor t;
    const std::uint64_t rows = sequences.empty() ? kTokensPerSequence : sequences.front().tokens.rows();
    const std::uint64_t d = sequences.empty() ? 0 : sequences.front().tokens.cols();
    t.dims = {sequences.size(), rows, d};
    t.values.reserve(static_cast<std::size_t>(t.element_count()));
    for (const auto &s : sequences) {
        if (static_cast<std::uint64_t>(s.tokens.rows()) != rows || static_cast<std::uint64_t>(s.tokens.cols()) != d) {
            throw DimensionError("sequences_to_tensor: inconsistent sequence shapes");
        }
        for (Eigen::Index i = 0; i < s.tokens.size(); ++i) t.values.push_back(static_cast<float>(s.tokens.data()[i]));
    }
    return t;
}

std::vector<SensorSequence> tensor_to_sequences(const Tensor &tensor) {
    if (tensor.dims.size() != 3) {
        throw DimensionError("expected a rank-3 [n, tokens, features] tensor");
    }
    const auto n = tensor.dims[0];
    const auto rows = static_cast<Eigen::Index>(tensor.dims[1]);
    const auto cols = static_cast<Eigen::Index>(tensor.dims[2]);
    std::vector<SensorSequence> out(static_cast<std::size_t>(n));
    std::size_t pos = 0;
    for (auto &s : out) {
        s.tokens.resize(rows, cols);
        for (Eigen::Index i = 0; i < s.tokens.size(); ++i) s.tokens.data()[i] = tensor.values[pos++];
    }
    return out;
}

void save_sequences(const std::filesystem::path &path, std::span<const SensorSequence> sequences) {
    write_file_atomic(path, encode_tensor(sequences_to_tensor(sequences)));
}

std::vector<SensorSequence> load_sequences(const std::filesystem::path &path) {
    return tensor_to_sequences(decode_tensor(read_file(path)));
}

void save_dataset(const std::filesystem::path &dir, const Dataset &dataset) {
    std::filesystem::create_directories(dir);
    std::uint64_t feature_dim = 0;
    for (int i = 0; i < 3 && feature_dim == 0; ++i) {
        const auto &split = split_ref(dataset.splits, i);
        if (!split.empty()) feature_dim = static_cast<std::uint64_t>(split.front().tokens.cols());
    }
    json manifest = {
        {"format", "comfort-dataset"},
        {"version", 1},
        {"name", dataset.name},
        {"feature_dim", feature_dim},
        {"tokens_per_sequence", kTokensPerSequence},
        {"classes", dataset.class_names},
        {"healthy_class", dataset.healthy_class},
        {"provenance", dataset.splits.provenance},
    };
    for (int i = 0; i < 3; ++i) {
        const auto &split = split_ref(dataset.splits, i);
        const std::string file = std::string(kSplitNames[i]) + ".cmft";
        Tensor t = sequences_to_tensor(split);
        if (split.empty()) t.dims[2] = feature_dim;
        write_file_atomic(dir / file, encode_tensor(t));
        json subjects = json::array();
        json labels = json::array();
        for (const auto &s : split) {
            subjects.push_back(s.subject);
            labels.push_back(s.label);
        }
        manifest["splits"][kSplitNames[i]] = {
            {"file", file}, {"count", split.size()}, {"subjects", subjects}, {"labels", labels}};
    }
    write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path &dir) {
    json manifest;
    try {
        manifest = json::parse(read_file(dir / "manifest.json"));
    } catch (const json::parse_error &e) {
        throw FormatError(std::string("dataset manifest: ") + e.what(), e.byte);
    }
    try {
        if (manifest.at("format") != "comfort-dataset") {
            throw FormatError("not a dataset manifest", 0);
        }
        if (manifest.at("version") != 1) {
            throw VersionError("unsupported dataset manifest version");
        }
        Dataset d;
        d.name = manifest.at("name").get<std::string>();
        d.class_names = manifest.at("classes").get<std::vector<std::string>>();
        d.healthy_class = manifest.at("healthy_class").get<int>();
        d.splits.provenance = manifest.at("provenance").get<std::vector<std::string>>();
        const auto feature_dim = manifest.at("feature_dim").get<std::uint64_t>();
        for (int i = 0; i < 3; ++i) {
            const auto &entry = manifest.at("splits").at(kSplitNames[i]);
            auto &split = split_ref(d.splits, i);
            const Tensor t = decode_tensor(read_file(dir / entry.at("file").get<std::string>()));
            if (t.dims.size() != 3 || t.dims[2] != feature_dim) {
                throw DimensionError(std::string("dataset split ") + kSplitNames[i] + " has the wrong feature dim");
            }
            split = tensor_to_sequences(t);
            const auto subjects = entry.at("subjects").get<std::vector<std::string>>();
            const auto labels = entry.at("labels").get<std::vector<int>>();
            if (subjects.size() != split.size() || labels.size() != split.size()) {
                throw ValidationError(std::string("dataset split ") + kSplitNames[i] +
                                      ": manifest and blob disagree on sequence count");
            }
            for (std::size_t j = 0; j < split.size(); ++j) {
                split[j].subject = subjects[j];
                split[j].label = labels[j];
                split[j].task = d.name;
            }
        }
        return d;
    } catch (const json::exception &e) {
        throw ValidationError(std::string("dataset manifest: ") + e.what());
    }
}

}  // namespace comfort
