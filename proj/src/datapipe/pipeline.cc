// SPDX-License-Identifier: Apache-2.0

#include <json.hpp>

#include <sstream>

#include "comfort/datapipe.h"
#include "comfort/errors.h"

namespace comfort {
namespace {

using json = nlohmann::json;

std::vector<double> read_samples(const std::filesystem::path &path) {
    std::istringstream in(read_file(path));
    std::vector<double> out;
    double v = 0.0;
    while (in >> v) out.push_back(v);
    if (!in.eof()) throw FormatError("sample file " + path.string() + ": not a number", static_cast<std::uint64_t>(in.tellg()));
    return out;
}

std::string describe(const char *step, std::size_t before, std::size_t after) {
    return std::string(step) + ": " + std::to_string(before) + " -> " + std::to_string(after) + " sequences";
}

}  // namespace

RawCorpus load_raw_corpus(const std::filesystem::path &manifest_path) {
    json m;
    try {
        m = json::parse(read_file(manifest_path));
    } catch (const json::parse_error &e) {
        throw FormatError(std::string("raw manifest: ") + e.what(), e.byte);
    }
    const auto base = manifest_path.parent_path();
    try {
        if (m.value("format", "") != "comfort-raw") throw FormatError("raw manifest: format must be comfort-raw", 0);
        RawCorpus c;
        c.name = m.at("name").get<std::string>();
        c.class_names = m.at("classes").get<std::vector<std::string>>();
        c.healthy_class = m.value("healthy_class", 0);
        if (m.contains("layout")) {
            for (const auto &ch : m.at("layout")) {
                c.layout.push_back({ch.at("channel").get<std::string>(), ch.at("rate_hz").get<int>()});
            }
        } else {
            c.layout = standard_channel_layout();
        }
        for (const auto &r : m.at("recordings")) {
            RawRecording rec;
            rec.subject = r.at("subject").get<std::string>();
            rec.label = r.at("label").get<int>();
            if (rec.label < 0 || rec.label >= static_cast<int>(c.class_names.size())) {
                throw ValidationError("raw manifest: recording of " + rec.subject + " has label outside the classes");
            }
            for (const auto &s : r.at("streams")) {
                Stream st;
                st.channel = s.at("channel").get<std::string>();
                st.rate_hz = s.at("rate_hz").get<int>();
                st.start_seconds = s.value("start_seconds", 0.0);
                st.samples = s.contains("file") ? read_samples(base / s.at("file").get<std::string>())
                                                : s.at("samples").get<std::vector<double>>();
                rec.streams.push_back(std::move(st));
            }
            c.recordings.push_back(std::move(rec));
        }
        return c;
    } catch (const json::exception &e) {
        throw FormatError(std::string("raw manifest: ") + e.what(), 0);
    }
}

Dataset preprocess(const RawCorpus &corpus, const PreprocessOptions &options) {
    std::vector<SensorSequence> windows;
    for (const auto &rec : corpus.recordings) {
        auto w = align_and_window(rec, corpus.layout);
        windows.insert(windows.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
    }
    if (windows.empty()) throw ValidationError("preprocess: no recording spans a full 15-second window");

    Dataset d;
    d.name = corpus.name;
    d.class_names = corpus.class_names;
    d.healthy_class = corpus.healthy_class;
    d.splits = chronological_split(windows, options.fractions);
    auto &prov = d.splits.provenance;
    prov.push_back("windowed " + std::to_string(corpus.recordings.size()) + " recordings into " +
                   std::to_string(windows.size()) + " sequences of " + std::to_string(kTokensPerSequence) + "x" +
                   std::to_string(feature_dim(corpus.layout)));
    prov.push_back("split per subject: train " + std::to_string(d.splits.train.size()) + ", validation " +
                   std::to_string(d.splits.validation.size()) + ", test " + std::to_string(d.splits.test.size()));
    if (d.splits.train.empty()) throw ValidationError("preprocess: the training split is empty");

    const MinMaxScaler scaler = minmax_fit(d.splits.train);
    for (auto *split : {&d.splits.train, &d.splits.validation, &d.splits.test}) *split = minmax_apply(scaler, *split);
    prov.push_back("min-max fitted on train, applied to all splits with clipping");

    const PcaModel pca = pca_fit(d.splits.train, options.pca_dim);
    for (auto *split : {&d.splits.train, &d.splits.validation, &d.splits.test}) *split = pca_apply(pca, *split);
    std::ostringstream pca_note;
    pca_note << "pca fitted on train: k=" << pca.k << ", explained variance " << pca.explained_variance_ratio;
    prov.push_back(pca_note.str());

    if (options.clean) {
        const char *names[] = {"train", "validation", "test"};
        std::vector<SensorSequence> *splits[] = {&d.splits.train, &d.splits.validation, &d.splits.test};
        const Rng root(options.seed);
        for (int i = 0; i < 3; ++i) {
            const std::size_t before = splits[i]->size();
            CtrlResult r = ctrl_clean(*splits[i], options.ctrl, root.fork(static_cast<std::uint64_t>(i)).seed());
            std::string note = describe((std::string("ctrl ") + names[i]).c_str(), before, r.clean.size());
            if (r.degenerate) note += " (single loss regime, nothing rejected)";
            if (r.warning) note += " (too small to clean)";
            prov.push_back(note);
            *splits[i] = std::move(r.clean);
        }
    } else {
        prov.push_back("ctrl cleaning skipped");
    }
    return d;
}

}  // namespace comfort
