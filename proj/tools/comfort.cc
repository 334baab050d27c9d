// SPDX-License-Identifier: Apache-2.0
//
// comfort: preprocessing, corpus synthesis, pre-training, per-task adapters,
// detection and reports from the command line.
//
// Exit codes: 0 ok, 1 usage, 2 data or format error, 3 numeric failure.
// Failures print one line to stderr: "error<TAB>kind<TAB>message".

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "comfort/checkpoint.h"
#include "comfort/errors.h"
#include "comfort/library.h"
#include "comfort/synth.h"
#include "comfort/trainer.h"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace comfort;

namespace {

constexpr const char *kToolVersion = "1.0.0";

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// --- run manifests --------------------------------------------------------------

struct Run {
    std::vector<std::string> argv;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    std::string started_at;
    json config = json::object();
    json inputs = json::object();
    json outputs = json::object();
    std::uint64_t seed = 0;

    Run() {
        const std::time_t now = std::time(nullptr);
        std::ostringstream s;
        s << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ");
        started_at = s.str();
    }

    json manifest(const std::string &command) const {
        return {{"command", command},
                {"argv", argv},
                {"config", config},
                {"seed", seed},
                {"inputs", inputs},
                {"outputs", outputs},
                {"tool_version", kToolVersion},
                {"started_at", started_at},
                {"wall_clock_seconds",
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()}};
    }
};

void write_manifest(const fs::path &path, const Run &run, const std::string &command) {
    write_file_atomic(path, run.manifest(command).dump(2) + "\n");
}

// Writes a directory next to its destination and renames it into place, so a
// failed command never leaves a half-written dataset behind.
template <class F>
void publish_dir(const fs::path &dir, F &&fill) {
    const fs::path parent = dir.has_parent_path() ? dir.parent_path() : fs::path(".");
    fs::create_directories(parent);
    const fs::path tmp = parent / ("." + dir.filename().string() + ".tmp");
    fs::remove_all(tmp);
    try {
        fill(tmp);
        if (fs::exists(dir)) fs::remove_all(dir);
        fs::rename(tmp, dir);
    } catch (...) {
        fs::remove_all(tmp);
        throw;
    }
}

// "1,2,4" or "a..b" (step 0.1) or "a..b:step".
std::vector<double> parse_values(const std::string &text) {
    std::vector<double> out;
    const auto dots = text.find("..");
    try {
        if (dots != std::string::npos) {
            const double lo = std::stod(text.substr(0, dots));
            std::string rest = text.substr(dots + 2);
            double step = 0.1;
            if (const auto colon = rest.find(':'); colon != std::string::npos) {
                step = std::stod(rest.substr(colon + 1));
                rest = rest.substr(0, colon);
            }
            const double hi = std::stod(rest);
            if (!(step > 0.0) || hi < lo) throw UsageError("bad range " + text);
            for (int i = 0;; ++i) {
                const double v = std::round((lo + i * step) * 1e9) / 1e9;
                if (v > hi + 1e-9) break;
                out.push_back(v);
            }
        } else {
            std::stringstream ss(text);
            std::string item;
            while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
        }
    } catch (const std::logic_error &) {
        throw UsageError("cannot parse values '" + text + "'");
    }
    if (out.empty()) throw UsageError("no values in '" + text + "'");
    return out;
}

std::string format_double(double v) {
    std::ostringstream s;
    s << std::setprecision(6) << v;
    return s.str();
}

EncoderWeights load_w0(const fs::path &path) {
    EncoderWeights w = load_checkpoint(path);
    // The reconstruction head only serves pre-training.
    w.head.resize(0, 0);
    w.head_bias.resize(0, 0);
    return w;
}

std::string metrics_line(const Metrics &m) {
    std::ostringstream s;
    s << "accuracy\t" << format_double(m.accuracy) << "\tf1\t" << (m.f1 ? format_double(*m.f1) : "-") << "\tn\t"
      << m.count;
    return s.str();
}

// --- commands -----------------------------------------------------------------------

struct PreprocessArgs {
    std::string in, out;
    int pca_dim = 128;
    bool no_clean = false;
    std::uint64_t seed = 0;
};

void cmd_preprocess(const PreprocessArgs &a, Run &run) {
    run.seed = a.seed;
    run.config = {{"pca_dim", a.pca_dim}, {"clean", !a.no_clean}};
    run.inputs = {{"manifest", a.in}};
    run.outputs = {{"dataset", a.out}};
    const RawCorpus corpus = load_raw_corpus(a.in);
    PreprocessOptions opts;
    opts.pca_dim = a.pca_dim;
    opts.clean = !a.no_clean;
    opts.seed = a.seed;
    const Dataset d = preprocess(corpus, opts);
    publish_dir(a.out, [&](const fs::path &tmp) {
        save_dataset(tmp, d);
        write_manifest(tmp / "run.json", run, "preprocess");
    });
    std::cout << "dataset\t" << a.out << "\ttrain\t" << d.splits.train.size() << "\tvalidation\t"
              << d.splits.validation.size() << "\ttest\t" << d.splits.test.size() << "\n";
}

struct SynthArgs {
    std::string out, from, name;
    std::size_t n = 100000;
    int dim = 128;
    int components = 4;
    int classes = 2;
    double sep = 3.0;
    std::size_t per_class = 200;
    std::size_t subjects = 4;
    double stddev = 0.3;
    std::uint64_t healthy_seed = 1;
    std::uint64_t seed = 0;
};

GmmModel healthy_model(const SynthArgs &a, Run &run) {
    if (a.from.empty()) {
        run.config["healthy"] = {{"dim", a.dim}, {"components", a.components}, {"stddev", a.stddev},
                                 {"seed", a.healthy_seed}};
        return reference_healthy_model(a.dim, a.components, a.healthy_seed, a.stddev);
    }
    // Fit the mixture to the healthy sequences of a preprocessed dataset.
    const Dataset d = load_dataset(a.from);
    std::vector<SensorSequence> healthy;
    for (const auto &s : d.splits.train)
        if (s.label == d.healthy_class) healthy.push_back(s);
    if (healthy.empty()) throw ValidationError("synth: no healthy training sequences in " + a.from);
    run.inputs["fit_from"] = a.from;
    run.config["healthy"] = {{"components", a.components}, {"fit_seed", a.healthy_seed}};
    return gmm_fit(stack_instances(healthy), a.components, a.healthy_seed).model;
}

void cmd_synth_corpus(const SynthArgs &a, Run &run) {
    run.seed = a.seed;
    run.config["n"] = a.n;
    run.outputs = {{"dataset", a.out}};
    const GmmModel g = healthy_model(a, run);
    Dataset d;
    d.name = a.name.empty() ? "corpus" : a.name;
    d.class_names = {"healthy"};
    d.splits.train = instances_to_sequences(gmm_sample(g, a.n, a.seed), "synthetic", 100);
    for (auto &s : d.splits.train) s.label = 0;
    d.splits.provenance.push_back("sampled " + std::to_string(a.n) + " instances from a " +
                                  std::to_string(g.components()) + "-component mixture");
    publish_dir(a.out, [&](const fs::path &tmp) {
        save_dataset(tmp, d);
        write_manifest(tmp / "run.json", run, "synth corpus");
    });
    std::cout << "corpus\t" << a.out << "\tsequences\t" << d.splits.train.size() << "\n";
}

void cmd_synth_task(const SynthArgs &a, Run &run) {
    run.seed = a.seed;
    run.config.update({{"classes", a.classes}, {"sep", a.sep}, {"per_class", a.per_class}, {"subjects", a.subjects}});
    run.outputs = {{"dataset", a.out}};
    const GmmModel g = healthy_model(a, run);
    const std::string name = a.name.empty() ? "task" : a.name;
    auto spec = separated_task_spec(name, g, a.classes, a.sep, a.per_class, a.seed);
    spec.subjects_per_class = a.subjects;
    Dataset d;
    d.name = name;
    d.class_names = spec.class_names;
    d.healthy_class = 0;
    d.splits = chronological_split(make_synthetic_task(spec));
    d.splits.provenance.push_back("synthetic task: " + std::to_string(a.classes) + " classes at " +
                                  format_double(a.sep) + " sigma, nominal Bayes accuracy " +
                                  format_double(spec.nominal_bayes_accuracy));
    publish_dir(a.out, [&](const fs::path &tmp) {
        save_dataset(tmp, d);
        write_manifest(tmp / "run.json", run, "synth task");
    });
    std::cout << "task\t" << a.out << "\ttrain\t" << d.splits.train.size() << "\tvalidation\t"
              << d.splits.validation.size() << "\ttest\t" << d.splits.test.size() << "\n";
}

struct TrainArgs {
    std::string data, out, w0, lib, task, method = "lora";
    int epochs = -1;
    double stop_loss = 0.001;
    double lr = 0.005;
    int batch = 128;
    int rank = 8;
    double alpha = 8.0;
    int chain = 3;
    double fraction = 1.0;
    bool all_positions = false;
    bool learned_positions = false;
    int heads = 2;
    int layers = 2;
    bool overwrite = false;
    std::uint64_t seed = 0;
    std::string values;
};

TrainConfig train_config(const TrainArgs &a) {
    TrainConfig t;
    t.lr = a.lr;
    t.batch_size = a.batch;
    t.stop_loss = a.stop_loss;
    t.seed = a.seed;
    t.fraction = a.fraction;
    t.masked_only = !a.all_positions;
    t.adapter.rank = a.rank;
    t.adapter.alpha = a.alpha;
    t.adapter.chain_length = a.chain;
    if (a.epochs > 0) {
        t.pretrain_epochs = a.epochs;
        t.finetune_epochs = a.epochs;
    }
    return t;
}

json train_json(const TrainConfig &t) {
    return {{"lr", t.lr},
            {"batch_size", t.batch_size},
            {"pretrain_epochs", t.pretrain_epochs},
            {"stop_loss", t.stop_loss},
            {"finetune_epochs", t.finetune_epochs},
            {"fraction", t.fraction},
            {"masked_only", t.masked_only},
            {"rank", t.adapter.rank},
            {"alpha", t.adapter.alpha},
            {"chain_length", t.adapter.chain_length}};
}

void cmd_pretrain(const TrainArgs &a, Run &run) {
    const Dataset d = load_dataset(a.data);
    std::vector<SensorSequence> corpus = d.splits.train;
    if (corpus.empty()) throw ValidationError("pretrain: " + a.data + " has no training sequences");
    EncoderConfig config;
    config.hidden = static_cast<int>(corpus.front().tokens.cols());
    config.ffn = 4 * config.hidden;
    config.heads = a.heads;
    config.layers = a.layers;
    config.positional = a.learned_positions ? PositionalEncoding::kLearned : PositionalEncoding::kSinusoidal;
    const TrainConfig t = train_config(a);
    run.seed = a.seed;
    run.config = train_json(t);
    run.config["encoder"] = {{"layers", config.layers}, {"hidden", config.hidden}, {"heads", config.heads},
                             {"ffn", config.ffn}, {"positional", a.learned_positions ? "learned" : "sinusoidal"}};
    run.inputs = {{"data", a.data}};
    run.outputs = {{"w0", a.out}, {"metrics", a.out + ".metrics.tsv"}};

    const PretrainResult r = pretrain(config, corpus, t);
    save_checkpoint(a.out, r.weights);
    write_file_atomic(a.out + ".metrics.tsv", format_metrics_log(r.log));
    run.config["epochs_run"] = r.epochs;
    run.config["converged"] = r.converged;
    write_manifest(a.out + ".manifest.json", run, "pretrain");
    std::cout << "w0\t" << a.out << "\tepochs\t" << r.epochs << "\tinitial_loss\t" << format_double(r.initial_loss)
              << "\tfinal_loss\t" << format_double(r.final_loss) << "\tconverged\t" << (r.converged ? "yes" : "no")
              << "\n";
}

void cmd_finetune(const TrainArgs &a, Run &run) {
    if (a.task.empty()) throw UsageError("finetune needs --task");
    validate_task_id(a.task);
    const EncoderWeights w0 = load_w0(a.w0);
    Dataset d = load_dataset(a.data);
    d.name = a.task;
    const AdapterMethod method = parse_method(a.method);
    const TrainConfig t = train_config(a);
    AdapterLibrary lib(a.lib);
    if (lib.contains(a.task) && !a.overwrite) {
        throw ValidationError("task " + a.task + " already in the library (use --overwrite)");
    }
    run.seed = a.seed;
    run.config = train_json(t);
    run.config["method"] = a.method;
    run.inputs = {{"w0", a.w0}, {"data", a.data}};
    const fs::path metrics = fs::path(a.lib) / (a.task + ".metrics.tsv");
    run.outputs = {{"library", a.lib}, {"task", a.task}, {"metrics", metrics.string()}};

    FinetuneResult r = finetune(w0, d, method, t);
    r.bundle.metadata.dataset_fingerprint = a.data;
    const Metrics m = d.splits.test.empty() ? Metrics{} : evaluate(w0, r.bundle, d.splits.test, d.healthy_class);
    lib.add(r.bundle, a.overwrite);
    write_file_atomic(metrics, format_metrics_log(r.log));
    run.config["best_epoch"] = r.best_epoch;
    run.config["train_sequences"] = r.train_sequences;
    write_manifest(fs::path(a.lib) / (a.task + ".manifest.json"), run, "finetune");
    std::cout << "task\t" << a.task << "\tmethod\t" << a.method << "\tbest_epoch\t" << r.best_epoch << "\t"
              << metrics_line(m) << "\n";
}

struct DetectArgs {
    std::string w0, lib, task, in, out;
};

void cmd_detect(const DetectArgs &a, Run &run) {
    run.inputs = {{"w0", a.w0}, {"library", a.lib}, {"task", a.task}, {"sequences", a.in}};
    run.outputs = {{"predictions", a.out}};
    const EncoderWeights w0 = load_w0(a.w0);
    const AdapterLibrary lib(a.lib);
    const AdapterBundle bundle = lib.get(a.task);
    const auto seqs = load_sequences(a.in);
    const auto preds = predict(w0, bundle, seqs);
    std::ostringstream s;
    s << "index\tclass\tlabel";
    for (const auto &name : bundle.metadata.class_names) s << "\tp_" << name;
    s << "\n" << std::setprecision(9);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto &p = preds[i];
        s << i << "\t" << p.label << "\t"
          << (static_cast<std::size_t>(p.label) < bundle.metadata.class_names.size()
                  ? bundle.metadata.class_names[static_cast<std::size_t>(p.label)]
                  : std::to_string(p.label));
        for (double v : p.probabilities) s << "\t" << v;
        s << "\n";
    }
    write_file_atomic(a.out, s.str());
    write_manifest(a.out + ".manifest.json", run, "detect");
    std::cout << "predictions\t" << a.out << "\tsequences\t" << preds.size() << "\n";
}

void cmd_library_list(const std::string &dir) {
    const AdapterLibrary lib(dir);
    std::cout << "task\tmethod\trank\tclasses\tfile\n";
    for (const auto &e : lib.list()) {
        std::string classes;
        for (const auto &c : e.class_names) classes += (classes.empty() ? "" : ",") + c;
        std::cout << e.task_id << "\t" << method_name(e.method) << "\t" << e.rank << "\t" << classes << "\t" << e.file
                  << "\n";
    }
}

void cmd_report_memory(const std::string &w0_path, const std::string &dir, int project, const std::string &out,
                       Run &run) {
    run.inputs = {{"w0", w0_path}, {"library", dir}};
    run.config = {{"project", project}};
    const EncoderWeights w0 = load_w0(w0_path);
    const AdapterLibrary lib(dir);
    std::vector<AdapterBundle> bundles;
    for (const auto &e : lib.list()) bundles.push_back(lib.get(e.task_id));
    const std::string text = format_memory_report(memory_report(w0.config, bundles, project));
    if (out.empty()) {
        std::cout << text;
    } else {
        run.outputs = {{"report", out}};
        write_file_atomic(out, text);
        write_manifest(out + ".manifest.json", run, "report-memory");
    }
}

void cmd_sweep(const std::string &kind, const TrainArgs &a, const std::string &out, Run &run) {
    const EncoderWeights w0 = load_w0(a.w0);
    const Dataset d = load_dataset(a.data);
    const auto values = parse_values(a.values);
    const AdapterMethod method = parse_method(a.method);
    run.seed = a.seed;
    run.config = train_json(train_config(a));
    run.config["sweep"] = kind;
    run.config["values"] = values;
    run.config["method"] = a.method;
    run.inputs = {{"w0", a.w0}, {"data", a.data}};

    std::ostringstream table;
    table << kind << "\tmethod\taccuracy\tf1\ttrain_sequences\tbundle_parameters\n";
    for (double v : values) {
        TrainArgs point = a;
        if (kind == "rank") {
            if (v < 1.0 || v != std::floor(v)) throw UsageError("ranks must be positive integers");
            point.rank = static_cast<int>(v);
        } else {
            point.fraction = v;
        }
        Dataset task = d;
        task.name = d.name;
        const FinetuneResult r = finetune(w0, task, method, train_config(point));
        const Metrics m = evaluate(w0, r.bundle, d.splits.test, d.healthy_class);
        table << format_double(v) << "\t" << a.method << "\t" << format_double(m.accuracy) << "\t"
              << (m.f1 ? format_double(*m.f1) : "-") << "\t" << r.train_sequences << "\t"
              << bundle_parameter_count(w0.config, r.bundle) << "\n";
    }
    if (out.empty()) {
        std::cout << table.str();
    } else {
        run.outputs = {{"table", out}};
        write_file_atomic(out, table.str());
        write_manifest(out + ".manifest.json", run, "sweep " + kind);
    }
}

// --- error reporting --------------------------------------------------------------------

int report(const char *kind, const std::string &message, int code) {
    std::string flat = message;
    for (char &c : flat)
        if (c == '\n' || c == '\t') c = ' ';
    std::cerr << "error\t" << kind << "\t" << flat << "\n";
    return code;
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"Adapter-based continual learning for wearable sensor data"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);
    Run run;
    run.argv.assign(argv, argv + argc);

    PreprocessArgs pre;
    auto *c_pre = app.add_subcommand("preprocess", "Window, split, scale, project and clean a raw corpus");
    c_pre->add_option("--in", pre.in, "Raw corpus manifest (JSON)")->required()->check(CLI::ExistingFile);
    c_pre->add_option("--out", pre.out, "Output dataset directory")->required();
    c_pre->add_option("--pca-dim", pre.pca_dim, "Principal components kept")->check(CLI::PositiveNumber);
    c_pre->add_flag("--no-clean", pre.no_clean, "Skip CTRL cleaning");
    c_pre->add_option("--seed", pre.seed);

    SynthArgs syn;
    auto *c_syn = app.add_subcommand("synth", "Synthetic corpora and tasks");
    c_syn->require_subcommand(1);
    auto add_healthy = [&](CLI::App *c) {
        c->add_option("--out", syn.out, "Output dataset directory")->required();
        c->add_option("--dim", syn.dim, "Feature dimension")->check(CLI::PositiveNumber);
        c->add_option("--components", syn.components, "Mixture components")->check(CLI::PositiveNumber);
        c->add_option("--stddev", syn.stddev, "Within-component standard deviation");
        c->add_option("--healthy-seed", syn.healthy_seed, "Seed of the healthy mixture");
        c->add_option("--from", syn.from, "Fit the healthy mixture to this dataset's healthy training data");
        c->add_option("--name", syn.name);
        c->add_option("--seed", syn.seed);
    };
    auto *c_corpus = c_syn->add_subcommand("corpus", "Healthy pre-training corpus");
    c_corpus->add_option("--n", syn.n, "Instances (1-second tokens) to draw")->check(CLI::PositiveNumber);
    add_healthy(c_corpus);
    auto *c_task = c_syn->add_subcommand("task", "Labelled task with separated classes");
    c_task->add_option("--classes", syn.classes)->check(CLI::Range(2, 1 << 16));
    c_task->add_option("--sep", syn.sep, "Class separation in healthy-mixture standard deviations");
    c_task->add_option("--per-class", syn.per_class)->check(CLI::PositiveNumber);
    c_task->add_option("--subjects", syn.subjects, "Subjects per class")->check(CLI::PositiveNumber);
    add_healthy(c_task);

    TrainArgs tr;
    auto *c_pt = app.add_subcommand("pretrain", "Masked data modelling pre-training of W0");
    c_pt->add_option("--data", tr.data, "Dataset directory (train split is the corpus)")->required();
    c_pt->add_option("--out", tr.out, "Checkpoint path")->required();
    c_pt->add_option("--epochs", tr.epochs, "Maximum epochs (default 1000)");
    c_pt->add_option("--stop-loss", tr.stop_loss);
    c_pt->add_option("--lr", tr.lr);
    c_pt->add_option("--batch", tr.batch);
    c_pt->add_option("--heads", tr.heads);
    c_pt->add_option("--layers", tr.layers);
    c_pt->add_flag("--all-positions", tr.all_positions, "Reconstruction loss over every entry");
    c_pt->add_flag("--learned-positions", tr.learned_positions, "Learned positional table");
    c_pt->add_option("--seed", tr.seed);

    auto add_finetune = [&](CLI::App *c) {
        c->add_option("--w0", tr.w0, "Foundation checkpoint")->required()->check(CLI::ExistingFile);
        c->add_option("--data", tr.data, "Task dataset directory")->required();
        c->add_option("--method", tr.method, "lora|dora|cola|full|scratch");
        c->add_option("--rank", tr.rank)->check(CLI::PositiveNumber);
        c->add_option("--alpha", tr.alpha);
        c->add_option("--chain", tr.chain)->check(CLI::PositiveNumber);
        c->add_option("--fraction", tr.fraction);
        c->add_option("--epochs", tr.epochs, "Fine-tuning epochs (default 300)");
        c->add_option("--lr", tr.lr);
        c->add_option("--batch", tr.batch);
        c->add_option("--seed", tr.seed);
    };
    auto *c_ft = app.add_subcommand("finetune", "Train a task bundle and add it to a library");
    add_finetune(c_ft);
    c_ft->add_option("--lib", tr.lib, "Library directory")->required();
    c_ft->add_option("--task", tr.task, "Task id")->required();
    c_ft->add_flag("--overwrite", tr.overwrite, "Replace an existing task");

    DetectArgs det;
    auto *c_det = app.add_subcommand("detect", "Classify sequences with a task from the library");
    c_det->add_option("--w0", det.w0)->required()->check(CLI::ExistingFile);
    c_det->add_option("--lib", det.lib)->required()->check(CLI::ExistingDirectory);
    c_det->add_option("--task", det.task)->required();
    c_det->add_option("--in", det.in, "Sequence tensor [n, 15, D]")->required()->check(CLI::ExistingFile);
    c_det->add_option("--out", det.out, "Predictions (TSV)")->required();

    std::string lib_dir, remove_task;
    auto *c_lib = app.add_subcommand("library", "Inspect or edit an adapter library");
    c_lib->require_subcommand(1);
    auto *c_list = c_lib->add_subcommand("list", "List tasks");
    c_list->add_option("--lib", lib_dir)->required()->check(CLI::ExistingDirectory);
    auto *c_rm = c_lib->add_subcommand("remove", "Remove a task");
    c_rm->add_option("--lib", lib_dir)->required()->check(CLI::ExistingDirectory);
    c_rm->add_option("--task", remove_task)->required();

    std::string report_w0, report_out;
    int project = 10;
    auto *c_mem = app.add_subcommand("report-memory", "Storage of the library against per-task alternatives");
    c_mem->add_option("--w0", report_w0)->required()->check(CLI::ExistingFile);
    c_mem->add_option("--lib", lib_dir)->required()->check(CLI::ExistingDirectory);
    c_mem->add_option("--project", project, "Tasks in the projection")->check(CLI::NonNegativeNumber);
    c_mem->add_option("--out", report_out, "Write the report here instead of stdout");

    std::string sweep_out;
    auto *c_sweep = app.add_subcommand("sweep", "Accuracy across ranks or training-data fractions");
    c_sweep->require_subcommand(1);
    auto *c_rank = c_sweep->add_subcommand("rank", "Sweep the adapter rank");
    auto *c_frac = c_sweep->add_subcommand("fraction", "Sweep the training-data fraction");
    for (auto *c : {c_rank, c_frac}) {
        add_finetune(c);
        c->add_option("--values", tr.values, "Comma list or a..b[:step]")->required();
        c->add_option("--out", sweep_out, "Write the table here instead of stdout");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        return report("usage", e.what(), 1);
    }

    try {
        if (c_pre->parsed()) cmd_preprocess(pre, run);
        else if (c_corpus->parsed()) cmd_synth_corpus(syn, run);
        else if (c_task->parsed()) cmd_synth_task(syn, run);
        else if (c_pt->parsed()) cmd_pretrain(tr, run);
        else if (c_ft->parsed()) cmd_finetune(tr, run);
        else if (c_det->parsed()) cmd_detect(det, run);
        else if (c_list->parsed()) cmd_library_list(lib_dir);
        else if (c_rm->parsed()) AdapterLibrary(lib_dir).remove(remove_task);
        else if (c_mem->parsed()) cmd_report_memory(report_w0, lib_dir, project, report_out, run);
        else if (c_rank->parsed()) cmd_sweep("rank", tr, sweep_out, run);
        else if (c_frac->parsed()) cmd_sweep("fraction", tr, sweep_out, run);
    } catch (const UsageError &e) {
        return report("usage", e.what(), 1);
    } catch (const NumericError &e) {
        return report("numeric", e.what(), 3);
    } catch (const FormatError &e) {
        return report("format", e.what(), 2);
    } catch (const VersionError &e) {
        return report("version", e.what(), 2);
    } catch (const NotFoundError &e) {
        return report("not_found", e.what(), 2);
    } catch (const DimensionError &e) {
        return report("dimension", e.what(), 2);
    } catch (const ValidationError &e) {
        return report("validation", e.what(), 2);
    } catch (const IoError &e) {
        return report("io", e.what(), 2);
    } catch (const Error &e) {
        return report("state", e.what(), 2);
    } catch (const std::filesystem::filesystem_error &e) {
        return report("io", e.what(), 2);
    }
    return 0;
}
