// SPDX-License-Identifier: Apache-2.0

#include <iomanip>
#include <sstream>

#include "comfort/errors.h"
#include "comfort/library.h"

namespace comfort {
namespace {

// Rows and columns of "layerN.<role>" from the config alone.
std::pair<std::size_t, std::size_t> target_shape(const EncoderConfig &config, const std::string &target) {
    const auto h = static_cast<std::size_t>(config.hidden);
    const auto f = static_cast<std::size_t>(config.ffn);
    if (target.ends_with(".ffn_in")) return {h, f};
    if (target.ends_with(".ffn_out")) return {f, h};
    for (const char *role : {".query", ".key", ".value", ".output"}) {
        if (target.ends_with(role)) return {h, h};
    }
    throw ValidationError("memory accounting: unknown target '" + target + "'");
}

MemoryItem item(std::string label, std::size_t parameters) {
    return {std::move(label), parameters, parameters_to_kib(parameters)};
}

void add(StrategyTotal &total, MemoryItem it) {
    total.parameters += it.parameters;
    total.items.push_back(std::move(it));
    total.kib = parameters_to_kib(total.parameters);
}

std::string task_label(const AdapterBundle &b, std::size_t i) {
    return b.task_id.empty() ? "task" + std::to_string(i + 1) : b.task_id;
}

}  // namespace

double parameters_to_kib(std::size_t parameters) { return static_cast<double>(parameters) * 4.0 / 1024.0; }

std::size_t encoder_parameter_count(const EncoderConfig &config, bool include_head) {
    config.validate();
    const auto h = static_cast<std::size_t>(config.hidden);
    const auto f = static_cast<std::size_t>(config.ffn);
    const std::size_t attention = 4 * (h * h + h);
    const std::size_t ffn = (h * f + f) + (f * h + h);
    const std::size_t norms = 4 * h;
    std::size_t n = static_cast<std::size_t>(config.layers) * (attention + ffn + norms);
    if (config.positional == PositionalEncoding::kLearned) n += static_cast<std::size_t>(config.seq_len) * h;
    if (include_head) n += h * h + h;
    return n;
}

std::size_t classifier_parameter_count(int input, int classes, int hidden1, int hidden2) {
    const auto i = static_cast<std::size_t>(input);
    const auto a = static_cast<std::size_t>(hidden1);
    const auto b = static_cast<std::size_t>(hidden2);
    const auto c = static_cast<std::size_t>(classes);
    return (i * a + a) + (a * b + b) + (b * c + c);
}

std::size_t bundle_parameter_count(const EncoderConfig &config, const AdapterBundle &bundle) {
    const Classifier &c = bundle.classifier;
    std::size_t n = classifier_parameter_count(config.hidden, c.classes(), static_cast<int>(c.hidden1.cols()),
                                               static_cast<int>(c.hidden2.cols()));
    if (!is_low_rank(bundle.method)) return n + encoder_parameter_count(config, false);
    const auto r = static_cast<std::size_t>(bundle.rank);
    for (const auto &t : bundle.targets) {
        const auto [d, k] = target_shape(config, t.target);
        n += t.stages.size() * r * (d + k);
        if (bundle.method == AdapterMethod::kDora) n += k;
    }
    return n;
}

MemoryReport memory_report(const EncoderConfig &config, std::span<const AdapterBundle> bundles, int projected_tasks,
                           bool include_head) {
    MemoryReport r;
    const std::size_t encoder = encoder_parameter_count(config, include_head);
    r.foundation = item("W0", encoder);
    r.scratch.strategy = "scratch";
    r.full.strategy = "full";
    r.comfort.strategy = "comfort";
    add(r.full, r.foundation);
    add(r.comfort, r.foundation);

    std::size_t model_sum = 0;
    std::size_t bundle_sum = 0;
    for (std::size_t i = 0; i < bundles.size(); ++i) {
        const AdapterBundle &b = bundles[i];
        const std::string label = task_label(b, i);
        const Classifier &c = b.classifier;
        const std::size_t head = classifier_parameter_count(config.hidden, c.classes(),
                                                            static_cast<int>(c.hidden1.cols()),
                                                            static_cast<int>(c.hidden2.cols()));
        const std::size_t model = encoder + head;
        const std::size_t payload = bundle_parameter_count(config, b);
        add(r.scratch, item(label + " model", model));
        add(r.full, item(label + " delta", model));
        add(r.comfort, item(label + " bundle", payload));
        model_sum += model;
        bundle_sum += payload;
    }
    if (r.scratch.parameters > 0) {
        r.savings_vs_scratch = 1.0 - static_cast<double>(r.comfort.parameters) / static_cast<double>(r.scratch.parameters);
        r.savings_vs_full = 1.0 - static_cast<double>(r.comfort.parameters) / static_cast<double>(r.full.parameters);
    }
    if (!bundles.empty()) {
        const double n = static_cast<double>(bundles.size());
        const double mean_model = parameters_to_kib(model_sum) / n;
        const double mean_bundle = parameters_to_kib(bundle_sum) / n;
        for (int t = 1; t <= projected_tasks; ++t) {
            r.projection.push_back({t, t * mean_model, r.foundation.kib + t * mean_model,
                                    r.foundation.kib + t * mean_bundle});
        }
    }
    return r;
}

std::string format_memory_report(const MemoryReport &report) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(1);
    out << "strategy\titem\tparameters\tKB\n";
    for (const StrategyTotal *s : {&report.scratch, &report.full, &report.comfort}) {
        for (const auto &it : s->items) {
            out << s->strategy << '\t' << it.label << '\t' << it.parameters << '\t' << it.kib << '\n';
        }
        out << s->strategy << "\ttotal\t" << s->parameters << '\t' << s->kib << '\n';
    }
    out << std::setprecision(4);
    out << "savings_vs_scratch\t" << report.savings_vs_scratch << '\n';
    out << "savings_vs_full\t" << report.savings_vs_full << '\n';
    if (!report.projection.empty()) {
        out << std::setprecision(1);
        out << "\ntasks\tscratch_KB\tfull_KB\tcomfort_KB\n";
        for (const auto &row : report.projection) {
            out << row.tasks << '\t' << row.scratch_kib << '\t' << row.full_kib << '\t' << row.comfort_kib << '\n';
        }
    }
    return out.str();
}

}  // namespace comfort
