// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <json.hpp>

#include "comfort/errors.h"
#include "comfort/library.h"

namespace comfort {
namespace {

constexpr const char *kIndexFile = "index.json";

}  // namespace

void validate_task_id(std::string_view task_id) {
    if (task_id.empty() || task_id.size() > 128) {
        throw ValidationError("task id must be 1 to 128 characters");
    }
    if (task_id == "." || task_id == "..") throw ValidationError("task id may not be '.' or '..'");
    for (char ch : task_id) {
        const bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') ||
                        ch == '.' || ch == '_' || ch == '-';
        if (!ok) throw ValidationError("task id '" + std::string(task_id) + "' contains an unsupported character");
    }
}

AdapterLibrary::AdapterLibrary(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create library directory " + dir_.string() + ": " + ec.message());
    if (!std::filesystem::exists(dir_ / kIndexFile)) write_index({});
}

std::vector<LibraryEntry> AdapterLibrary::read_index() const {
    const std::string text = read_file(dir_ / kIndexFile);
    try {
        const auto j = nlohmann::json::parse(text);
        if (j.at("format") != "comfort-library") throw FormatError("not a library index", 0);
        std::vector<LibraryEntry> out;
        for (const auto &e : j.at("tasks")) {
            LibraryEntry entry;
            entry.task_id = e.at("task").get<std::string>();
            entry.file = e.at("file").get<std::string>();
            entry.method = parse_method(e.at("method").get<std::string>());
            entry.rank = e.at("rank").get<int>();
            entry.class_names = e.at("classes").get<std::vector<std::string>>();
            out.push_back(std::move(entry));
        }
        return out;
    } catch (const nlohmann::json::exception &e) {
        throw FormatError(std::string("corrupt library index: ") + e.what(), 0);
    }
}

void AdapterLibrary::write_index(const std::vector<LibraryEntry> &entries) const {
    nlohmann::json tasks = nlohmann::json::array();
    for (const auto &e : entries) {
        tasks.push_back({{"task", e.task_id},
                         {"file", e.file},
                         {"method", std::string(method_name(e.method))},
                         {"rank", e.rank},
                         {"classes", e.class_names}});
    }
    const nlohmann::json j = {{"format", "comfort-library"}, {"version", 1}, {"tasks", tasks}};
    write_file_atomic(dir_ / kIndexFile, j.dump(2) + "\n");
}

void AdapterLibrary::add(const AdapterBundle &bundle, bool overwrite) {
    validate_task_id(bundle.task_id);
    auto entries = read_index();
    auto it = std::find_if(entries.begin(), entries.end(),
                           [&](const LibraryEntry &e) { return e.task_id == bundle.task_id; });
    if (it != entries.end() && !overwrite) {
        throw ValidationError("task '" + bundle.task_id + "' already exists in the library");
    }
    LibraryEntry entry{bundle.task_id, bundle.task_id + ".cmfb", bundle.method, bundle.rank,
                       bundle.metadata.class_names};
    // Bundle first, index second: a crash in between leaves an orphan file,
    // never an index entry without its payload.
    bundle_save(bundle, dir_ / entry.file);
    if (it != entries.end()) {
        *it = std::move(entry);
    } else {
        entries.push_back(std::move(entry));
    }
    write_index(entries);
}

AdapterBundle AdapterLibrary::get(std::string_view task_id) const {
    for (const auto &e : read_index()) {
        if (e.task_id == task_id) return bundle_load(dir_ / e.file);
    }
    throw NotFoundError("task '" + std::string(task_id) + "' is not in the library");
}

std::vector<LibraryEntry> AdapterLibrary::list() const { return read_index(); }

bool AdapterLibrary::contains(std::string_view task_id) const {
    const auto entries = read_index();
    return std::any_of(entries.begin(), entries.end(), [&](const LibraryEntry &e) { return e.task_id == task_id; });
}

void AdapterLibrary::remove(std::string_view task_id) {
    auto entries = read_index();
    auto it = std::find_if(entries.begin(), entries.end(), [&](const LibraryEntry &e) { return e.task_id == task_id; });
    if (it == entries.end()) throw NotFoundError("task '" + std::string(task_id) + "' is not in the library");
    const auto file = dir_ / it->file;
    entries.erase(it);
    write_index(entries);
    std::error_code ec;
    std::filesystem::remove(file, ec);
}

}  // namespace comfort
