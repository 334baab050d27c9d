// SPDX-License-Identifier: Apache-2.0
//
// The adapter library: one bundle file per task plus an index, task
// hot-swap over a shared frozen W0, and memory accounting.
//
// Bundle file layout (little-endian):
//
//   "CMFB", u32 version, u32 method, u32 rank, f64 alpha,
//   u32 chain length, u32 active stage,
//   str task id, str metadata (JSON: class names, healthy class, seed,
//   dataset fingerprint),
//   u32 has-dense; when set, the encoder config as in checkpoints,
//   u32 target count; per target: str name, u32 stage count,
//   u32 tensor count; per tensor: str name, CMFT blob.
//
// `str` is a u32 byte length followed by the bytes. Low-rank bundles store
// only their factors (and DoRA magnitudes) plus the classifier; never W0.

#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "comfort/encoder.h"
#include "comfort/peft.h"

namespace comfort {

inline constexpr std::uint32_t kBundleVersion = 1;

std::string encode_bundle(const AdapterBundle &bundle);
/// FormatError (with byte offset) on corrupt or truncated input,
/// VersionError on a version mismatch. Never returns a partial bundle.
AdapterBundle decode_bundle(std::string_view bytes);

void bundle_save(const AdapterBundle &bundle, const std::filesystem::path &path);
AdapterBundle bundle_load(const std::filesystem::path &path);

struct LibraryEntry {
    std::string task_id;
    std::string file;
    AdapterMethod method = AdapterMethod::kLora;
    int rank = 0;
    std::vector<std::string> class_names;
};

/// Directory-backed catalog: `index.json` plus `<task>.cmfb` per task.
/// Mutations write to temporaries and rename, so readers never see torn files.
/// One writer at a time.
class AdapterLibrary {
  public:
    /// Opens `dir`, creating an empty library if it does not exist.
    explicit AdapterLibrary(std::filesystem::path dir);

    /// ValidationError if the task exists and `overwrite` is false.
    void add(const AdapterBundle &bundle, bool overwrite = false);
    /// NotFoundError for unknown tasks.
    AdapterBundle get(std::string_view task_id) const;
    std::vector<LibraryEntry> list() const;
    void remove(std::string_view task_id);
    bool contains(std::string_view task_id) const;

    const std::filesystem::path &dir() const { return dir_; }

  private:
    std::vector<LibraryEntry> read_index() const;
    void write_index(const std::vector<LibraryEntry> &entries) const;

    std::filesystem::path dir_;
};

/// Task ids double as file names: letters, digits, '.', '_' and '-' only.
void validate_task_id(std::string_view task_id);

// --- memory accounting ---------------------------------------------------------

struct MemoryItem {
    std::string label;
    std::size_t parameters = 0;
    double kib = 0.0;
};

struct StrategyTotal {
    std::string strategy;
    std::vector<MemoryItem> items;
    std::size_t parameters = 0;
    double kib = 0.0;
};

struct ProjectionRow {
    int tasks = 0;
    double scratch_kib = 0.0;
    double full_kib = 0.0;
    double comfort_kib = 0.0;
};

struct MemoryReport {
    MemoryItem foundation;  // W0
    /// (a) one independently trained model per task.
    StrategyTotal scratch;
    /// (b) W0 plus a full-size ΔW per task.
    StrategyTotal full;
    /// (c) W0 plus the stored bundles.
    StrategyTotal comfort;
    double savings_vs_scratch = 0.0;  // 1 - comfort / scratch
    double savings_vs_full = 0.0;     // 1 - comfort / full
    std::vector<ProjectionRow> projection;
};

/// 4 bytes per parameter, 1 KB = 1024 bytes.
double parameters_to_kib(std::size_t parameters);

/// Parameter counts from shapes alone.
std::size_t encoder_parameter_count(const EncoderConfig &config, bool include_head = false);
std::size_t classifier_parameter_count(int input, int classes, int hidden1 = 512, int hidden2 = 128);
std::size_t bundle_parameter_count(const EncoderConfig &config, const AdapterBundle &bundle);

/// Per-strategy totals for detecting every task in `bundles`, and a
/// projection over 1..`projected_tasks` tasks extrapolated from the mean
/// per-task sizes. Metadata is not counted; only tensor payloads are.
MemoryReport memory_report(const EncoderConfig &config, std::span<const AdapterBundle> bundles, int projected_tasks,
                           bool include_head = false);

/// Tab-separated breakdown and projection tables.
std::string format_memory_report(const MemoryReport &report);

}  // namespace comfort
