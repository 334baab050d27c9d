// SPDX-License-Identifier: Apache-2.0

#include <json.hpp>

#include "comfort/checkpoint.h"
#include "comfort/errors.h"
#include "comfort/library.h"

namespace comfort {
namespace {

std::string metadata_json(const BundleMetadata &meta) {
    nlohmann::json j;
    j["class_names"] = meta.class_names;
    j["healthy_class"] = meta.healthy_class;
    j["seed"] = meta.seed;
    j["dataset_fingerprint"] = meta.dataset_fingerprint;
    return j.dump();
}

BundleMetadata parse_metadata(const std::string &text, std::size_t offset) {
    try {
        const auto j = nlohmann::json::parse(text);
        BundleMetadata meta;
        meta.class_names = j.at("class_names").get<std::vector<std::string>>();
        meta.healthy_class = j.at("healthy_class").get<int>();
        meta.seed = j.at("seed").get<std::uint64_t>();
        meta.dataset_fingerprint = j.at("dataset_fingerprint").get<std::string>();
        return meta;
    } catch (const nlohmann::json::exception &e) {
        throw FormatError(std::string("bad bundle metadata: ") + e.what(), offset);
    }
}

std::uint32_t checked_u32(ByteReader &in, std::uint32_t limit, const char *what) {
    const auto at = in.offset();
    const auto v = in.u32();
    if (v > limit) throw FormatError(std::string("implausible ") + what + " " + std::to_string(v), at);
    return v;
}

// Reads one (name, tensor) record and checks it against the expected slot.
void read_named(ByteReader &in, const std::string &name, Matrix &slot, bool shape_known) {
    const auto name_offset = in.offset();
    const std::string stored = in.str();
    if (stored != name) {
        throw FormatError("expected tensor '" + name + "', found '" + stored + "'", name_offset);
    }
    const auto tensor_offset = in.offset();
    const Tensor t = read_tensor(in);
    if (t.dims.size() != 2) throw FormatError("tensor '" + name + "' is not a matrix", tensor_offset);
    if (shape_known && (t.dims[0] != static_cast<std::uint64_t>(slot.rows()) ||
                        t.dims[1] != static_cast<std::uint64_t>(slot.cols()))) {
        throw FormatError("tensor '" + name + "' has the wrong shape", tensor_offset);
    }
    slot = to_matrix(t);
}

}  // namespace

std::string encode_bundle(const AdapterBundle &bundle) {
    ByteWriter out;
    out.bytes("CMFB");
    out.u32(kBundleVersion);
    out.u32(static_cast<std::uint32_t>(bundle.method));
    out.u32(static_cast<std::uint32_t>(bundle.rank));
    out.f64(bundle.alpha);
    out.u32(static_cast<std::uint32_t>(bundle.chain_length));
    out.u32(static_cast<std::uint32_t>(bundle.active_stage));
    out.str(bundle.task_id);
    out.str(metadata_json(bundle.metadata));
    out.u32(bundle.dense ? 1 : 0);
    if (bundle.dense) write_encoder_config(out, bundle.dense->config);
    out.u32(static_cast<std::uint32_t>(bundle.targets.size()));
    for (const auto &t : bundle.targets) {
        out.str(t.target);
        out.u32(static_cast<std::uint32_t>(t.stages.size()));
    }
    std::uint32_t count = 0;
    bundle.for_each_tensor([&](const std::string &, const Matrix &) { ++count; });
    out.u32(count);
    bundle.for_each_tensor([&](const std::string &name, const Matrix &m) {
        out.str(name);
        write_tensor(out, to_tensor(m));
    });
    return out.take();
}

AdapterBundle decode_bundle(std::string_view bytes) {
    ByteReader in(bytes);
    if (in.bytes(4) != "CMFB") throw FormatError("not an adapter bundle", 0);
    const auto version = in.u32();
    if (version != kBundleVersion) {
        throw VersionError("unsupported bundle version " + std::to_string(version));
    }
    AdapterBundle b;
    const auto method_offset = in.offset();
    const auto method = in.u32();
    if (method < 1 || method > 5) throw FormatError("unknown method tag " + std::to_string(method), method_offset);
    b.method = static_cast<AdapterMethod>(method);
    b.rank = static_cast<int>(checked_u32(in, 1 << 16, "rank"));
    b.alpha = in.f64();
    b.chain_length = static_cast<int>(checked_u32(in, 1 << 10, "chain length"));
    const auto stage_offset = in.offset();
    b.active_stage = static_cast<int>(in.u32());
    if (b.chain_length < 1 || b.active_stage >= b.chain_length) {
        throw FormatError("active stage outside the chain", stage_offset);
    }
    if (is_low_rank(b.method) && b.rank < 1) throw FormatError("zero rank", method_offset + 4);
    b.task_id = in.str();
    const auto meta_offset = in.offset();
    b.metadata = parse_metadata(in.str(), meta_offset);

    const auto dense_offset = in.offset();
    const auto has_dense = in.u32();
    if (has_dense > 1) throw FormatError("bad dense flag", dense_offset);
    if ((has_dense == 1) == is_low_rank(b.method)) {
        throw FormatError("dense payload does not match method", dense_offset);
    }
    if (has_dense) {
        const EncoderConfig config = read_encoder_config(in);
        // Dense payloads never carry a reconstruction head.
        b.dense = EncoderWeights::zeros(config, false);
    }

    const auto target_count = checked_u32(in, 1 << 12, "target count");
    if (!is_low_rank(b.method) && target_count != 0) {
        throw FormatError("dense bundle lists adapter targets", in.offset() - 4);
    }
    for (std::uint32_t i = 0; i < target_count; ++i) {
        TargetAdapter t;
        t.target = in.str();
        const auto stages_offset = in.offset();
        const auto stages = in.u32();
        const auto expected = b.method == AdapterMethod::kCola ? static_cast<std::uint32_t>(b.active_stage + 1) : 1u;
        if (stages != expected) throw FormatError("unexpected stage count for " + t.target, stages_offset);
        t.stages.resize(stages);
        b.targets.push_back(std::move(t));
    }

    const auto count_offset = in.offset();
    const auto count = in.u32();
    std::uint32_t expected = 0;
    b.for_each_tensor([&](const std::string &, const Matrix &) { ++expected; });
    if (count != expected) {
        throw FormatError("expected " + std::to_string(expected) + " tensors, found " + std::to_string(count),
                          count_offset);
    }
    b.for_each_tensor([&](const std::string &name, Matrix &m) {
        read_named(in, name, m, name.starts_with("dense."));
    });
    if (!in.at_end()) throw FormatError("trailing bytes after bundle", in.offset());

    // Structural checks that shape-agnostic reads could not make.
    const auto bad = [&](const std::string &what) { throw FormatError(what, count_offset); };
    const Classifier &c = b.classifier;
    if (c.hidden1.cols() != c.hidden1_bias.cols() || c.hidden1.cols() != c.hidden2.rows() ||
        c.hidden2.cols() != c.hidden2_bias.cols() || c.hidden2.cols() != c.output.rows() ||
        c.output.cols() != c.output_bias.cols() || c.hidden1_bias.rows() != 1 || c.hidden2_bias.rows() != 1 ||
        c.output_bias.rows() != 1 || c.output.cols() < 2) {
        bad("inconsistent classifier shapes");
    }
    for (const auto &t : b.targets) {
        const Eigen::Index d = t.stages.front().b.rows();
        const Eigen::Index k = t.stages.front().a.cols();
        for (const auto &s : t.stages) {
            if (s.b.cols() != b.rank || s.a.rows() != b.rank || s.b.rows() != d || s.a.cols() != k) {
                bad("inconsistent factor shapes for " + t.target);
            }
        }
        if (b.method == AdapterMethod::kDora && (t.magnitude.rows() != 1 || t.magnitude.cols() != k)) {
            bad("inconsistent magnitude shape for " + t.target);
        }
    }
    return b;
}

void bundle_save(const AdapterBundle &bundle, const std::filesystem::path &path) {
    write_file_atomic(path, encode_bundle(bundle));
}

AdapterBundle bundle_load(const std::filesystem::path &path) { return decode_bundle(read_file(path)); }

}  // namespace comfort
