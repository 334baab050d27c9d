// SPDX-License-Identifier: Apache-2.0

#include "comfort/checkpoint.h"

#include <vector>

#include "comfort/errors.h"

namespace comfort {

void write_encoder_config(ByteWriter &out, const EncoderConfig &config) {
    out.u32(static_cast<std::uint32_t>(config.layers));
    out.u32(static_cast<std::uint32_t>(config.hidden));
    out.u32(static_cast<std::uint32_t>(config.heads));
    out.u32(static_cast<std::uint32_t>(config.ffn));
    out.u32(static_cast<std::uint32_t>(config.seq_len));
    out.u32(static_cast<std::uint32_t>(config.positional));
    out.f64(config.layer_norm_eps);
}

EncoderConfig read_encoder_config(ByteReader &in) {
    const auto start = in.offset();
    EncoderConfig c;
    c.layers = static_cast<int>(in.u32());
    c.hidden = static_cast<int>(in.u32());
    c.heads = static_cast<int>(in.u32());
    c.ffn = static_cast<int>(in.u32());
    c.seq_len = static_cast<int>(in.u32());
    const auto positional = in.u32();
    if (positional > 1) {
        throw FormatError("unknown positional encoding tag", start + 20);
    }
    c.positional = static_cast<PositionalEncoding>(positional);
    c.layer_norm_eps = in.f64();
    constexpr int kLimit = 1 << 14;
    if (c.layers < 1 || c.layers > 64 || c.hidden < 1 || c.hidden > kLimit || c.heads < 1 || c.ffn < 1 ||
        c.ffn > kLimit || c.seq_len < 1 || c.seq_len > kLimit || c.hidden % c.heads != 0) {
        throw FormatError("implausible encoder config", start);
    }
    return c;
}

void write_encoder_tensors(ByteWriter &out, const EncoderWeights &weights) {
    std::uint32_t count = 0;
    weights.for_each([&](const std::string &, const Matrix &) { ++count; });
    out.u32(count);
    weights.for_each([&](const std::string &name, const Matrix &m) {
        out.str(name);
        write_tensor(out, to_tensor(m));
    });
}

EncoderWeights read_encoder_tensors(ByteReader &in, const EncoderConfig &config) {
    const auto count_offset = in.offset();
    const auto count = in.u32();
    // Refuse to allocate more than the remaining bytes could possibly hold.
    const std::uint64_t h = static_cast<std::uint64_t>(config.hidden);
    const std::uint64_t f = static_cast<std::uint64_t>(config.ffn);
    const std::uint64_t minimum =
        static_cast<std::uint64_t>(config.layers) * (4 * h * h + 2 * h * f) * 4;
    if (minimum > in.remaining()) {
        throw FormatError("checkpoint truncated: config needs at least " + std::to_string(minimum) + " bytes",
                          count_offset);
    }
    EncoderWeights with = EncoderWeights::zeros(config, true);
    std::uint32_t expected_with = 0;
    with.for_each([&](const std::string &, const Matrix &) { ++expected_with; });
    const bool has_head = count == expected_with;
    if (!has_head && count != expected_with - 2) {
        throw FormatError("unexpected tensor count " + std::to_string(count), count_offset);
    }
    EncoderWeights w = has_head ? std::move(with) : EncoderWeights::zeros(config, false);
    w.for_each([&](const std::string &name, Matrix &m) {
        const auto name_offset = in.offset();
        const std::string stored = in.str();
        if (stored != name) {
            throw FormatError("expected tensor '" + name + "', found '" + stored + "'", name_offset);
        }
        const auto tensor_offset = in.offset();
        const Tensor t = read_tensor(in);
        if (t.dims.size() != 2 || t.dims[0] != static_cast<std::uint64_t>(m.rows()) ||
            t.dims[1] != static_cast<std::uint64_t>(m.cols())) {
            throw FormatError("tensor '" + name + "' has the wrong shape", tensor_offset);
        }
        m = to_matrix(t);
    });
    return w;
}

std::string encode_checkpoint(const EncoderWeights &weights) {
    ByteWriter out;
    out.bytes("CMFW");
    out.u32(kCheckpointVersion);
    write_encoder_config(out, weights.config);
    write_encoder_tensors(out, weights);
    return out.take();
}

EncoderWeights decode_checkpoint(std::string_view bytes) {
    ByteReader in(bytes);
    if (in.bytes(4) != "CMFW") {
        throw FormatError("not an encoder checkpoint", 0);
    }
    const auto version = in.u32();
    if (version != kCheckpointVersion) {
        throw VersionError("unsupported checkpoint version " + std::to_string(version));
    }
    const EncoderConfig config = read_encoder_config(in);
    EncoderWeights w = read_encoder_tensors(in, config);
    if (!in.at_end()) {
        throw FormatError("trailing bytes after checkpoint", in.offset());
    }
    return w;
}

void save_checkpoint(const std::filesystem::path &path, const EncoderWeights &weights) {
    write_file_atomic(path, encode_checkpoint(weights));
}

EncoderWeights load_checkpoint(const std::filesystem::path &path) { return decode_checkpoint(read_file(path)); }

void round_to_storage(EncoderWeights &weights) {
    weights.for_each([](const std::string &, Matrix &m) { round_to_float(m); });
}

}  // namespace comfort
