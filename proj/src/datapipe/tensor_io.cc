// SPDX-License-Identifier: Apache-2.0

#include "comfort/tensor_io.h"

#include <bit>
#include <fstream>
#include <limits>
#include <sstream>

#include "comfort/errors.h"

namespace comfort {

std::uint64_t Tensor::element_count() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

void ByteWriter::bytes(std::string_view raw) { buf_.append(raw); }

void ByteWriter::u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void ByteWriter::u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
}

std::string_view ByteReader::bytes(std::size_t n) {
    if (n > remaining()) {
        throw FormatError("unexpected end of data reading " + std::to_string(n) + " bytes", pos_);
    }
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
}

std::uint32_t ByteReader::u32() {
    auto raw = bytes(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(raw[i])) << (8 * i);
    return v;
}

std::uint64_t ByteReader::u64() {
    auto raw = bytes(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(raw[i])) << (8 * i);
    return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::str() {
    const auto start = pos_;
    const auto n = u32();
    if (n > remaining()) {
        throw FormatError("string length exceeds remaining data", start);
    }
    return std::string(bytes(n));
}

void write_tensor(ByteWriter &out, const Tensor &tensor) {
    if (tensor.element_count() != tensor.values.size()) {
        throw DimensionError("write_tensor: dims do not match value count");
    }
    out.bytes("CMFT");
    out.u32(kTensorFormatVersion);
    out.u32(kElementFloat32);
    out.u32(static_cast<std::uint32_t>(tensor.dims.size()));
    for (auto d : tensor.dims) out.u64(d);
    for (float v : tensor.values) out.f32(v);
}

Tensor read_tensor(ByteReader &in) {
    const auto start = in.offset();
    if (in.bytes(4) != "CMFT") {
        throw FormatError("bad tensor magic", start);
    }
    const auto version = in.u32();
    if (version != kTensorFormatVersion) {
        throw VersionError("unsupported tensor format version " + std::to_string(version));
    }
    const auto type_offset = in.offset();
    if (in.u32() != kElementFloat32) {
        throw FormatError("unsupported element type", type_offset);
    }
    const auto rank_offset = in.offset();
    const auto rank = in.u32();
    if (rank > 8) {
        throw FormatError("implausible tensor rank " + std::to_string(rank), rank_offset);
    }
    Tensor t;
    std::uint64_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        const auto d = in.u64();
        if (d != 0 && count > std::numeric_limits<std::uint64_t>::max() / d) {
            throw FormatError("tensor dimensions overflow", in.offset());
        }
        count *= d;
        t.dims.push_back(d);
    }
    if (count > in.remaining() / 4) {
        throw FormatError("tensor payload truncated", in.offset());
    }
    t.values.resize(static_cast<std::size_t>(count));
    for (auto &v : t.values) v = in.f32();
    return t;
}

Tensor to_tensor(const Matrix &m) {
    Tensor t;
    t.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
    t.values.resize(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.size(); ++i) t.values[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
    return t;
}

Matrix to_matrix(const Tensor &t) {
    if (t.dims.size() != 2) {
        throw DimensionError("to_matrix: expected a rank-2 tensor");
    }
    Matrix m(static_cast<Eigen::Index>(t.dims[0]), static_cast<Eigen::Index>(t.dims[1]));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = t.values[static_cast<std::size_t>(i)];
    return m;
}

std::string encode_tensor(const Tensor &tensor) {
    ByteWriter w;
    write_tensor(w, tensor);
    return w.take();
}

Tensor decode_tensor(std::string_view bytes) {
    ByteReader r(bytes);
    Tensor t = read_tensor(r);
    if (!r.at_end()) {
        throw FormatError("trailing bytes after tensor", r.offset());
    }
    return t;
}

std::string read_file(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::filesystem::path &path, std::string_view bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot write " + tmp.string());
        }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            throw IoError("short write to " + tmp.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
    }
}

}  // namespace comfort
