// SPDX-License-Identifier: Apache-2.0
//
// CMFT tensor blobs, bit-exact:
//
//   "CMFT"                 4 bytes magic
//   version                u32 LE (currently 1)
//   element type           u32 LE (1 = float32)
//   rank                   u32 LE
//   dims[rank]             u64 LE each
//   payload                row-major float32 LE
//
// Also the little-endian byte reader/writer every on-disk format here uses.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "comfort/numerics.h"

namespace comfort {

inline constexpr std::uint32_t kTensorFormatVersion = 1;
inline constexpr std::uint32_t kElementFloat32 = 1;

struct Tensor {
    std::vector<std::uint64_t> dims;
    std::vector<float> values;

    std::uint64_t element_count() const;
};

class ByteWriter {
  public:
    void bytes(std::string_view raw);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f32(float v);
    void f64(double v);
    /// u32 length prefix followed by the raw characters.
    void str(std::string_view s);
    const std::string &buffer() const { return buf_; }
    std::string take() { return std::move(buf_); }

  private:
    std::string buf_;
};

/// Bounds-checked cursor over a byte buffer. Every read past the end throws
/// FormatError carrying the offset where the read started.
class ByteReader {
  public:
    explicit ByteReader(std::string_view data) : data_(data) {}
    std::string_view bytes(std::size_t n);
    std::uint32_t u32();
    std::uint64_t u64();
    float f32();
    double f64();
    std::string str();
    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }
    bool at_end() const { return pos_ == data_.size(); }

  private:
    std::string_view data_;
    std::size_t pos_ = 0;
};

void write_tensor(ByteWriter &out, const Tensor &tensor);
Tensor read_tensor(ByteReader &in);

/// Rank-2 helpers; values are narrowed to float32 on write.
Tensor to_tensor(const Matrix &m);
Matrix to_matrix(const Tensor &t);

std::string encode_tensor(const Tensor &tensor);
Tensor decode_tensor(std::string_view bytes);

std::string read_file(const std::filesystem::path &path);
/// Writes to a sibling temporary file and renames it over `path`, so readers
/// never observe a partially written file.
void write_file_atomic(const std::filesystem::path &path, std::string_view bytes);

}  // namespace comfort
