// SPDX-License-Identifier: Apache-2.0
//
// Encoder weight checkpoints. Layout (little-endian):
//
//   "CMFW", u32 version,
//   encoder config: u32 layers, hidden, heads, ffn, seq_len, positional; f64 layer-norm eps,
//   u32 tensor count, then per tensor: u32 name length, name, CMFT blob.
//
// Tensor names follow EncoderWeights::for_each ("layer0.query.weight", ...,
// "positional" when learned, "head.weight"/"head.bias" when present).
// A sinusoidal positional table is recomputed, not stored.

#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "comfort/encoder.h"
#include "comfort/tensor_io.h"

namespace comfort {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_encoder_config(ByteWriter &out, const EncoderConfig &config);
EncoderConfig read_encoder_config(ByteReader &in);

/// Named tensors after the config header, in for_each order.
void write_encoder_tensors(ByteWriter &out, const EncoderWeights &weights);
/// Reads tensors written by write_encoder_tensors into a weight set of the
/// given config; `with_head` is inferred from the tensor names.
EncoderWeights read_encoder_tensors(ByteReader &in, const EncoderConfig &config);

std::string encode_checkpoint(const EncoderWeights &weights);
EncoderWeights decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path &path, const EncoderWeights &weights);
EncoderWeights load_checkpoint(const std::filesystem::path &path);

/// Rounds every parameter to float32 precision, the stored representation.
void round_to_storage(EncoderWeights &weights);

}  // namespace comfort
