// SPDX-License-Identifier: Apache-2.0
#pragma once

// Named-tensor container used for model checkpoints and optimizer state.
//
// Byte layout (all integers little-endian):
//   magic    8 bytes  "RAUMCKPT"
//   version  u32      currently 1
//   count    u32      number of entries
//   entry*   count times:
//     name_len u32, name bytes (UTF-8, no terminator)
//     rank     u32, dims u64[rank]
//     payload  f64[product(dims)], IEEE-754 binary64 little-endian, row-major

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "raum/numkernel/tensor.hpp"

namespace raum {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

using NamedTensors = std::vector<NamedTensor>;

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_tensors(const NamedTensors& tensors);
/// Throws IoError on a bad magic, unknown version, or truncated payload.
NamedTensors decode_tensors(const std::vector<std::uint8_t>& bytes);

void write_tensors(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors read_tensors(const std::filesystem::path& path);

/// Copies values from `source` into same-named, same-shaped tensors of `target`.
/// Throws IoError when a name is missing or a shape differs.
void load_into(const NamedTensors& source, const NamedTensors& target);

} // namespace raum
