#pragma once

#include <cstdint>
#include <string>

#include "hlq/lut.hpp"
#include "hlq/metrics.hpp"
#include "hlq/quant.hpp"

namespace hlq {

inline constexpr uint32_t kHlqpVersion = 1;

// Payload layout of a serialized model: tile-packed kernel words, or plain
// row-major bit planes.
enum class HlqpLayout { tiles, planes };

// In-memory image of an HLQP container: codeword bits plus per-group
// parameters. Exactly one of `packed` (layout tiles) and `planes` (layout
// planes) is populated. Uniform models are stored in the same hierarchical
// form (see uniform_to_hlq); `format` records the origin.
struct HlqpModel {
    Format format = Format::hlq;
    HlqpLayout layout = HlqpLayout::tiles;
    PackedWeights packed;
    BitPlanes planes;
    HlqParams params;
};

// Builds a tiles-layout model ready for the lookup kernel.
HlqpModel make_hlqp(Format format, const BitAssignment& bits, const HlqParams& params);

// Serializes to `path` via a temporary file in the same directory plus an
// atomic rename, so a crashed writer never leaves a torn container behind.
// Byte layout: magic "HLQP", u32 version, u32 header length, JSON header,
// packed words (u64), scales (f32), zeros (f32); integers and floats are
// little-endian.
void save_hlqp(const HlqpModel& model, const std::string& path);

// IO error on a missing file, bad magic, unsupported version, malformed
// header, truncation (the message names the section that ended early), or
// trailing bytes. Magic and version are rejected before any payload is read.
HlqpModel load_hlqp(const std::string& path);

Matrix hlqp_dequantize(const HlqpModel& model);

// Raw row-major float32 tensor (little-endian) with a JSON sidecar at
// path + ".json" holding {"shape": [rows, cols], "order": "row-major"}.
void save_raw_matrix(const Matrix& m, const std::string& path);
Matrix load_raw_matrix(const std::string& path);

}  // namespace hlq
