#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hlq/tensor.hpp"

namespace hlq {

enum class Format { hlq, uniform };

const char* format_name(Format f);
Format parse_format(const std::string& name);  // config error on unknown names

// Mean squared error in float64; shape mismatch -> data error.
double mse(const Matrix& a, const Matrix& b);

// Cosine similarity of flattened tensors in float64. A zero vector yields 0
// and a one-line warning on stderr.
double cosine_similarity(std::span<const float> a, std::span<const float> b);

// Storage cost per weight including group parameters:
//   uniform: q + 32/g        (float scale + integer zero per group)
//   hlq:     q + (q+1)*16/g  (q half floats of scale + half float zero)
double bits_per_weight(int q, int g, Format f);

// ============================================================================
// Model footprint accounting
// ============================================================================

struct LayerShape {
    std::string name;
    int count = 1;    // how many instances across the model
    int64_t n = 0;    // output channels
    int64_t k = 0;    // input features
};

// Shapes of everything quantized plus the byte count of parts kept at fp16
// (embeddings, head, norms).
struct ModelShapeConfig {
    std::string name;
    std::vector<LayerShape> layers;
    uint64_t excluded_bytes = 0;
};

struct Footprint {
    double quant_bytes = 0.0;  // quantized layers at bits_per_weight + excluded
    double fp16_bytes = 0.0;   // everything at fp16 + excluded
    double compression_rate = 0.0;  // fp16_bytes / quant_bytes
};

Footprint model_footprint(const ModelShapeConfig& shapes, int q, int g, Format f);

// Reads a shape config from JSON: {"name": ..., "excluded_bytes": ...,
// "layers": [{"name", "count", "n", "k"}, ...]}.
ModelShapeConfig load_shape_config(const std::string& path);

}  // namespace hlq
