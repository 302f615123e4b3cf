#pragma once

#include <cstdint>
#include <vector>

#include "hlq/common.hpp"

namespace hlq {

// Dense row-major float32 matrix. Weights are [n, k] (output channels x input
// features), activations are [m, k] (batch x input features).
struct Matrix {
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<float> data;

    Matrix() = default;
    Matrix(int64_t r, int64_t c, float fill = 0.0f)
        : rows(r), cols(c), data(static_cast<size_t>(r) * static_cast<size_t>(c), fill) {}

    float& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * cols + j)]; }
    float at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * cols + j)]; }
    float* row(int64_t i) { return data.data() + i * cols; }
    const float* row(int64_t i) const { return data.data() + i * cols; }
    int64_t size() const { return rows * cols; }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

// Data error if any entry is NaN or infinite. `what` names the tensor in the
// message so CLI diagnostics stay actionable.
void require_finite(const Matrix& m, const char* what);

// Data error unless `m` has exactly the given shape.
void require_shape(const Matrix& m, int64_t rows, int64_t cols, const char* what);

}  // namespace hlq
