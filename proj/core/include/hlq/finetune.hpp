#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "hlq/quant.hpp"
#include "hlq/tensor.hpp"

namespace hlq {

struct TuneConfig {
    double lr = 1e-4;
    int epochs = 2;
    int batch = 0;  // samples per step; 0 = full batch
};

struct TuneResult {
    HlqParams params;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    int steps = 0;
};

// Per-group loss gradients of L = ||X W^T - X W_hat^T||_F^2 / (m n) at a fixed
// bit assignment, float64. Exposed for finite-difference verification.
struct LayerGradient {
    double loss = 0.0;
    std::vector<double> d_scales;  // [n][k/g][q]
    std::vector<double> d_zeros;   // [n][k/g]
};

// Stage 1: independent alternating-search quantization of each layer.
// Bit-for-bit identical to calling hlq_alternating per layer.
std::vector<std::pair<HlqParams, BitAssignment>> reconstruct_stage1(
    const std::vector<Matrix>& layers, const QuantConfig& cfg);

// Stage 2: bits stay fixed; (s, z) descend the layer-output objective
// L = ||X W^T - X W_hat^T||_F^2 / (m n) with exact closed-form gradients
// (W_hat is linear in the parameters). The target X W^T is computed once.
// Mini-batches walk the sample axis in order without shuffling, so runs are
// reproducible. Divergence (loss above 10x initial) -> tuning error
// suggesting a lower lr.
TuneResult reconstruct_stage2(const Matrix& w, const Matrix& x, const HlqParams& init,
                              const BitAssignment& bits, const TuneConfig& tune);

// Loss/gradient evaluation used by stage 2; `x` is the (mini-)batch.
LayerGradient stage2_gradient(const Matrix& x, const Matrix& target, const HlqParams& p,
                              const BitAssignment& bits);

// Convenience for oracles: the stage-2 objective at given parameters.
double stage2_loss(const Matrix& w, const Matrix& x, const HlqParams& p,
                   const BitAssignment& bits);

}  // namespace hlq
