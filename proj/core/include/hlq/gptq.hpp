#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "hlq/quant.hpp"
#include "hlq/tensor.hpp"

namespace hlq {

// Symmetric k x k calibration Hessian H = 2 X^T X + lambda I, float64.
struct HessianAccumulator {
    int k = 0;
    std::vector<double> h;  // [k][k] row-major

    double at(int64_t i, int64_t j) const { return h[i * k + j]; }
};

struct GptqConfig {
    int block = 128;            // columns per compensation block; multiple of g
    double lambda_frac = 0.01;  // damping as a fraction of mean(diag(2 X^T X))
};

// Builds the damped Hessian from calibration activations X of shape [m, k].
// Accumulation order over samples is fixed, so the result is bit-identical
// for any worker count. All-zero calibration -> calibration error.
HessianAccumulator accumulate_hessian(const Matrix& x, double lambda_frac = 0.01);

// Block pipeline: quantize one block of columns with the alternating search,
// then propagate the block's reconstruction error E into not-yet-quantized
// columns through W_R -= E * (Hinv_BB)^-1 * Hinv_BR, where Hinv = H^-1 comes
// from one Cholesky factorization. Already-quantized blocks never change. A
// diagonal Hessian produces exactly zero compensation, so the result is then
// bit-identical to plain per-block quantization.
std::pair<HlqParams, BitAssignment> hlq_gptq_layer(const Matrix& w, const HessianAccumulator& hess,
                                                   const QuantConfig& cfg, const GptqConfig& gcfg);

// tr((W - W_hat) H (W - W_hat)^T) in float64: the quadratic objective the
// compensation minimizes greedily.
double proxy_loss(const Matrix& w, const Matrix& w_hat, const HessianAccumulator& hess);

}  // namespace hlq
