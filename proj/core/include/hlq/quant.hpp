#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "hlq/tensor.hpp"

namespace hlq {

// ============================================================================
// Configuration and parameter containers
// ============================================================================

struct QuantConfig {
    int q = 2;             // bit width; production range 2..4, generic path up to 8
    int g = 128;           // weight group size, must divide k
    int t_max = 10;        // maximum search iterations
    int chunk_rows = 64;   // rows per processing chunk, bounds peak memory
    double epsilon = 1e-10;  // gradient search: stop when loss improvement < epsilon
    double lr = 0.4;       // gradient search: learning rate
};

// All 2^q binary codewords; bit j of codeword m is (m >> j) & 1.
struct Codebook {
    int q = 0;
    std::vector<uint8_t> bits;  // [2^q][q] row-major

    int rows() const { return 1 << q; }
    uint8_t bit(int m, int j) const { return bits[static_cast<size_t>(m) * q + j]; }
};

// Per-group parameters of the hierarchical format: reconstruction is
// w_hat = sum_j scales[j] * b_j + zero.
struct HlqParams {
    int n = 0, k = 0, q = 0, g = 0;
    std::vector<float> scales;  // [n][k/g][q]
    std::vector<float> zeros;   // [n][k/g]

    int groups() const { return g > 0 ? k / g : 0; }
    float* scale_at(int64_t i, int64_t grp) {
        return scales.data() + (i * groups() + grp) * q;
    }
    const float* scale_at(int64_t i, int64_t grp) const {
        return scales.data() + (i * groups() + grp) * q;
    }
    float zero_at(int64_t i, int64_t grp) const { return zeros[i * groups() + grp]; }
};

// Codeword index per weight.
struct BitAssignment {
    int n = 0, k = 0, q = 0;
    std::vector<uint8_t> idx;  // [n][k]
};

// Uniform asymmetric quantization state: w_int = clamp(round(w/s) + z),
// dequantization (w_int - z) * s.
struct UniformQuant {
    int n = 0, k = 0, q = 0, g = 0;
    std::vector<uint8_t> w_int;  // [n][k]
    std::vector<float> scale;    // [n][k/g]
    std::vector<int32_t> zero;   // [n][k/g] integer zero points in [0, 2^q - 1]

    int groups() const { return g > 0 ? k / g : 0; }
};

// Candidate reconstruction values per group: values[m] = sum_j s_j*C[m][j] + z,
// accumulated in one float32 pass (j ascending, then + z). hlq_dequantize
// reproduces exactly these values, so weights already on the grid survive a
// quantize/dequantize round trip bit-exactly.
struct CandidateSet {
    int n = 0, groups = 0, q = 0;
    std::vector<float> values;  // [n][groups][2^q]

    const float* at(int64_t i, int64_t grp) const {
        return values.data() + (i * groups + grp) * (int64_t(1) << q);
    }
};

// Loss and exact gradients of L = mean((w - B s - z)^2) over one group at a
// fixed bit assignment, evaluated in float64. Exposed for diagnostics and
// finite-difference checks.
struct GroupGradient {
    double loss = 0.0;
    std::vector<double> d_scales;
    double d_zero = 0.0;
};

// Optional per-iteration diagnostics of the alternating search.
struct AlternatingTrace {
    int iters = 0;
    int64_t groups = 0;             // n * (k/g)
    std::vector<double> mse;        // [iters][groups], float64-measured group MSE

    double at(int t, int64_t grp) const { return mse[t * groups + grp]; }
};

// ============================================================================
// Operations
// ============================================================================

// Configuration error unless 1 <= q <= 8.
Codebook build_codebook(int q);

CandidateSet build_candidates(const HlqParams& p, const Codebook& cb);

// Round-to-nearest uniform baseline. Per group: s = (max-min)/(2^q-1), with
// s = 1 when the group is constant; z = round(-min/s) clamped to [0, 2^q-1].
UniformQuant rtn_quantize(const Matrix& w, const QuantConfig& cfg);

Matrix rtn_dequantize(const UniformQuant& u);

// Expresses uniform state in hierarchical form: scales[j] = s * 2^j (exact in
// float32), zero = -z * s, codeword = w_int. Candidate m then reconstructs to
// (m - z) * s up to float32 summation, so the lookup kernel can serve both
// formats.
std::pair<HlqParams, BitAssignment> uniform_to_hlq(const UniformQuant& u);

// Ladder initialization: delta = (max-min)/(2^q-1), scales [delta, 2*delta,
// ..., 2^(q-1)*delta], zero = group min. Constant groups get delta = 0 and
// reconstruct exactly.
HlqParams hlq_init(const Matrix& w, const QuantConfig& cfg);

// Per-weight nearest candidate; distance ties break toward the smaller index.
BitAssignment hlq_assign(const Matrix& w, const HlqParams& p, const Codebook& cb);

// Least-squares refit of (s, z) per group at a fixed assignment, solved from
// the normal equations in float64 with a pseudo-inverse, so rank-deficient
// groups get the minimum-norm solution (a group stuck on one codeword fits the
// group mean through z alone).
HlqParams hlq_lse(const Matrix& w, const BitAssignment& bits, const QuantConfig& cfg);

// Reconstruction w_hat[i,c] = sum_j s_j*b_j + z in float32, same summation
// order as build_candidates.
Matrix hlq_dequantize(const BitAssignment& bits, const HlqParams& p);

// Alternating search: exactly t_max iterations of (assign; least-squares refit)
// from hlq_init, processing rows in chunks of cfg.chunk_rows. Per-group MSE is
// non-increasing across iterations. Results are bit-identical for any
// chunk_rows and worker count.
std::pair<HlqParams, BitAssignment> hlq_alternating(const Matrix& w, const QuantConfig& cfg,
                                                    AlternatingTrace* trace = nullptr);

// Gradient search: per iteration assigns bits, evaluates L, and takes one
// plain gradient-descent step on (s, z) with the exact fixed-assignment
// gradients (none flow through the argmin). Scales clamp to >= 0 and z clips
// to the group's [min, max]. Each group stops early once its loss improvement
// drops below cfg.epsilon; the returned assignment is recomputed under the
// final parameters.
std::pair<HlqParams, BitAssignment> hlq_gradient(const Matrix& w, const QuantConfig& cfg);

GroupGradient hlq_group_gradient(std::span<const float> w, std::span<const uint8_t> idx,
                                 const Codebook& cb, std::span<const double> s, double z);

}  // namespace hlq
