#include "hlq/quant.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "hlq/threading.hpp"

namespace hlq {

namespace {

constexpr int kMaxBits = 8;   // generic testing range; production use is 2..4
constexpr int kMaxDim = kMaxBits + 1;

void validate_config(const QuantConfig& cfg, const Matrix& w, const char* op) {
    std::string who(op);
    if (cfg.q < 1 || cfg.q > kMaxBits)
        throw Error(ErrorKind::config, who + ": q must be in [1, 8], got " + std::to_string(cfg.q));
    if (cfg.g < 1)
        throw Error(ErrorKind::config, who + ": g must be >= 1, got " + std::to_string(cfg.g));
    if (w.cols % cfg.g != 0)
        throw Error(ErrorKind::config, who + ": g (" + std::to_string(cfg.g) +
                                           ") must divide k (" + std::to_string(w.cols) + ")");
    if (cfg.t_max < 1)
        throw Error(ErrorKind::config, who + ": t_max must be >= 1, got " + std::to_string(cfg.t_max));
    if (cfg.chunk_rows < 1)
        throw Error(ErrorKind::config,
                    who + ": chunk_rows must be >= 1, got " + std::to_string(cfg.chunk_rows));
    if (!(cfg.epsilon > 0))
        throw Error(ErrorKind::config, who + ": epsilon must be > 0");
    if (cfg.lr < 0)
        throw Error(ErrorKind::config, who + ": lr must be >= 0");
}

// Candidate values for one group in a single float32 pass: set bits of the
// codeword accumulate their scale in ascending bit order, then + z. This is
// the one reconstruction formula shared by assignment and dequantization.
void group_candidates(const float* s, float z, const Codebook& cb, float* v) {
    const int rows = cb.rows();
    for (int m = 0; m < rows; ++m) {
        float acc = 0.0f;
        for (int j = 0; j < cb.q; ++j)
            if (cb.bit(m, j)) acc += s[j];
        v[m] = acc + z;
    }
}

// Nearest candidate by float64 distance on the float32 candidate values;
// strict improvement keeps the smaller index on ties.
int nearest_candidate(float w, const float* v, int count) {
    double wd = w;
    int best = 0;
    double best_d = std::abs(wd - double(v[0]));
    for (int m = 1; m < count; ++m) {
        double d = std::abs(wd - double(v[m]));
        if (d < best_d) {
            best_d = d;
            best = m;
        }
    }
    return best;
}

// --------------------------------------------------------------------------
// Small symmetric eigen-decomposition (cyclic Jacobi) for the normal-equations
// pseudo-inverse. d <= 9, so a fixed-size dense routine is enough.
// --------------------------------------------------------------------------

void jacobi_eigen(int d, double* a, double* v) {
    for (int i = 0; i < d * d; ++i) v[i] = 0.0;
    for (int i = 0; i < d; ++i) v[i * d + i] = 1.0;

    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = 0.0, diag = 0.0;
        for (int p = 0; p < d; ++p) {
            diag += a[p * d + p] * a[p * d + p];
            for (int r = p + 1; r < d; ++r) off += a[p * d + r] * a[p * d + r];
        }
        if (off <= 1e-28 * std::max(1.0, diag + off)) break;

        for (int p = 0; p < d; ++p) {
            for (int r = p + 1; r < d; ++r) {
                double apr = a[p * d + r];
                if (apr == 0.0) continue;
                double app = a[p * d + p], arr = a[r * d + r];
                double tau = (arr - app) / (2.0 * apr);
                double t = std::copysign(1.0, tau) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                double c = 1.0 / std::sqrt(1.0 + t * t);
                double s = t * c;
                for (int x = 0; x < d; ++x) {
                    double axp = a[x * d + p], axr = a[x * d + r];
                    a[x * d + p] = c * axp - s * axr;
                    a[x * d + r] = s * axp + c * axr;
                }
                for (int x = 0; x < d; ++x) {
                    double apx = a[p * d + x], arx = a[r * d + x];
                    a[p * d + x] = c * apx - s * arx;
                    a[r * d + x] = s * apx + c * arx;
                }
                for (int x = 0; x < d; ++x) {
                    double vxp = v[x * d + p], vxr = v[x * d + r];
                    v[x * d + p] = c * vxp - s * vxr;
                    v[x * d + r] = s * vxp + c * vxr;
                }
            }
        }
    }
}

// Minimum-norm solution of A x = b for symmetric positive semidefinite A via
// eigen-decomposition; eigenvalues below 1e-12 * lambda_max count as rank
// deficiency. On the normal equations this equals the design-matrix
// pseudo-inverse solution.
void pinv_solve(int d, const double* a_in, const double* b, double* x) {
    double a[kMaxDim * kMaxDim], v[kMaxDim * kMaxDim], c[kMaxDim];
    std::memcpy(a, a_in, sizeof(double) * d * d);
    jacobi_eigen(d, a, v);

    double lmax = 0.0;
    for (int j = 0; j < d; ++j) lmax = std::max(lmax, std::abs(a[j * d + j]));
    const double tol = lmax * 1e-12;

    for (int j = 0; j < d; ++j) {
        double lambda = a[j * d + j];
        double proj = 0.0;
        for (int r = 0; r < d; ++r) proj += v[r * d + j] * b[r];
        c[j] = (std::abs(lambda) > tol) ? proj / lambda : 0.0;
    }
    for (int r = 0; r < d; ++r) {
        double acc = 0.0;
        for (int j = 0; j < d; ++j) acc += v[r * d + j] * c[j];
        x[r] = acc;
    }
}

// Least-squares refit of one group at a fixed assignment. Normal equations
// A = D^T D, rhs = D^T w over the design D = [B | 1], assembled in float64
// from a per-codeword histogram (fixed order, so results are reproducible).
void group_lse(const float* w, const uint8_t* idx, const Codebook& cb, int len, double* s_out,
               double* z_out) {
    const int q = cb.q;
    const int d = q + 1;
    const int rows = cb.rows();

    double hist[1 << kMaxBits] = {0};
    double wsum[1 << kMaxBits] = {0};
    for (int i = 0; i < len; ++i) {
        hist[idx[i]] += 1.0;
        wsum[idx[i]] += double(w[i]);
    }

    double a[kMaxDim * kMaxDim] = {0};
    double b[kMaxDim] = {0};
    for (int m = 0; m < rows; ++m) {
        if (hist[m] == 0.0 && wsum[m] == 0.0) continue;
        for (int ja = 0; ja < q; ++ja) {
            if (!cb.bit(m, ja)) continue;
            b[ja] += wsum[m];
            for (int jb = 0; jb < q; ++jb)
                if (cb.bit(m, jb)) a[ja * d + jb] += hist[m];
            a[ja * d + q] += hist[m];
            a[q * d + ja] += hist[m];
        }
        b[q] += wsum[m];
        a[q * d + q] += hist[m];
    }

    double x[kMaxDim];
    pinv_solve(d, a, b, x);
    for (int j = 0; j < q; ++j) s_out[j] = x[j];
    *z_out = x[q];
}

double group_mse_f64(const float* w, const uint8_t* idx, const float* v, int len) {
    double acc = 0.0;
    for (int i = 0; i < len; ++i) {
        double r = double(w[i]) - double(v[idx[i]]);
        acc += r * r;
    }
    return acc / len;
}

}  // namespace

// ============================================================================
// Codebook and candidates
// ============================================================================

Codebook build_codebook(int q) {
    if (q < 1 || q > kMaxBits)
        throw Error(ErrorKind::config,
                    "build_codebook: q must be in [1, 8], got " + std::to_string(q));
    Codebook cb;
    cb.q = q;
    cb.bits.resize((size_t(1) << q) * q);
    for (int m = 0; m < (1 << q); ++m)
        for (int j = 0; j < q; ++j) cb.bits[size_t(m) * q + j] = uint8_t((m >> j) & 1);
    return cb;
}

CandidateSet build_candidates(const HlqParams& p, const Codebook& cb) {
    if (cb.q != p.q)
        throw Error(ErrorKind::config, "build_candidates: codebook bit width " +
                                           std::to_string(cb.q) + " does not match params q " +
                                           std::to_string(p.q));
    CandidateSet cs;
    cs.n = p.n;
    cs.groups = p.groups();
    cs.q = p.q;
    cs.values.resize(size_t(cs.n) * cs.groups * (size_t(1) << cs.q));
    const int m = cb.rows();
    for (int64_t i = 0; i < cs.n; ++i)
        for (int64_t grp = 0; grp < cs.groups; ++grp)
            group_candidates(p.scale_at(i, grp), p.zero_at(i, grp), cb,
                             cs.values.data() + (i * cs.groups + grp) * m);
    return cs;
}

// ============================================================================
// Uniform round-to-nearest baseline
// ============================================================================

UniformQuant rtn_quantize(const Matrix& w, const QuantConfig& cfg) {
    validate_config(cfg, w, "rtn_quantize");
    require_finite(w, "rtn_quantize: weights");

    UniformQuant u;
    u.n = int(w.rows);
    u.k = int(w.cols);
    u.q = cfg.q;
    u.g = cfg.g;
    const int groups = u.groups();
    u.w_int.resize(size_t(u.n) * u.k);
    u.scale.resize(size_t(u.n) * groups);
    u.zero.resize(size_t(u.n) * groups);

    const float qmax = float((1 << cfg.q) - 1);
    parallel_for(w.rows, [&](int64_t i) {
        const float* row = w.row(i);
        for (int grp = 0; grp < groups; ++grp) {
            const float* wg = row + int64_t(grp) * cfg.g;
            float mn = wg[0], mx = wg[0];
            for (int c = 1; c < cfg.g; ++c) {
                mn = std::min(mn, wg[c]);
                mx = std::max(mx, wg[c]);
            }
            float s = (mx > mn) ? (mx - mn) / qmax : 1.0f;
            float zf = std::nearbyintf(-mn / s);
            zf = std::clamp(zf, 0.0f, qmax);
            int32_t z = int32_t(zf);
            u.scale[i * groups + grp] = s;
            u.zero[i * groups + grp] = z;
            uint8_t* out = u.w_int.data() + (i * u.k + int64_t(grp) * cfg.g);
            for (int c = 0; c < cfg.g; ++c) {
                float vi = std::nearbyintf(wg[c] / s) + float(z);
                out[c] = uint8_t(std::clamp(vi, 0.0f, qmax));
            }
        }
    });
    return u;
}

Matrix rtn_dequantize(const UniformQuant& u) {
    Matrix out(u.n, u.k);
    const int groups = u.groups();
    parallel_for(u.n, [&](int64_t i) {
        for (int grp = 0; grp < groups; ++grp) {
            float s = u.scale[i * groups + grp];
            float z = float(u.zero[i * groups + grp]);
            const uint8_t* in = u.w_int.data() + (i * u.k + int64_t(grp) * u.g);
            float* dst = out.row(i) + int64_t(grp) * u.g;
            for (int c = 0; c < u.g; ++c) dst[c] = (float(in[c]) - z) * s;
        }
    });
    return out;
}

std::pair<HlqParams, BitAssignment> uniform_to_hlq(const UniformQuant& u) {
    HlqParams p;
    p.n = u.n;
    p.k = u.k;
    p.q = u.q;
    p.g = u.g;
    const int groups = p.groups();
    p.scales.resize(size_t(p.n) * groups * p.q);
    p.zeros.resize(size_t(p.n) * groups);
    for (int64_t i = 0; i < p.n; ++i) {
        for (int grp = 0; grp < groups; ++grp) {
            const float s = u.scale[i * groups + grp];
            float* dst = p.scale_at(i, grp);
            for (int j = 0; j < p.q; ++j) dst[j] = s * float(1 << j);
            p.zeros[i * groups + grp] = -float(u.zero[i * groups + grp]) * s;
        }
    }
    BitAssignment bits;
    bits.n = u.n;
    bits.k = u.k;
    bits.q = u.q;
    bits.idx = u.w_int;
    return {std::move(p), std::move(bits)};
}

// ============================================================================
// Hierarchical format
// ============================================================================

HlqParams hlq_init(const Matrix& w, const QuantConfig& cfg) {
    validate_config(cfg, w, "hlq_init");
    require_finite(w, "hlq_init: weights");

    HlqParams p;
    p.n = int(w.rows);
    p.k = int(w.cols);
    p.q = cfg.q;
    p.g = cfg.g;
    const int groups = p.groups();
    p.scales.resize(size_t(p.n) * groups * cfg.q);
    p.zeros.resize(size_t(p.n) * groups);

    const float levels = float((1 << cfg.q) - 1);
    parallel_for(w.rows, [&](int64_t i) {
        const float* row = w.row(i);
        for (int grp = 0; grp < groups; ++grp) {
            const float* wg = row + int64_t(grp) * cfg.g;
            float mn = wg[0], mx = wg[0];
            for (int c = 1; c < cfg.g; ++c) {
                mn = std::min(mn, wg[c]);
                mx = std::max(mx, wg[c]);
            }
            float delta = (mx - mn) / levels;
            float* s = p.scale_at(i, grp);
            for (int j = 0; j < cfg.q; ++j) s[j] = delta * float(1 << j);
            p.zeros[i * groups + grp] = mn;
        }
    });
    return p;
}

BitAssignment hlq_assign(const Matrix& w, const HlqParams& p, const Codebook& cb) {
    if (int(w.rows) != p.n || int(w.cols) != p.k)
        throw Error(ErrorKind::data, "hlq_assign: weight shape does not match params");
    if (cb.q != p.q)
        throw Error(ErrorKind::config, "hlq_assign: codebook bit width mismatch");

    BitAssignment bits;
    bits.n = p.n;
    bits.k = p.k;
    bits.q = p.q;
    bits.idx.resize(size_t(p.n) * p.k);
    const int groups = p.groups();
    const int count = cb.rows();

    parallel_for(p.n, [&](int64_t i) {
        float v[1 << kMaxBits];
        const float* row = w.row(i);
        uint8_t* out = bits.idx.data() + i * p.k;
        for (int grp = 0; grp < groups; ++grp) {
            group_candidates(p.scale_at(i, grp), p.zero_at(i, grp), cb, v);
            const float* wg = row + int64_t(grp) * p.g;
            uint8_t* og = out + int64_t(grp) * p.g;
            for (int c = 0; c < p.g; ++c) og[c] = uint8_t(nearest_candidate(wg[c], v, count));
        }
    });
    return bits;
}

HlqParams hlq_lse(const Matrix& w, const BitAssignment& bits, const QuantConfig& cfg) {
    validate_config(cfg, w, "hlq_lse");
    if (int(w.rows) != bits.n || int(w.cols) != bits.k || cfg.q != bits.q)
        throw Error(ErrorKind::data, "hlq_lse: assignment shape does not match weights/config");

    const Codebook cb = build_codebook(cfg.q);
    HlqParams p;
    p.n = bits.n;
    p.k = bits.k;
    p.q = cfg.q;
    p.g = cfg.g;
    const int groups = p.groups();
    p.scales.resize(size_t(p.n) * groups * cfg.q);
    p.zeros.resize(size_t(p.n) * groups);

    parallel_for(p.n, [&](int64_t i) {
        double s[kMaxBits], z;
        for (int grp = 0; grp < groups; ++grp) {
            group_lse(w.row(i) + int64_t(grp) * cfg.g, bits.idx.data() + i * p.k + int64_t(grp) * cfg.g,
                      cb, cfg.g, s, &z);
            float* so = p.scale_at(i, grp);
            for (int j = 0; j < cfg.q; ++j) so[j] = float(s[j]);
            p.zeros[i * groups + grp] = float(z);
        }
    });
    return p;
}

Matrix hlq_dequantize(const BitAssignment& bits, const HlqParams& p) {
    if (bits.n != p.n || bits.k != p.k || bits.q != p.q)
        throw Error(ErrorKind::data, "hlq_dequantize: assignment does not match params");

    const Codebook cb = build_codebook(p.q);
    Matrix out(p.n, p.k);
    const int groups = p.groups();
    parallel_for(p.n, [&](int64_t i) {
        float v[1 << kMaxBits];
        const uint8_t* in = bits.idx.data() + i * p.k;
        float* dst = out.row(i);
        for (int grp = 0; grp < groups; ++grp) {
            group_candidates(p.scale_at(i, grp), p.zero_at(i, grp), cb, v);
            for (int c = 0; c < p.g; ++c) dst[int64_t(grp) * p.g + c] = v[in[int64_t(grp) * p.g + c]];
        }
    });
    return out;
}

std::pair<HlqParams, BitAssignment> hlq_alternating(const Matrix& w, const QuantConfig& cfg,
                                                    AlternatingTrace* trace) {
    validate_config(cfg, w, "hlq_alternating");
    require_finite(w, "hlq_alternating: weights");

    const Codebook cb = build_codebook(cfg.q);
    const int n = int(w.rows), k = int(w.cols);
    const int groups = k / cfg.g;
    const int count = cb.rows();

    HlqParams p;
    p.n = n;
    p.k = k;
    p.q = cfg.q;
    p.g = cfg.g;
    p.scales.resize(size_t(n) * groups * cfg.q);
    p.zeros.resize(size_t(n) * groups);
    BitAssignment bits;
    bits.n = n;
    bits.k = k;
    bits.q = cfg.q;
    bits.idx.resize(size_t(n) * k);

    if (trace) {
        trace->iters = cfg.t_max;
        trace->groups = int64_t(n) * groups;
        trace->mse.assign(size_t(cfg.t_max) * n * groups, 0.0);
    }

    const float levels = float((1 << cfg.q) - 1);
    for (int64_t row0 = 0; row0 < n; row0 += cfg.chunk_rows) {
        const int64_t row1 = std::min<int64_t>(n, row0 + cfg.chunk_rows);
        parallel_for(row1 - row0, [&](int64_t r) {
            const int64_t i = row0 + r;
            const float* row = w.row(i);
            uint8_t* rowbits = bits.idx.data() + i * k;
            float v[1 << kMaxBits];
            double sd[kMaxBits], zd;

            for (int grp = 0; grp < groups; ++grp) {
                const float* wg = row + int64_t(grp) * cfg.g;
                uint8_t* bg = rowbits + int64_t(grp) * cfg.g;

                float mn = wg[0], mx = wg[0];
                for (int c = 1; c < cfg.g; ++c) {
                    mn = std::min(mn, wg[c]);
                    mx = std::max(mx, wg[c]);
                }
                float delta = (mx - mn) / levels;
                float s[kMaxBits], z = mn;
                for (int j = 0; j < cfg.q; ++j) s[j] = delta * float(1 << j);

                for (int t = 0; t < cfg.t_max; ++t) {
                    group_candidates(s, z, cb, v);
                    for (int c = 0; c < cfg.g; ++c) bg[c] = uint8_t(nearest_candidate(wg[c], v, count));
                    group_lse(wg, bg, cb, cfg.g, sd, &zd);
                    for (int j = 0; j < cfg.q; ++j) s[j] = float(sd[j]);
                    z = float(zd);
                    if (trace) {
                        group_candidates(s, z, cb, v);
                        trace->mse[size_t(t) * trace->groups + i * groups + grp] =
                            group_mse_f64(wg, bg, v, cfg.g);
                    }
                }

                float* so = p.scale_at(i, grp);
                for (int j = 0; j < cfg.q; ++j) so[j] = s[j];
                p.zeros[i * groups + grp] = z;
            }
        });
    }

    // Final assignment under the refit parameters (the loop's last assignment
    // predates the last least-squares step).
    bits = hlq_assign(w, p, cb);
    return {std::move(p), std::move(bits)};
}

std::pair<HlqParams, BitAssignment> hlq_gradient(const Matrix& w, const QuantConfig& cfg) {
    validate_config(cfg, w, "hlq_gradient");
    require_finite(w, "hlq_gradient: weights");

    const Codebook cb = build_codebook(cfg.q);
    const int n = int(w.rows), k = int(w.cols);
    const int groups = k / cfg.g;
    const int count = cb.rows();

    HlqParams p;
    p.n = n;
    p.k = k;
    p.q = cfg.q;
    p.g = cfg.g;
    p.scales.resize(size_t(n) * groups * cfg.q);
    p.zeros.resize(size_t(n) * groups);

    const float levels = float((1 << cfg.q) - 1);
    const double inv_g = 1.0 / cfg.g;

    for (int64_t row0 = 0; row0 < n; row0 += cfg.chunk_rows) {
        const int64_t row1 = std::min<int64_t>(n, row0 + cfg.chunk_rows);
        parallel_for(row1 - row0, [&](int64_t r) {
            const int64_t i = row0 + r;
            const float* row = w.row(i);
            std::vector<uint8_t> bg(cfg.g);
            double v[1 << kMaxBits];

            for (int grp = 0; grp < groups; ++grp) {
                const float* wg = row + int64_t(grp) * cfg.g;

                float mn = wg[0], mx = wg[0];
                for (int c = 1; c < cfg.g; ++c) {
                    mn = std::min(mn, wg[c]);
                    mx = std::max(mx, wg[c]);
                }
                double s[kMaxBits], z = mn;
                double delta = double((mx - mn) / levels);
                for (int j = 0; j < cfg.q; ++j) s[j] = delta * double(1 << j);

                double pre = std::numeric_limits<double>::infinity();
                for (int t = 0; t < cfg.t_max; ++t) {
                    // assign under current parameters
                    for (int m = 0; m < count; ++m) {
                        double acc = 0.0;
                        for (int j = 0; j < cfg.q; ++j)
                            if (cb.bit(m, j)) acc += s[j];
                        v[m] = acc + z;
                    }
                    double loss = 0.0;
                    double gs[kMaxBits] = {0};
                    double gz = 0.0;
                    for (int c = 0; c < cfg.g; ++c) {
                        double wd = wg[c];
                        int best = 0;
                        double best_d = std::abs(wd - v[0]);
                        for (int m = 1; m < count; ++m) {
                            double d = std::abs(wd - v[m]);
                            if (d < best_d) {
                                best_d = d;
                                best = m;
                            }
                        }
                        bg[c] = uint8_t(best);
                        double res = v[best] - wd;
                        loss += res * res;
                        for (int j = 0; j < cfg.q; ++j)
                            if (cb.bit(best, j)) gs[j] += res;
                        gz += res;
                    }
                    loss *= inv_g;

                    // one plain gradient step on (s, z); no gradient crosses
                    // the argmin
                    for (int j = 0; j < cfg.q; ++j)
                        s[j] = std::max(0.0, s[j] - cfg.lr * (2.0 * inv_g) * gs[j]);
                    z = std::clamp(z - cfg.lr * (2.0 * inv_g) * gz, double(mn), double(mx));

                    if (pre - loss < cfg.epsilon) break;
                    pre = loss;
                }

                float* so = p.scale_at(i, grp);
                for (int j = 0; j < cfg.q; ++j) so[j] = float(s[j]);
                p.zeros[i * groups + grp] = float(z);
            }
        });
    }

    BitAssignment bits = hlq_assign(w, p, cb);
    return {std::move(p), std::move(bits)};
}

GroupGradient hlq_group_gradient(std::span<const float> w, std::span<const uint8_t> idx,
                                 const Codebook& cb, std::span<const double> s, double z) {
    if (w.size() != idx.size())
        throw Error(ErrorKind::data, "hlq_group_gradient: weight/assignment length mismatch");
    if (int(s.size()) != cb.q)
        throw Error(ErrorKind::config, "hlq_group_gradient: scale count does not match codebook");

    GroupGradient out;
    out.d_scales.assign(cb.q, 0.0);
    const double inv = w.empty() ? 0.0 : 1.0 / double(w.size());
    for (size_t c = 0; c < w.size(); ++c) {
        const int m = idx[c];
        double acc = 0.0;
        for (int j = 0; j < cb.q; ++j)
            if (cb.bit(m, j)) acc += s[j];
        double res = acc + z - double(w[c]);
        out.loss += res * res;
        for (int j = 0; j < cb.q; ++j)
            if (cb.bit(m, j)) out.d_scales[j] += res;
        out.d_zero += res;
    }
    out.loss *= inv;
    for (int j = 0; j < cb.q; ++j) out.d_scales[j] *= 2.0 * inv;
    out.d_zero *= 2.0 * inv;
    return out;
}

}  // namespace hlq
