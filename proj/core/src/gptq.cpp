#include "hlq/gptq.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "hlq/threading.hpp"

namespace hlq {

HessianAccumulator accumulate_hessian(const Matrix& x, double lambda_frac) {
    if (x.rows < 1 || x.cols < 1)
        throw Error(ErrorKind::calibration, "accumulate_hessian: empty calibration set");
    if (lambda_frac < 0)
        throw Error(ErrorKind::config, "accumulate_hessian: lambda_frac must be >= 0");
    require_finite(x, "accumulate_hessian: calibration activations");

    const int64_t m = x.rows, k = x.cols;
    HessianAccumulator out;
    out.k = int(k);
    out.h.assign(size_t(k) * k, 0.0);

    // H[i][j] = 2 * sum_s x[s,i] * x[s,j]; each row of H is owned by one work
    // item and accumulated in sample order.
    parallel_for(k, [&](int64_t i) {
        double* hi = out.h.data() + i * k;
        for (int64_t s = 0; s < m; ++s) {
            const float* xs = x.row(s);
            const double xi = 2.0 * double(xs[i]);
            if (xi == 0.0) continue;
            for (int64_t j = i; j < k; ++j) hi[j] += xi * double(xs[j]);
        }
    });
    for (int64_t i = 0; i < k; ++i)
        for (int64_t j = 0; j < i; ++j) out.h[i * k + j] = out.h[j * k + i];

    double diag_mean = 0.0;
    for (int64_t i = 0; i < k; ++i) diag_mean += out.h[i * k + i];
    diag_mean /= double(k);
    if (diag_mean == 0.0)
        throw Error(ErrorKind::calibration,
                    "accumulate_hessian: calibration activations are all zero");

    const double lambda = lambda_frac * diag_mean;
    for (int64_t i = 0; i < k; ++i) out.h[i * k + i] += lambda;
    return out;
}

std::pair<HlqParams, BitAssignment> hlq_gptq_layer(const Matrix& w, const HessianAccumulator& hess,
                                                   const QuantConfig& cfg,
                                                   const GptqConfig& gcfg) {
    const int n = int(w.rows), k = int(w.cols);
    if (hess.k != k)
        throw Error(ErrorKind::config, "hlq_gptq_layer: Hessian size " + std::to_string(hess.k) +
                                           " does not match k " + std::to_string(k));
    if (gcfg.block < 1 || gcfg.block % cfg.g != 0)
        throw Error(ErrorKind::config,
                    "hlq_gptq_layer: block (" + std::to_string(gcfg.block) +
                        ") must be a positive multiple of g (" + std::to_string(cfg.g) + ")");
    require_finite(w, "hlq_gptq_layer: weights");

    using Md = Eigen::MatrixXd;
    Eigen::Map<const Md> hmap(hess.h.data(), k, k);

    Eigen::LLT<Md> llt(hmap);
    if (llt.info() != Eigen::Success)
        throw Error(ErrorKind::numeric,
                    "hlq_gptq_layer: Hessian is not positive definite; increase lambda_frac "
                    "(damping) or provide more calibration samples");
    const Md hinv = llt.solve(Md::Identity(k, k));

    // Working copy in float64; blocks are cast to float32 for quantization so
    // the per-block search sees exactly what a standalone call would.
    Md work(n, k);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t c = 0; c < k; ++c) work(i, c) = double(w.at(i, c));

    const int groups = k / cfg.g;
    HlqParams params;
    params.n = n;
    params.k = k;
    params.q = cfg.q;
    params.g = cfg.g;
    params.scales.resize(size_t(n) * groups * cfg.q);
    params.zeros.resize(size_t(n) * groups);
    BitAssignment bits;
    bits.n = n;
    bits.k = k;
    bits.q = cfg.q;
    bits.idx.resize(size_t(n) * k);

    for (int c0 = 0; c0 < k; c0 += gcfg.block) {
        const int c1 = std::min(k, c0 + gcfg.block);
        const int bs = c1 - c0;

        Matrix block(n, bs);
        for (int64_t i = 0; i < n; ++i)
            for (int c = 0; c < bs; ++c) block.at(i, c) = float(work(i, c0 + c));

        auto [bp, bb] = hlq_alternating(block, cfg);
        const Matrix bhat = hlq_dequantize(bb, bp);

        // freeze the block's parameters into the layer-wide result
        const int grp0 = c0 / cfg.g;
        const int bgroups = bs / cfg.g;
        for (int64_t i = 0; i < n; ++i) {
            for (int bg = 0; bg < bgroups; ++bg) {
                const float* src = bp.scale_at(i, bg);
                float* dst = params.scale_at(i, grp0 + bg);
                for (int j = 0; j < cfg.q; ++j) dst[j] = src[j];
                params.zeros[i * groups + grp0 + bg] = bp.zero_at(i, bg);
            }
            std::copy(bb.idx.begin() + i * bs, bb.idx.begin() + (i + 1) * bs,
                      bits.idx.begin() + i * k + c0);
        }

        if (c1 < k) {
            Md err(n, bs);
            for (int64_t i = 0; i < n; ++i)
                for (int c = 0; c < bs; ++c)
                    err(i, c) = work(i, c0 + c) - double(bhat.at(i, c));

            const Md s = hinv.block(c0, c0, bs, bs)
                             .llt()
                             .solve(hinv.block(c0, c1, bs, k - c1));
            work.block(0, c1, n, k - c1).noalias() -= err * s;
        }
    }

    return {std::move(params), std::move(bits)};
}

double proxy_loss(const Matrix& w, const Matrix& w_hat, const HessianAccumulator& hess) {
    if (!w.same_shape(w_hat))
        throw Error(ErrorKind::data, "proxy_loss: weight shapes disagree");
    if (hess.k != int(w.cols))
        throw Error(ErrorKind::config, "proxy_loss: Hessian size does not match k");

    const int64_t n = w.rows, k = w.cols;
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const float* wi = w.row(i);
        const float* qi = w_hat.row(i);
        // e H e^T accumulated row by row
        for (int64_t a = 0; a < k; ++a) {
            const double ea = double(wi[a]) - double(qi[a]);
            if (ea == 0.0) continue;
            const double* ha = hess.h.data() + a * k;
            double acc = 0.0;
            for (int64_t b = 0; b < k; ++b) acc += ha[b] * (double(wi[b]) - double(qi[b]));
            total += ea * acc;
        }
    }
    return total;
}

}  // namespace hlq
