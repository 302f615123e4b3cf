#include "hlq/finetune.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>

namespace hlq {

namespace {

using Md = Eigen::MatrixXd;

Md cast_to_double(const Matrix& m) {
    Md out(m.rows, m.cols);
    for (int64_t i = 0; i < m.rows; ++i)
        for (int64_t j = 0; j < m.cols; ++j) out(i, j) = double(m.at(i, j));
    return out;
}

// Reconstruction in float64 from float64 parameter vectors (the optimizer
// state); bit order matches the float32 path.
Md reconstruct_f64(const std::vector<double>& s, const std::vector<double>& z,
                   const BitAssignment& bits, int g) {
    const int n = bits.n, k = bits.k, q = bits.q;
    const int groups = k / g;
    Md w_hat(n, k);
    for (int64_t i = 0; i < n; ++i) {
        const uint8_t* bi = bits.idx.data() + i * k;
        for (int grp = 0; grp < groups; ++grp) {
            const double* sg = s.data() + (i * groups + grp) * q;
            const double zg = z[i * groups + grp];
            for (int c = 0; c < g; ++c) {
                const int m = bi[grp * g + c];
                double acc = 0.0;
                for (int j = 0; j < q; ++j)
                    if ((m >> j) & 1) acc += sg[j];
                w_hat(i, grp * g + c) = acc + zg;
            }
        }
    }
    return w_hat;
}

void check_layer(const Matrix& x, const HlqParams& p, const BitAssignment& bits,
                 const char* op) {
    if (bits.n != p.n || bits.k != p.k || bits.q != p.q)
        throw Error(ErrorKind::data, std::string(op) + ": assignment does not match params");
    if (int(x.cols) != p.k)
        throw Error(ErrorKind::data, std::string(op) + ": activation width " +
                                         std::to_string(x.cols) + " does not match k " +
                                         std::to_string(p.k));
}

struct GradState {
    std::vector<double> s, z;
};

LayerGradient gradient_impl(const Md& xd, const Md& target, const GradState& st,
                            const BitAssignment& bits, int g) {
    const int n = bits.n, k = bits.k, q = bits.q;
    const int groups = k / g;
    const int64_t m = xd.rows();

    const Md w_hat = reconstruct_f64(st.s, st.z, bits, g);
    const Md err = xd * w_hat.transpose() - target;  // [m, n]
    const double inv = 1.0 / (double(m) * double(n));

    LayerGradient out;
    out.loss = err.squaredNorm() * inv;
    const Md gw = (2.0 * inv) * (err.transpose() * xd);  // [n, k], dL/dW_hat

    out.d_scales.assign(size_t(n) * groups * q, 0.0);
    out.d_zeros.assign(size_t(n) * groups, 0.0);
    for (int64_t i = 0; i < n; ++i) {
        const uint8_t* bi = bits.idx.data() + i * k;
        for (int grp = 0; grp < groups; ++grp) {
            double* ds = out.d_scales.data() + (i * groups + grp) * q;
            double dz = 0.0;
            for (int c = 0; c < g; ++c) {
                const double gv = gw(i, grp * g + c);
                const int mm = bi[grp * g + c];
                for (int j = 0; j < q; ++j)
                    if ((mm >> j) & 1) ds[j] += gv;
                dz += gv;
            }
            out.d_zeros[i * groups + grp] = dz;
        }
    }
    return out;
}

}  // namespace

std::vector<std::pair<HlqParams, BitAssignment>> reconstruct_stage1(
    const std::vector<Matrix>& layers, const QuantConfig& cfg) {
    std::vector<std::pair<HlqParams, BitAssignment>> out;
    out.reserve(layers.size());
    for (const Matrix& w : layers) out.push_back(hlq_alternating(w, cfg));
    return out;
}

LayerGradient stage2_gradient(const Matrix& x, const Matrix& target, const HlqParams& p,
                              const BitAssignment& bits) {
    check_layer(x, p, bits, "stage2_gradient");
    if (target.rows != x.rows || target.cols != p.n)
        throw Error(ErrorKind::data, "stage2_gradient: target shape does not match batch");

    GradState st;
    st.s.assign(p.scales.begin(), p.scales.end());
    st.z.assign(p.zeros.begin(), p.zeros.end());
    return gradient_impl(cast_to_double(x), cast_to_double(target), st, bits, p.g);
}

double stage2_loss(const Matrix& w, const Matrix& x, const HlqParams& p,
                   const BitAssignment& bits) {
    check_layer(x, p, bits, "stage2_loss");
    require_shape(w, p.n, p.k, "stage2_loss: weights");

    const Md xd = cast_to_double(x);
    const Md target = xd * cast_to_double(w).transpose();
    GradState st;
    st.s.assign(p.scales.begin(), p.scales.end());
    st.z.assign(p.zeros.begin(), p.zeros.end());
    const Md w_hat = reconstruct_f64(st.s, st.z, bits, p.g);
    const Md err = xd * w_hat.transpose() - target;
    return err.squaredNorm() / (double(x.rows) * double(p.n));
}

TuneResult reconstruct_stage2(const Matrix& w, const Matrix& x, const HlqParams& init,
                              const BitAssignment& bits, const TuneConfig& tune) {
    check_layer(x, init, bits, "reconstruct_stage2");
    require_shape(w, init.n, init.k, "reconstruct_stage2: weights");
    require_finite(x, "reconstruct_stage2: calibration activations");
    require_finite(w, "reconstruct_stage2: weights");
    if (tune.lr < 0)
        throw Error(ErrorKind::config, "reconstruct_stage2: lr must be >= 0");
    if (tune.epochs < 0)
        throw Error(ErrorKind::config, "reconstruct_stage2: epochs must be >= 0");
    if (tune.batch < 0)
        throw Error(ErrorKind::config, "reconstruct_stage2: batch must be >= 0");

    const int64_t m = x.rows;
    const Md xd = cast_to_double(x);
    const Md target = xd * cast_to_double(w).transpose();  // computed once

    GradState st;
    st.s.assign(init.scales.begin(), init.scales.end());
    st.z.assign(init.zeros.begin(), init.zeros.end());

    TuneResult result;
    {
        const Md w_hat = reconstruct_f64(st.s, st.z, bits, init.g);
        const Md err = xd * w_hat.transpose() - target;
        result.initial_loss = err.squaredNorm() / (double(m) * double(init.n));
    }

    const int64_t batch = (tune.batch == 0 || tune.batch > m) ? m : tune.batch;
    const double divergence_limit = result.initial_loss * 10.0;

    for (int epoch = 0; epoch < tune.epochs; ++epoch) {
        for (int64_t b0 = 0; b0 < m; b0 += batch) {
            const int64_t b1 = std::min(m, b0 + batch);
            const Md xb = xd.middleRows(b0, b1 - b0);
            const Md tb = target.middleRows(b0, b1 - b0);
            const LayerGradient grad = gradient_impl(xb, tb, st, bits, init.g);

            if (result.initial_loss > 0.0 && grad.loss > divergence_limit)
                throw Error(ErrorKind::tuning,
                            "reconstruct_stage2: loss exceeded 10x the initial value after " +
                                std::to_string(result.steps) + " steps; lower lr (currently " +
                                std::to_string(tune.lr) + ")");

            for (size_t j = 0; j < st.s.size(); ++j) st.s[j] -= tune.lr * grad.d_scales[j];
            for (size_t j = 0; j < st.z.size(); ++j) st.z[j] -= tune.lr * grad.d_zeros[j];
            result.steps += 1;
        }
    }

    {
        const Md w_hat = reconstruct_f64(st.s, st.z, bits, init.g);
        const Md err = xd * w_hat.transpose() - target;
        result.final_loss = err.squaredNorm() / (double(m) * double(init.n));
    }

    result.params = init;
    for (size_t j = 0; j < st.s.size(); ++j) result.params.scales[j] = float(st.s[j]);
    for (size_t j = 0; j < st.z.size(); ++j) result.params.zeros[j] = float(st.z[j]);
    return result;
}

}  // namespace hlq
