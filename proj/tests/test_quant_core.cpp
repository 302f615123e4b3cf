#include <cmath>
#include <cstdlib>
#include <random>

#include <doctest.h>

#include "hlq/quant.hpp"
#include "oracles.hpp"

using namespace hlq;

namespace {

Matrix row_matrix(std::vector<float> vals) {
    Matrix m(1, int64_t(vals.size()));
    m.data = std::move(vals);
    return m;
}

QuantConfig config(int q, int g, int t_max = 10) {
    QuantConfig cfg;
    cfg.q = q;
    cfg.g = g;
    cfg.t_max = t_max;
    return cfg;
}

// Mixed-texture random groups: gaussian, uniform, constant, and bimodal rows.
Matrix varied_groups(int64_t rows, int64_t g, uint64_t seed) {
    Matrix w(rows, g);
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> gauss(0.0f, 1.0f);
    std::uniform_real_distribution<float> uni(-1.0f, 1.0f);
    for (int64_t i = 0; i < rows; ++i) {
        float* r = w.row(i);
        switch (i % 4) {
            case 0:
                for (int64_t c = 0; c < g; ++c) r[c] = 0.02f * gauss(rng);
                break;
            case 1:
                for (int64_t c = 0; c < g; ++c) r[c] = uni(rng);
                break;
            case 2: {
                const float v = uni(rng);
                for (int64_t c = 0; c < g; ++c) r[c] = v;
                break;
            }
            default:
                for (int64_t c = 0; c < g; ++c)
                    r[c] = (c % 2 ? 1.0f : -1.0f) + 0.01f * gauss(rng);
        }
    }
    return w;
}

}  // namespace

TEST_SUITE("quant-core") {

TEST_CASE("codebook enumerates binary codewords in index order") {
    const Codebook c1 = build_codebook(1);
    REQUIRE(c1.rows() == 2);
    CHECK(c1.bit(0, 0) == 0);
    CHECK(c1.bit(1, 0) == 1);

    const Codebook c2 = build_codebook(2);
    REQUIRE(c2.rows() == 4);
    const uint8_t want[4][2] = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
    for (int m = 0; m < 4; ++m)
        for (int j = 0; j < 2; ++j) CHECK(c2.bit(m, j) == want[m][j]);

    const Codebook c3 = build_codebook(3);
    REQUIRE(c3.rows() == 8);
    CHECK(c3.bit(5, 0) == 1);
    CHECK(c3.bit(5, 1) == 0);
    CHECK(c3.bit(5, 2) == 1);

    CHECK_THROWS_AS(build_codebook(0), Error);
    CHECK_THROWS_AS(build_codebook(9), Error);
}

TEST_CASE("rtn quantizes the exact grid losslessly") {
    const Matrix w = row_matrix({0, 1, 2, 3});
    const UniformQuant u = rtn_quantize(w, config(2, 4));
    CHECK(u.scale[0] == 1.0f);
    CHECK(u.zero[0] == 0);
    const uint8_t want[4] = {0, 1, 2, 3};
    for (int c = 0; c < 4; ++c) CHECK(u.w_int[c] == want[c]);
    const Matrix back = rtn_dequantize(u);
    for (int c = 0; c < 4; ++c) CHECK(back.data[c] == w.data[c]);
}

TEST_CASE("rtn handles constant groups through the degenerate scale rule") {
    for (float c : {2.0f, -1.0f, 0.0f}) {
        const Matrix w = row_matrix({c, c, c, c});
        const UniformQuant u = rtn_quantize(w, config(2, 4));
        CHECK(u.scale[0] == 1.0f);
        const Matrix back = rtn_dequantize(u);
        for (int i = 0; i < 4; ++i) CHECK(back.data[i] == c);
    }
}

TEST_CASE("rtn example group lands on known mse") {
    const Matrix w = row_matrix({0.0f, 0.9f, 2.1f, 3.0f});
    const UniformQuant u = rtn_quantize(w, config(2, 4));
    const uint8_t want[4] = {0, 1, 2, 3};
    for (int c = 0; c < 4; ++c) CHECK(u.w_int[c] == want[c]);
    const Matrix back = rtn_dequantize(u);
    double mse = 0.0;
    for (int c = 0; c < 4; ++c) {
        const double d = double(w.data[c]) - double(back.data[c]);
        mse += d * d;
    }
    mse /= 4.0;
    CHECK(mse == doctest::Approx(0.005).epsilon(1e-6));
}

TEST_CASE("rtn dequantize broadcasts group parameters") {
    UniformQuant u;
    u.n = 1;
    u.k = 1;
    u.q = 2;
    u.g = 1;
    u.w_int = {3};
    u.scale = {0.5f};
    u.zero = {1};
    const Matrix back = rtn_dequantize(u);
    CHECK(back.data[0] == 1.0f);
}

TEST_CASE("init builds the doubling ladder from the group range") {
    const Matrix w = row_matrix({-1, 0, 2, 6});
    const HlqParams p = hlq_init(w, config(3, 4));
    const float* s = p.scale_at(0, 0);
    CHECK(s[0] == 1.0f);
    CHECK(s[1] == 2.0f);
    CHECK(s[2] == 4.0f);
    CHECK(p.zero_at(0, 0) == -1.0f);

    const HlqParams p2 = hlq_init(row_matrix({0, 1, 2, 3}), config(2, 4));
    CHECK(p2.scale_at(0, 0)[0] == 1.0f);
    CHECK(p2.scale_at(0, 0)[1] == 2.0f);
    CHECK(p2.zero_at(0, 0) == 0.0f);

    const HlqParams pc = hlq_init(row_matrix({0.7f, 0.7f, 0.7f, 0.7f}), config(3, 4));
    for (int j = 0; j < 3; ++j) CHECK(pc.scale_at(0, 0)[j] == 0.0f);
    CHECK(pc.zero_at(0, 0) == 0.7f);
    const Codebook cb = build_codebook(3);
    const Matrix exact = hlq_dequantize(hlq_assign(row_matrix({0.7f, 0.7f, 0.7f, 0.7f}), pc, cb),
                                        pc);
    for (int c = 0; c < 4; ++c) CHECK(exact.data[c] == 0.7f);
}

TEST_CASE("assignment picks the nearest candidate, ties to the smaller index") {
    HlqParams p;
    p.n = 1;
    p.k = 4;
    p.q = 2;
    p.g = 4;
    p.scales = {1.0f, 2.0f};
    p.zeros = {0.0f};
    const Codebook cb = build_codebook(2);

    const BitAssignment a = hlq_assign(row_matrix({0.4f, 1.6f, 2.4f, 3.3f}), p, cb);
    const uint8_t want[4] = {0, 2, 2, 3};
    for (int c = 0; c < 4; ++c) CHECK(a.idx[c] == want[c]);

    const BitAssignment exact = hlq_assign(row_matrix({2.0f, 2.0f, 2.0f, 2.0f}), p, cb);
    for (int c = 0; c < 4; ++c) CHECK(exact.idx[c] == 2);

    const BitAssignment tie = hlq_assign(row_matrix({1.5f, 1.5f, 1.5f, 1.5f}), p, cb);
    for (int c = 0; c < 4; ++c) CHECK(tie.idx[c] == 1);
}

TEST_CASE("assignment is optimal under exhaustive candidate scan") {
    std::mt19937_64 rng(11);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    for (int q = 1; q <= 4; ++q) {
        const int g = 32;
        Matrix w(2, g);
        for (float& v : w.data) v = dist(rng);
        QuantConfig cfg = config(q, g);
        const HlqParams p = hlq_init(w, cfg);
        const Codebook cb = build_codebook(q);
        const BitAssignment bits = hlq_assign(w, p, cb);
        const CandidateSet cs = build_candidates(p, cb);
        for (int64_t i = 0; i < 2; ++i)
            for (int c = 0; c < g; ++c) {
                const float* v = cs.at(i, 0);
                const double chosen = std::abs(double(w.at(i, c)) - double(v[bits.idx[i * g + c]]));
                for (int m = 0; m < cb.rows(); ++m)
                    CHECK(std::abs(double(w.at(i, c)) - double(v[m])) >= chosen);
            }
    }
}

TEST_CASE("least squares recovers an exact linear fit") {
    const Matrix w = row_matrix({0, 1, 2, 3});
    BitAssignment bits;
    bits.n = 1;
    bits.k = 4;
    bits.q = 2;
    bits.idx = {0, 1, 2, 3};
    const HlqParams p = hlq_lse(w, bits, config(2, 4));
    CHECK(p.scale_at(0, 0)[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(p.scale_at(0, 0)[1] == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(p.zero_at(0, 0) == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("rank-deficient groups get the minimum-norm solution") {
    const Matrix w = row_matrix({1.0f, 2.0f, 3.0f, 6.0f});

    // Every weight on codeword 0: only z is identified; min-norm puts the
    // group mean entirely on z.
    BitAssignment zero_bits;
    zero_bits.n = 1;
    zero_bits.k = 4;
    zero_bits.q = 2;
    zero_bits.idx = {0, 0, 0, 0};
    const HlqParams pz = hlq_lse(w, zero_bits, config(2, 4));
    CHECK(pz.scale_at(0, 0)[0] == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(pz.scale_at(0, 0)[1] == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(pz.zero_at(0, 0) == doctest::Approx(3.0).epsilon(1e-6));

    // Every weight on codeword 3: s_0 + s_1 + z is identified; min-norm
    // splits the mean three ways.
    BitAssignment ones_bits = zero_bits;
    ones_bits.idx = {3, 3, 3, 3};
    const HlqParams po = hlq_lse(w, ones_bits, config(2, 4));
    CHECK(po.scale_at(0, 0)[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(po.scale_at(0, 0)[1] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(po.zero_at(0, 0) == doctest::Approx(1.0).epsilon(1e-6));

    // Both cases against the dense minimum-norm oracle.
    for (const BitAssignment* bits : {&zero_bits, &ones_bits}) {
        const HlqParams p = hlq_lse(w, *bits, config(2, 4));
        const auto ref = oracle::lse_min_norm(std::span<const float>(w.data),
                                              std::span<const uint8_t>(bits->idx), 2);
        CHECK(p.scale_at(0, 0)[0] == doctest::Approx(ref[0]).epsilon(1e-9));
        CHECK(p.scale_at(0, 0)[1] == doctest::Approx(ref[1]).epsilon(1e-9));
        CHECK(p.zero_at(0, 0) == doctest::Approx(ref[2]).epsilon(1e-9));
    }
}

TEST_CASE("least squares matches the dense oracle on random groups") {
    std::mt19937_64 rng(3);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    std::uniform_int_distribution<int> pick(0, 7);
    for (int trial = 0; trial < 50; ++trial) {
        const int g = 32, q = 3;
        Matrix w(1, g);
        for (float& v : w.data) v = dist(rng);
        BitAssignment bits;
        bits.n = 1;
        bits.k = g;
        bits.q = q;
        bits.idx.resize(g);
        for (auto& b : bits.idx) b = uint8_t(pick(rng));
        const HlqParams p = hlq_lse(w, bits, config(q, g));
        const auto ref = oracle::lse_min_norm(std::span<const float>(w.data),
                                              std::span<const uint8_t>(bits.idx), q);
        const double norm = std::max({1.0, std::abs(ref[0]), std::abs(ref[1]), std::abs(ref[2]),
                                      std::abs(ref[3])});
        for (int j = 0; j < q; ++j)
            CHECK(std::abs(double(p.scale_at(0, 0)[j]) - ref[j]) / norm < 1e-5);
        CHECK(std::abs(double(p.zero_at(0, 0)) - ref[q]) / norm < 1e-5);
    }
}

TEST_CASE("least squares output is first-order stationary") {
    std::mt19937_64 rng(4);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    const int g = 32, q = 2;
    Matrix w(1, g);
    for (float& v : w.data) v = dist(rng);
    const QuantConfig cfg = config(q, g);
    const Codebook cb = build_codebook(q);
    const BitAssignment bits = hlq_assign(w, hlq_init(w, cfg), cb);
    const HlqParams p = hlq_lse(w, bits, cfg);

    std::vector<double> s = {double(p.scale_at(0, 0)[0]), double(p.scale_at(0, 0)[1])};
    const double z = double(p.zero_at(0, 0));
    auto residual = [&](double s0, double s1, double zz) {
        double acc = 0.0;
        for (int c = 0; c < g; ++c) {
            const double v = s0 * ((bits.idx[c] >> 0) & 1) + s1 * ((bits.idx[c] >> 1) & 1) + zz;
            acc += (double(w.data[c]) - v) * (double(w.data[c]) - v);
        }
        return acc;
    };
    const double base = residual(s[0], s[1], z);
    for (double d : {-1e-3, 1e-3}) {
        CHECK(residual(s[0] + d, s[1], z) > base - 1e-9);
        CHECK(residual(s[0], s[1] + d, z) > base - 1e-9);
        CHECK(residual(s[0], s[1], z + d) > base - 1e-9);
    }
}

TEST_CASE("dequantize applies the group-broadcast reconstruction") {
    HlqParams p;
    p.n = 1;
    p.k = 4;
    p.q = 2;
    p.g = 4;
    p.scales = {1.0f, 2.0f};
    p.zeros = {-1.0f};
    BitAssignment bits;
    bits.n = 1;
    bits.k = 4;
    bits.q = 2;

    bits.idx = {0, 0, 0, 0};
    const Matrix all_zero = hlq_dequantize(bits, p);
    for (int c = 0; c < 4; ++c) CHECK(all_zero.data[c] == -1.0f);

    bits.idx = {3, 3, 3, 3};
    const Matrix full = hlq_dequantize(bits, p);
    for (int c = 0; c < 4; ++c) CHECK(full.data[c] == 2.0f);
}

TEST_CASE("grid-representable inputs survive assign then dequantize exactly") {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> pick(0, 3);
    HlqParams p;
    p.n = 1;
    p.k = 16;
    p.q = 2;
    p.g = 16;
    p.scales = {0.3f, 0.7f};
    p.zeros = {-0.2f};
    const Codebook cb = build_codebook(2);
    const CandidateSet cs = build_candidates(p, cb);

    Matrix w(1, 16);
    for (float& v : w.data) v = cs.at(0, 0)[pick(rng)];
    const Matrix back = hlq_dequantize(hlq_assign(w, p, cb), p);
    for (int c = 0; c < 16; ++c) CHECK(back.data[c] == w.data[c]);
}

TEST_CASE("candidate values are the one-pass float32 sums") {
    HlqParams p;
    p.n = 1;
    p.k = 4;
    p.q = 3;
    p.g = 4;
    p.scales = {0.1f, 0.2f, 0.4f};
    p.zeros = {0.05f};
    const Codebook cb = build_codebook(3);
    const CandidateSet cs = build_candidates(p, cb);
    for (int m = 0; m < 8; ++m) {
        float acc = 0.0f;
        for (int j = 0; j < 3; ++j)
            if ((m >> j) & 1) acc += p.scales[size_t(j)];
        acc += p.zeros[0];
        CHECK(cs.at(0, 0)[m] == acc);
    }
}

TEST_CASE("uniform state maps exactly onto the hierarchical form") {
    std::mt19937_64 rng(6);
    std::normal_distribution<float> dist(0.0f, 0.5f);
    Matrix w(4, 64);
    for (float& v : w.data) v = dist(rng);
    const UniformQuant u = rtn_quantize(w, config(3, 32));
    const auto [p, bits] = uniform_to_hlq(u);
    const Matrix a = rtn_dequantize(u);
    const Matrix b = hlq_dequantize(bits, p);
    for (size_t i = 0; i < a.data.size(); ++i)
        CHECK(std::abs(a.data[i] - b.data[i]) <= 1e-6f * std::max(1.0f, std::abs(a.data[i])));

    // Integer grids survive the mapping bit-exactly.
    const UniformQuant ug = rtn_quantize(row_matrix({0, 1, 2, 3}), config(2, 4));
    const auto [pg, bg] = uniform_to_hlq(ug);
    const Matrix back = hlq_dequantize(bg, pg);
    for (int c = 0; c < 4; ++c) CHECK(back.data[c] == float(c));
}

TEST_CASE("alternating search is monotone per group per iteration") {
    const Matrix w = varied_groups(200, 64, 7);
    for (int q : {2, 3}) {
        AlternatingTrace trace;
        hlq_alternating(w, config(q, 64, 10), &trace);
        REQUIRE(trace.iters == 10);
        REQUIRE(trace.groups == 200);
        for (int t = 1; t < trace.iters; ++t)
            for (int64_t grp = 0; grp < trace.groups; ++grp)
                CHECK(trace.at(t, grp) <= trace.at(t - 1, grp) + 1e-12);
    }
}

TEST_CASE("constant groups are exact from the first iteration") {
    Matrix w(1, 8);
    for (float& v : w.data) v = 0.37f;
    AlternatingTrace trace;
    const auto [p, bits] = hlq_alternating(w, config(2, 8, 4), &trace);
    for (int t = 0; t < trace.iters; ++t) CHECK(trace.at(t, 0) == 0.0);
    const Matrix back = hlq_dequantize(bits, p);
    for (int c = 0; c < 8; ++c) CHECK(back.data[c] == 0.37f);
}

TEST_CASE("alternating beats rtn on a gaussian group") {
    const Matrix w = oracle::gaussian_matrix(1, 128, 0.02f, 12345);
    const QuantConfig cfg = config(3, 128, 10);
    const auto [p, bits] = hlq_alternating(w, cfg);
    const double hlq_mse = oracle::group_mse(std::span<const float>(w.data),
                                             std::span<const float>(hlq_dequantize(bits, p).data));
    const double rtn_mse = oracle::group_mse(
        std::span<const float>(w.data),
        std::span<const float>(rtn_dequantize(rtn_quantize(w, cfg)).data));
    CHECK(hlq_mse < rtn_mse);
}

TEST_CASE("results are bit-identical across chunk sizes and worker counts") {
    const Matrix w = varied_groups(37, 64, 8);
    const auto [p0, b0] = hlq_alternating(w, config(2, 32, 6));

    for (int chunk : {1, 5, 200}) {
        QuantConfig cfg = config(2, 32, 6);
        cfg.chunk_rows = chunk;
        const auto [p, b] = hlq_alternating(w, cfg);
        CHECK(p.scales == p0.scales);
        CHECK(p.zeros == p0.zeros);
        CHECK(b.idx == b0.idx);
    }

    for (const char* threads : {"1", "4"}) {
        setenv("HLQ_THREADS", threads, 1);
        const auto [p, b] = hlq_alternating(w, config(2, 32, 6));
        CHECK(p.scales == p0.scales);
        CHECK(p.zeros == p0.zeros);
        CHECK(b.idx == b0.idx);
    }
    unsetenv("HLQ_THREADS");
}

TEST_CASE("group gradients match central finite differences") {
    std::mt19937_64 rng(9);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    const int g = 32, q = 3;
    Matrix w(1, g);
    for (float& v : w.data) v = dist(rng);
    const QuantConfig cfg = config(q, g);
    const Codebook cb = build_codebook(q);
    const BitAssignment bits = hlq_assign(w, hlq_init(w, cfg), cb);

    std::vector<double> s = {0.11, 0.43, 0.71};
    const double z = -0.13;
    const GroupGradient grad = hlq_group_gradient(std::span<const float>(w.data),
                                                  std::span<const uint8_t>(bits.idx), cb,
                                                  std::span<const double>(s), z);

    const double h = 1e-4;
    for (int j = 0; j < q; ++j) {
        const double fd = oracle::central_fd(
            [&](double v) {
                std::vector<double> sj = s;
                sj[size_t(j)] = v;
                return hlq_group_gradient(std::span<const float>(w.data),
                                          std::span<const uint8_t>(bits.idx), cb,
                                          std::span<const double>(sj), z)
                    .loss;
            },
            s[size_t(j)], h);
        CHECK(std::abs(grad.d_scales[size_t(j)] - fd) / std::max(1.0, std::abs(fd)) < 1e-4);
    }
    const double fdz = oracle::central_fd(
        [&](double v) {
            return hlq_group_gradient(std::span<const float>(w.data),
                                      std::span<const uint8_t>(bits.idx), cb,
                                      std::span<const double>(s), v)
                .loss;
        },
        z, h);
    CHECK(std::abs(grad.d_zero - fdz) / std::max(1.0, std::abs(fdz)) < 1e-4);
}

TEST_CASE("gradient search with zero learning rate keeps the initialization") {
    const Matrix w = varied_groups(8, 32, 10);
    QuantConfig cfg = config(2, 32, 25);
    cfg.lr = 0.0;  // early stopping fires immediately; params must stay put
    const auto [p, bits] = hlq_gradient(w, cfg);
    const HlqParams init = hlq_init(w, cfg);
    CHECK(p.scales == init.scales);
    CHECK(p.zeros == init.zeros);
    const BitAssignment want = hlq_assign(w, init, build_codebook(2));
    CHECK(bits.idx == want.idx);
}

TEST_CASE("gradient search keeps scales non-negative") {
    const Matrix w = varied_groups(32, 64, 13);
    QuantConfig cfg = config(2, 64, 50);
    const auto [p, bits] = hlq_gradient(w, cfg);
    for (float s : p.scales) CHECK(s >= 0.0f);
    (void)bits;
}

TEST_CASE("converged gradient search lands within 10% of alternating") {
    // The two searches agree only once the gradient path has converged;
    // at matched small iteration counts plain gradient descent is still far
    // from its fixed point.
    for (int layer = 0; layer < 20; ++layer) {
        const int q = 2 + (layer % 2);
        const Matrix w = oracle::gaussian_matrix(8, 256, 0.02f, 100 + uint64_t(layer));

        const auto [pa, ba] = hlq_alternating(w, config(q, 64, 10));
        QuantConfig gcfg = config(q, 64, 600);
        gcfg.lr = 0.4;
        gcfg.epsilon = 1e-14;
        const auto [pg, bg] = hlq_gradient(w, gcfg);

        const double alt = oracle::group_mse(
            std::span<const float>(w.data), std::span<const float>(hlq_dequantize(ba, pa).data));
        const double grd = oracle::group_mse(
            std::span<const float>(w.data), std::span<const float>(hlq_dequantize(bg, pg).data));
        CHECK(grd <= 1.1 * alt);
    }
}

TEST_CASE("invalid configurations and inputs are rejected") {
    const Matrix w = row_matrix({0, 1, 2, 3});
    CHECK_THROWS_AS(rtn_quantize(w, config(0, 4)), Error);
    CHECK_THROWS_AS(rtn_quantize(w, config(9, 4)), Error);
    CHECK_THROWS_AS(hlq_alternating(w, config(2, 3)), Error);  // g does not divide k
    QuantConfig bad = config(2, 4);
    bad.t_max = 0;
    CHECK_THROWS_AS(hlq_alternating(w, bad), Error);

    Matrix nan_w = row_matrix({0, 1, 2, std::nanf("")});
    try {
        hlq_alternating(nan_w, config(2, 4));
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::data);
    }
}

}  // TEST_SUITE
