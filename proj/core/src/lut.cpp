#include "hlq/lut.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <string>

#include "hlq/threading.hpp"

namespace hlq {

namespace {

std::atomic<uint64_t> g_lookups{0};

void check_kernel_shapes(const PackedWeights& packed, const MirroredParams& mp,
                         size_t x_len) {
    if (mp.n != packed.n || mp.k != packed.k || mp.q != packed.q)
        throw Error(ErrorKind::config, "lut_gemv: packed weights and params disagree on shape");
    if (mp.g < 1 || mp.g % kGroupA != 0)
        throw Error(ErrorKind::config,
                    "lut_gemv: weight group size " + std::to_string(mp.g) +
                        " must be a positive multiple of the activation group " +
                        std::to_string(kGroupA));
    if (x_len != size_t(packed.k))
        throw Error(ErrorKind::data, "lut_gemv: activation length " + std::to_string(x_len) +
                                         " does not match k " + std::to_string(packed.k));
}

}  // namespace

// ============================================================================
// Representations
// ============================================================================

BitPlanes decompose_bitplanes(const BitAssignment& bits) {
    BitPlanes out;
    out.n = bits.n;
    out.k = bits.k;
    out.q = bits.q;
    out.words_per_row = int((bits.k + 63) / 64);
    out.words.assign(size_t(out.q) * out.n * out.words_per_row, 0);

    for (int j = 0; j < out.q; ++j) {
        for (int64_t i = 0; i < out.n; ++i) {
            uint64_t* row = out.words.data() + (size_t(j) * out.n + i) * out.words_per_row;
            const uint8_t* src = bits.idx.data() + i * out.k;
            for (int64_t c = 0; c < out.k; ++c)
                row[c >> 6] |= uint64_t((src[c] >> j) & 1) << (c & 63);
        }
    }
    return out;
}

BitAssignment recompose_bitplanes(const BitPlanes& planes) {
    BitAssignment out;
    out.n = planes.n;
    out.k = planes.k;
    out.q = planes.q;
    out.idx.assign(size_t(out.n) * out.k, 0);
    for (int j = 0; j < planes.q; ++j)
        for (int64_t i = 0; i < planes.n; ++i) {
            uint8_t* dst = out.idx.data() + i * out.k;
            for (int64_t c = 0; c < planes.k; ++c)
                dst[c] |= uint8_t(planes.bit(j, i, c) << j);
        }
    return out;
}

PackedWeights rearrange_tiles(const BitPlanes& planes) {
    PackedWeights out;
    out.n = planes.n;
    out.k = planes.k;
    out.q = planes.q;
    out.rows_padded = int((planes.n + kTileRows - 1) / kTileRows) * kTileRows;
    out.cols_padded = int((planes.k + kTileCols - 1) / kTileCols) * kTileCols;
    out.words.assign(size_t(out.tiles_r()) * out.tiles_c() * out.q * (kTileCols / kGroupA), 0);

    for (int tr = 0; tr < out.tiles_r(); ++tr) {
        for (int tc = 0; tc < out.tiles_c(); ++tc) {
            for (int j = 0; j < out.q; ++j) {
                for (int chunk = 0; chunk < kTileCols / kGroupA; ++chunk) {
                    uint64_t w = 0;
                    for (int r = 0; r < kTileRows; ++r) {
                        const int64_t i = int64_t(tr) * kTileRows + r;
                        if (i >= planes.n) break;  // padded rows stay zero
                        uint64_t nib = 0;
                        for (int b = 0; b < kGroupA; ++b) {
                            const int64_t c = int64_t(tc) * kTileCols + chunk * kGroupA + b;
                            if (c < planes.k) nib |= uint64_t(planes.bit(j, i, c)) << b;
                        }
                        w |= nib << (4 * r);
                    }
                    out.words[out.word_index(tr, tc, j, chunk)] = w;
                }
            }
        }
    }
    return out;
}

BitPlanes unpack_tiles(const PackedWeights& packed) {
    BitPlanes out;
    out.n = packed.n;
    out.k = packed.k;
    out.q = packed.q;
    out.words_per_row = int((packed.k + 63) / 64);
    out.words.assign(size_t(out.q) * out.n * out.words_per_row, 0);

    for (int64_t i = 0; i < packed.n; ++i) {
        const int tr = int(i / kTileRows), r = int(i % kTileRows);
        for (int j = 0; j < packed.q; ++j) {
            uint64_t* row = out.words.data() + (size_t(j) * out.n + i) * out.words_per_row;
            for (int64_t c = 0; c < packed.k; ++c) {
                const int tc = int(c / kTileCols);
                const int chunk = int((c % kTileCols) / kGroupA);
                const int b = int(c % kGroupA);
                const uint64_t w = packed.words[packed.word_index(tr, tc, j, chunk)];
                row[c >> 6] |= ((w >> (4 * r + b)) & 1) << (c & 63);
            }
        }
    }
    return out;
}

MirroredParams mirror_transform(const HlqParams& p) {
    MirroredParams out;
    out.n = p.n;
    out.k = p.k;
    out.q = p.q;
    out.g = p.g;
    out.scales.resize(p.scales.size());
    out.zeros.resize(p.zeros.size());

    const int groups = p.groups();
    for (int64_t i = 0; i < p.n; ++i) {
        for (int grp = 0; grp < groups; ++grp) {
            const float* s = p.scale_at(i, grp);
            float* so = out.scales.data() + (i * groups + grp) * p.q;
            float ssum = 0.0f;
            for (int j = 0; j < p.q; ++j) {
                so[j] = s[j] * 0.5f;
                ssum += s[j];
            }
            out.zeros[i * groups + grp] = p.zeros[i * groups + grp] + 0.5f * ssum;
        }
    }
    return out;
}

// ============================================================================
// Tables
// ============================================================================

LookupTable build_lut(std::span<const float> x, int cols_padded) {
    LookupTable t;
    t.chunks = cols_padded / kGroupA;
    t.entries.resize(size_t(t.chunks) * 8);
    for (int c = 0; c < t.chunks; ++c) {
        float xv[kGroupA];
        for (int b = 0; b < kGroupA; ++b) {
            const size_t ci = size_t(c) * kGroupA + b;
            xv[b] = ci < x.size() ? x[ci] : 0.0f;
        }
        float* e = t.entries.data() + size_t(c) * 8;
        for (int p = 0; p < 8; ++p) {
            float acc = (p & 1) ? xv[0] : -xv[0];
            acc += (p & 2) ? xv[1] : -xv[1];
            acc += (p & 4) ? xv[2] : -xv[2];
            acc += xv[3];
            e[p] = acc;
        }
    }
    return t;
}

FullLookupTable build_lut_full(std::span<const float> x, int cols_padded) {
    FullLookupTable t;
    t.chunks = cols_padded / kGroupA;
    t.entries.resize(size_t(t.chunks) * 16);
    for (int c = 0; c < t.chunks; ++c) {
        float xv[kGroupA];
        for (int b = 0; b < kGroupA; ++b) {
            const size_t ci = size_t(c) * kGroupA + b;
            xv[b] = ci < x.size() ? x[ci] : 0.0f;
        }
        float* e = t.entries.data() + size_t(c) * 16;
        for (int m = 0; m < 16; ++m) {
            float acc = (m & 1) ? xv[0] : -xv[0];
            acc += (m & 2) ? xv[1] : -xv[1];
            acc += (m & 4) ? xv[2] : -xv[2];
            acc += (m & 8) ? xv[3] : -xv[3];
            e[m] = acc;
        }
    }
    return t;
}

QuantizedLut quantize_lut(const LookupTable& lut) {
    QuantizedLut out;
    out.chunks = lut.chunks;
    out.entries.resize(size_t(lut.chunks) * 8);
    out.scales.resize(lut.chunks);
    for (int c = 0; c < lut.chunks; ++c) {
        const float* e = lut.entries.data() + size_t(c) * 8;
        float mx = 0.0f;
        for (int p = 0; p < 8; ++p) mx = std::max(mx, std::abs(e[p]));
        const float scale = mx > 0.0f ? mx / 127.0f : 1.0f;
        out.scales[c] = scale;
        for (int p = 0; p < 8; ++p)
            out.entries[size_t(c) * 8 + p] = int8_t(std::nearbyintf(e[p] / scale));
    }
    return out;
}

// ============================================================================
// Kernels
// ============================================================================

namespace {

// Int8 full table mirrors QuantizedLut entry-for-entry through negation; the
// scale is shared (the stored half already contains the absolute maximum).
struct QuantizedFullLut {
    int chunks = 0;
    std::vector<int8_t> entries;  // [chunks][16]
    std::vector<float> scales;
};

QuantizedFullLut quantize_lut_full(const FullLookupTable& lut) {
    QuantizedFullLut out;
    out.chunks = lut.chunks;
    out.entries.resize(size_t(lut.chunks) * 16);
    out.scales.resize(lut.chunks);
    for (int c = 0; c < lut.chunks; ++c) {
        const float* e = lut.entries.data() + size_t(c) * 16;
        float mx = 0.0f;
        for (int m = 0; m < 16; ++m) mx = std::max(mx, std::abs(e[m]));
        const float scale = mx > 0.0f ? mx / 127.0f : 1.0f;
        out.scales[c] = scale;
        for (int m = 0; m < 16; ++m)
            out.entries[size_t(c) * 16 + m] = int8_t(std::nearbyintf(e[m] / scale));
    }
    return out;
}

struct KernelTables {
    LookupTable half;
    FullLookupTable full;
    QuantizedLut half_q;
    QuantizedFullLut full_q;
    TableMode table;
    MirrorMode mirror;
};

KernelTables make_tables(std::span<const float> x, int cols_padded, TableMode table,
                         MirrorMode mirror) {
    KernelTables t;
    t.table = table;
    t.mirror = mirror;
    if (mirror == MirrorMode::mirrored) {
        t.half = build_lut(x, cols_padded);
        if (table == TableMode::i8) t.half_q = quantize_lut(t.half);
    } else {
        t.full = build_lut_full(x, cols_padded);
        if (table == TableMode::i8) t.full_q = quantize_lut_full(t.full);
    }
    return t;
}

inline float probe(const KernelTables& t, int chunk, unsigned m) {
    if (t.table == TableMode::f32) {
        if (t.mirror == MirrorMode::mirrored) {
            const float* e = t.half.entries.data() + size_t(chunk) * 8;
            return (m & 8) ? e[m & 7] : -e[~m & 7];
        }
        return t.full.entries[size_t(chunk) * 16 + m];
    }
    if (t.mirror == MirrorMode::mirrored) {
        const int8_t* e = t.half_q.entries.data() + size_t(chunk) * 8;
        const int v = (m & 8) ? int(e[m & 7]) : -int(e[~m & 7]);
        return float(v) * t.half_q.scales[chunk];
    }
    return float(t.full_q.entries[size_t(chunk) * 16 + m]) * t.full_q.scales[chunk];
}

void gemv_rows(const PackedWeights& packed, const MirroredParams& mp, const KernelTables& t,
               const float* group_sums, float* y) {
    const int groups = mp.groups();
    const int chunks_per_group = mp.g / kGroupA;
    const int words_per_tile_plane = kTileCols / kGroupA;

    parallel_for(packed.n, [&](int64_t i) {
        const int tr = int(i / kTileRows);
        const int r = int(i % kTileRows);
        const int shift = 4 * r;
        float acc = 0.0f;
        for (int grp = 0; grp < groups; ++grp) {
            const float* sh = mp.scale_at(i, grp);
            float gacc = mp.zero_at(i, grp) * group_sums[grp];
            const int c0 = grp * chunks_per_group;
            for (int j = 0; j < packed.q; ++j) {
                float ps = 0.0f;
                for (int cc = 0; cc < chunks_per_group; ++cc) {
                    const int c4 = c0 + cc;
                    const int tc = c4 / words_per_tile_plane;
                    const int lc = c4 % words_per_tile_plane;
                    const uint64_t w = packed.words[packed.word_index(tr, tc, j, lc)];
                    const unsigned m = unsigned((w >> shift) & 0xF);
                    ps += probe(t, c4, m);
                }
                gacc += sh[j] * ps;
            }
            acc += gacc;
        }
        y[i] = acc;
    });

    g_lookups.fetch_add(uint64_t(packed.n) * packed.q * groups * chunks_per_group,
                        std::memory_order_relaxed);
}

}  // namespace

std::vector<float> lut_gemv(const PackedWeights& packed, const MirroredParams& mp,
                            std::span<const float> x, TableMode table, MirrorMode mirror) {
    check_kernel_shapes(packed, mp, x.size());

    const KernelTables t = make_tables(x, packed.cols_padded, table, mirror);

    const int groups = mp.groups();
    std::vector<float> group_sums(groups);
    for (int grp = 0; grp < groups; ++grp) {
        float acc = 0.0f;
        const int64_t base = int64_t(grp) * mp.g;
        for (int c = 0; c < mp.g; ++c) acc += x[base + c];
        group_sums[grp] = acc;
    }

    std::vector<float> y(packed.n);
    gemv_rows(packed, mp, t, group_sums.data(), y.data());
    return y;
}

Matrix lut_gemm(const PackedWeights& packed, const MirroredParams& mp, const Matrix& x,
                TableMode table, MirrorMode mirror) {
    check_kernel_shapes(packed, mp, size_t(x.cols));

    Matrix y(x.rows, packed.n);
    const int groups = mp.groups();
    std::vector<float> group_sums(groups);
    for (int64_t b = 0; b < x.rows; ++b) {
        std::span<const float> row(x.row(b), size_t(x.cols));
        const KernelTables t = make_tables(row, packed.cols_padded, table, mirror);
        for (int grp = 0; grp < groups; ++grp) {
            float acc = 0.0f;
            const int64_t base = int64_t(grp) * mp.g;
            for (int c = 0; c < mp.g; ++c) acc += row[base + c];
            group_sums[grp] = acc;
        }
        gemv_rows(packed, mp, t, group_sums.data(), y.row(b));
    }
    return y;
}

Matrix reference_gemm(const Matrix& x, const Matrix& w) {
    if (x.cols != w.cols)
        throw Error(ErrorKind::data, "reference_gemm: inner dimensions disagree (" +
                                         std::to_string(x.cols) + " vs " + std::to_string(w.cols) +
                                         ")");
    Matrix y(x.rows, w.rows);
    parallel_for(x.rows, [&](int64_t b) {
        const float* xb = x.row(b);
        float* yb = y.row(b);
        for (int64_t i = 0; i < w.rows; ++i) {
            const float* wi = w.row(i);
            float acc = 0.0f;
            for (int64_t c = 0; c < w.cols; ++c) acc += xb[c] * wi[c];
            yb[i] = acc;
        }
    });
    return y;
}

uint64_t lookup_count() { return g_lookups.load(std::memory_order_relaxed); }

void reset_lookup_count() { g_lookups.store(0, std::memory_order_relaxed); }

}  // namespace hlq
