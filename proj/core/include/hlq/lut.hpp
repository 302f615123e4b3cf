#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hlq/quant.hpp"
#include "hlq/tensor.hpp"

namespace hlq {

// Activation group size of the lookup kernel. Tables hold one partial dot
// product per sign pattern of kGroupA consecutive activations.
inline constexpr int kGroupA = 4;

// Tile shape of the packed weight layout.
inline constexpr int kTileRows = 16;
inline constexpr int kTileCols = 32;

// ============================================================================
// Bit-plane and packed representations
// ============================================================================

// q one-bit planes of shape [n, k]; plane j holds bit j of each codeword
// index. Rows pack 64 columns per word, little end first: bit c of a row lives
// at word c/64, position c%64.
struct BitPlanes {
    int n = 0, k = 0, q = 0;
    int words_per_row = 0;
    std::vector<uint64_t> words;  // [q][n][words_per_row]

    uint64_t word(int j, int64_t i, int wi) const {
        return words[(size_t(j) * n + i) * words_per_row + wi];
    }
    int bit(int j, int64_t i, int64_t c) const {
        return int((word(j, i, int(c >> 6)) >> (c & 63)) & 1);
    }
};

// Tile-packed planes for the lookup kernel. Rows pad to kTileRows, columns to
// kTileCols; each word covers one 4-column chunk of one plane across the 16
// rows of a tile (nibble r = rows' bits, nibble bit i = column chunk*4+i), so
// one lookup index per output channel is a shift and mask away.
struct PackedWeights {
    int n = 0, k = 0, q = 0;
    int rows_padded = 0, cols_padded = 0;
    std::vector<uint64_t> words;

    int tiles_r() const { return rows_padded / kTileRows; }
    int tiles_c() const { return cols_padded / kTileCols; }
    size_t word_index(int tr, int tc, int j, int chunk) const {
        return ((size_t(tr) * tiles_c() + tc) * q + j) * (kTileCols / kGroupA) + chunk;
    }
};

// Sign-domain parameters: s_hat = s/2, z_hat = z + (sum_j s_j)/2. With bits
// reinterpreted as signs (bit 1 -> +1), reconstruction is algebraically
// unchanged: sum_j s_hat_j * sign_j + z_hat == sum_j s_j * b_j + z.
struct MirroredParams {
    int n = 0, k = 0, q = 0, g = 0;
    std::vector<float> scales;  // [n][k/g][q]
    std::vector<float> zeros;   // [n][k/g]

    int groups() const { return g > 0 ? k / g : 0; }
    const float* scale_at(int64_t i, int64_t grp) const {
        return scales.data() + (i * groups() + grp) * q;
    }
    float zero_at(int64_t i, int64_t grp) const { return zeros[i * groups() + grp]; }
};

// Half-size lookup tables: 8 float entries per activation chunk, one per sign
// pattern of the first three elements, with coefficient +1 on the last. The
// missing half is the negation of the stored half.
struct LookupTable {
    int chunks = 0;
    std::vector<float> entries;  // [chunks][8]
};

// Full 16-entry tables, the mirror-disabled debug path. Entry m applies sign
// (+1 if bit set) per element; produced by direct signed sums so it is
// bit-identical to negating the mirrored half.
struct FullLookupTable {
    int chunks = 0;
    std::vector<float> entries;  // [chunks][16]
};

// Int8-quantized tables: per chunk, scale = max|entry| / 127 (1 if the chunk
// is all zero); entries round to nearest even. Reconstruction error per entry
// is at most scale/2.
struct QuantizedLut {
    int chunks = 0;
    std::vector<int8_t> entries;  // [chunks][8]
    std::vector<float> scales;    // [chunks]
};

enum class TableMode { f32, i8 };
enum class MirrorMode { mirrored, full };

// ============================================================================
// Operations
// ============================================================================

// Splits codeword indices into q bit planes. Recomposing plane bits restores
// every index exactly.
BitPlanes decompose_bitplanes(const BitAssignment& bits);

// Exact inverse of decompose_bitplanes.
BitAssignment recompose_bitplanes(const BitPlanes& planes);

// Inverse of rearrange_tiles; padding rows/columns are dropped.
BitPlanes unpack_tiles(const PackedWeights& packed);

PackedWeights rearrange_tiles(const BitPlanes& planes);

MirroredParams mirror_transform(const HlqParams& p);

// Tables over the zero-padded activation vector; x.size() must equal the
// padded column count of the packed operand or the original k.
LookupTable build_lut(std::span<const float> x, int cols_padded);
FullLookupTable build_lut_full(std::span<const float> x, int cols_padded);

QuantizedLut quantize_lut(const LookupTable& lut);

// y = W_hat * x for one activation vector (x length k, pre-padding).
// Accumulation is float32 in a fixed left-to-right order per output element,
// so results are bit-identical for any worker count. MirrorMode::full is the
// debug path and produces bit-identical output to MirrorMode::mirrored.
std::vector<float> lut_gemv(const PackedWeights& packed, const MirroredParams& mp,
                            std::span<const float> x, TableMode table = TableMode::f32,
                            MirrorMode mirror = MirrorMode::mirrored);

// Y = X * W_hat^T for a batch X of shape [m, k]; tables are built once per
// activation row. Returns [m, n].
Matrix lut_gemm(const PackedWeights& packed, const MirroredParams& mp, const Matrix& x,
                TableMode table = TableMode::f32, MirrorMode mirror = MirrorMode::mirrored);

// Plain dense X * W^T with float32 accumulation in a fixed order; the
// correctness baseline for the lookup path.
Matrix reference_gemm(const Matrix& x, const Matrix& w);

// Process-wide lookup counter, incremented once per table probe by
// lut_gemv/lut_gemm. Exact regardless of threading.
uint64_t lookup_count();
void reset_lookup_count();

}  // namespace hlq
