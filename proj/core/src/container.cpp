#include "hlq/container.hpp"

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include <json.hpp>

namespace hlq {

namespace {

void put_u32(std::string& out, uint32_t v) {
    for (int b = 0; b < 4; ++b) out.push_back(char((v >> (8 * b)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
    for (int b = 0; b < 8; ++b) out.push_back(char((v >> (8 * b)) & 0xff));
}

void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<uint32_t>(v)); }

// Streaming reader; sections are pulled off the file on demand, so a bad
// magic or version aborts before any payload byte is read.
class reader {
  public:
    explicit reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw Error(ErrorKind::io, "cannot open container '" + path + "'");
    }

    void bytes(void* dst, size_t count, const char* section) {
        in_.read(static_cast<char*>(dst), std::streamsize(count));
        if (size_t(in_.gcount()) != count)
            throw Error(ErrorKind::io, "corrupt container '" + path_ + "': truncated in " +
                                           std::string(section) + " (wanted " +
                                           std::to_string(count) + " bytes, got " +
                                           std::to_string(in_.gcount()) + ")");
    }

    uint32_t u32(const char* section) {
        uint8_t b[4];
        bytes(b, 4, section);
        return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
    }

    std::vector<uint64_t> u64_array(size_t count, const char* section) {
        std::vector<uint8_t> raw(count * 8);
        bytes(raw.data(), raw.size(), section);
        std::vector<uint64_t> out(count);
        for (size_t i = 0; i < count; ++i) {
            uint64_t v = 0;
            for (int b = 0; b < 8; ++b) v |= uint64_t(raw[i * 8 + b]) << (8 * b);
            out[i] = v;
        }
        return out;
    }

    std::vector<float> f32_array(size_t count, const char* section) {
        std::vector<uint8_t> raw(count * 4);
        bytes(raw.data(), raw.size(), section);
        std::vector<float> out(count);
        for (size_t i = 0; i < count; ++i) {
            uint32_t v = uint32_t(raw[i * 4]) | uint32_t(raw[i * 4 + 1]) << 8 |
                         uint32_t(raw[i * 4 + 2]) << 16 | uint32_t(raw[i * 4 + 3]) << 24;
            out[i] = std::bit_cast<float>(v);
        }
        return out;
    }

    void expect_eof() {
        in_.peek();
        if (!in_.eof())
            throw Error(ErrorKind::io,
                        "corrupt container '" + path_ + "': trailing bytes after payload");
    }

  private:
    std::ifstream in_;
    std::string path_;
};

void write_atomically(const std::string& path, const std::string& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorKind::io, "cannot open '" + tmp + "' for writing");
        out.write(bytes.data(), std::streamsize(bytes.size()));
        out.flush();
        if (!out) throw Error(ErrorKind::io, "short write to '" + tmp + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw Error(ErrorKind::io, "cannot move '" + tmp + "' into place at '" + path +
                                       "': " + ec.message());
    }
}

size_t tile_word_count(const PackedWeights& pw) {
    return size_t(pw.tiles_r()) * pw.tiles_c() * pw.q * (kTileCols / kGroupA);
}

size_t plane_word_count(const BitPlanes& bp) {
    return size_t(bp.q) * bp.n * bp.words_per_row;
}

void check_params(const HlqParams& p, int n, int k, int q, const char* who) {
    if (p.n != n || p.k != k || p.q != q)
        throw Error(ErrorKind::config,
                    std::string(who) + ": codeword bits and params disagree on shape");
    if (p.g < 1 || p.k % p.g != 0)
        throw Error(ErrorKind::config,
                    std::string(who) + ": group size must be positive and divide k");
    if (p.scales.size() != size_t(p.n) * p.groups() * p.q ||
        p.zeros.size() != size_t(p.n) * p.groups())
        throw Error(ErrorKind::config,
                    std::string(who) + ": parameter array sizes do not match shape");
}

}  // namespace

HlqpModel make_hlqp(Format format, const BitAssignment& bits, const HlqParams& params) {
    check_params(params, bits.n, bits.k, bits.q, "make_hlqp");
    HlqpModel model;
    model.format = format;
    model.layout = HlqpLayout::tiles;
    model.packed = rearrange_tiles(decompose_bitplanes(bits));
    model.params = params;
    return model;
}

void save_hlqp(const HlqpModel& model, const std::string& path) {
    const bool tiles = model.layout == HlqpLayout::tiles;
    const int n = tiles ? model.packed.n : model.planes.n;
    const int k = tiles ? model.packed.k : model.planes.k;
    const int q = tiles ? model.packed.q : model.planes.q;
    check_params(model.params, n, k, q, "save_hlqp");

    const std::vector<uint64_t>& words = tiles ? model.packed.words : model.planes.words;
    const size_t want = tiles ? tile_word_count(model.packed) : plane_word_count(model.planes);
    if (words.size() != want)
        throw Error(ErrorKind::config, "save_hlqp: payload word count does not match shape");

    nlohmann::json header = {
        {"n", n},
        {"k", k},
        {"q", q},
        {"g", model.params.g},
        {"gA", kGroupA},
        {"format", format_name(model.format)},
        {"layout", tiles ? "tiles" : "planes"},
        {"mirrored", false},
        {"pad_n", tiles ? model.packed.rows_padded : n},
        {"pad_k", tiles ? model.packed.cols_padded : k},
    };
    const std::string hj = header.dump();

    std::string out;
    out.reserve(12 + hj.size() + words.size() * 8 +
                (model.params.scales.size() + model.params.zeros.size()) * 4);
    out += "HLQP";
    put_u32(out, kHlqpVersion);
    put_u32(out, uint32_t(hj.size()));
    out += hj;
    for (uint64_t w : words) put_u64(out, w);
    for (float s : model.params.scales) put_f32(out, s);
    for (float z : model.params.zeros) put_f32(out, z);
    write_atomically(path, out);
}

HlqpModel load_hlqp(const std::string& path) {
    reader r(path);

    char magic[4];
    r.bytes(magic, 4, "magic");
    if (std::string(magic, 4) != "HLQP")
        throw Error(ErrorKind::io, "corrupt container '" + path + "': bad magic, not an HLQP file");

    const uint32_t version = r.u32("version");
    if (version != kHlqpVersion)
        throw Error(ErrorKind::io, "container '" + path + "': unsupported version " +
                                       std::to_string(version) + " (this build reads version " +
                                       std::to_string(kHlqpVersion) + ")");

    const uint32_t header_len = r.u32("header length");
    std::string hj(header_len, '\0');
    r.bytes(hj.data(), hj.size(), "header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hj);
    } catch (const std::exception& e) {
        throw Error(ErrorKind::io,
                    "corrupt container '" + path + "': header is not valid JSON: " + e.what());
    }

    HlqpModel model;
    int n = 0, k = 0, q = 0, g = 0, gA = 0, pad_n = 0, pad_k = 0;
    std::string layout;
    try {
        n = header.at("n").get<int>();
        k = header.at("k").get<int>();
        q = header.at("q").get<int>();
        g = header.at("g").get<int>();
        gA = header.at("gA").get<int>();
        model.format = parse_format(header.at("format").get<std::string>());
        layout = header.at("layout").get<std::string>();
        if (header.at("mirrored").get<bool>())
            throw Error(ErrorKind::io, "container '" + path +
                                           "': mirrored parameters are not a stored form; "
                                           "containers always hold plain (s, z)");
        pad_n = header.at("pad_n").get<int>();
        pad_k = header.at("pad_k").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::io, "corrupt container '" + path + "': header: " + e.what());
    }

    if (n < 1 || k < 1 || q < 1 || q > 8 || g < 1 || k % g != 0)
        throw Error(ErrorKind::io, "corrupt container '" + path +
                                       "': header dimensions are out of range (n " +
                                       std::to_string(n) + ", k " + std::to_string(k) + ", q " +
                                       std::to_string(q) + ", g " + std::to_string(g) + ")");
    if (gA != kGroupA)
        throw Error(ErrorKind::io, "container '" + path + "': activation group " +
                                       std::to_string(gA) + " is unsupported (kernel uses " +
                                       std::to_string(kGroupA) + ")");

    size_t word_count = 0;
    if (layout == "tiles") {
        model.layout = HlqpLayout::tiles;
        PackedWeights& pw = model.packed;
        pw.n = n;
        pw.k = k;
        pw.q = q;
        pw.rows_padded = pad_n;
        pw.cols_padded = pad_k;
        const int want_pn = (n + kTileRows - 1) / kTileRows * kTileRows;
        const int want_pk = (k + kTileCols - 1) / kTileCols * kTileCols;
        if (pad_n != want_pn || pad_k != want_pk)
            throw Error(ErrorKind::io, "corrupt container '" + path +
                                           "': padded shape does not match the tile grid");
        word_count = tile_word_count(pw);
    } else if (layout == "planes") {
        model.layout = HlqpLayout::planes;
        BitPlanes& bp = model.planes;
        bp.n = n;
        bp.k = k;
        bp.q = q;
        bp.words_per_row = (k + 63) / 64;
        if (pad_n != n || pad_k != k)
            throw Error(ErrorKind::io,
                        "corrupt container '" + path + "': planes layout does not pad");
        word_count = plane_word_count(bp);
    } else {
        throw Error(ErrorKind::io, "corrupt container '" + path + "': unknown layout '" + layout +
                                       "' (expected tiles or planes)");
    }

    std::vector<uint64_t> words = r.u64_array(word_count, "packed words");
    if (model.layout == HlqpLayout::tiles)
        model.packed.words = std::move(words);
    else
        model.planes.words = std::move(words);

    HlqParams& p = model.params;
    p.n = n;
    p.k = k;
    p.q = q;
    p.g = g;
    p.scales = r.f32_array(size_t(n) * p.groups() * q, "scales");
    p.zeros = r.f32_array(size_t(n) * p.groups(), "zeros");
    r.expect_eof();
    return model;
}

Matrix hlqp_dequantize(const HlqpModel& model) {
    const BitAssignment bits = model.layout == HlqpLayout::tiles
                                   ? recompose_bitplanes(unpack_tiles(model.packed))
                                   : recompose_bitplanes(model.planes);
    return hlq_dequantize(bits, model.params);
}

void save_raw_matrix(const Matrix& m, const std::string& path) {
    std::string out;
    out.reserve(m.data.size() * 4);
    for (float v : m.data) put_f32(out, v);
    write_atomically(path, out);
    nlohmann::json side = {{"shape", {m.rows, m.cols}}, {"order", "row-major"}};
    write_atomically(path + ".json", side.dump() + "\n");
}

Matrix load_raw_matrix(const std::string& path) {
    const std::string side_path = path + ".json";
    std::ifstream side_in(side_path);
    if (!side_in) throw Error(ErrorKind::io, "cannot open tensor sidecar '" + side_path + "'");
    nlohmann::json side;
    try {
        side_in >> side;
    } catch (const std::exception& e) {
        throw Error(ErrorKind::io, "sidecar '" + side_path + "': invalid JSON: " + e.what());
    }

    int64_t rows = 0, cols = 0;
    try {
        const auto& shape = side.at("shape");
        if (shape.size() != 2)
            throw Error(ErrorKind::io,
                        "sidecar '" + side_path + "': shape must have exactly two dimensions");
        rows = shape.at(0).get<int64_t>();
        cols = shape.at(1).get<int64_t>();
        const std::string order = side.value("order", "row-major");
        if (order != "row-major")
            throw Error(ErrorKind::io,
                        "sidecar '" + side_path + "': unsupported order '" + order + "'");
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::io, "sidecar '" + side_path + "': " + e.what());
    }
    if (rows < 1 || cols < 1)
        throw Error(ErrorKind::io, "sidecar '" + side_path + "': shape must be positive");

    reader r(path);
    Matrix m(rows, cols);
    std::vector<float> vals = r.f32_array(m.data.size(), "tensor data");
    r.expect_eof();
    m.data = std::move(vals);
    return m;
}

}  // namespace hlq
