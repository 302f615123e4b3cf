#include "hlq/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iostream>

#include <json.hpp>

namespace hlq {

const char* format_name(Format f) { return f == Format::hlq ? "hlq" : "uniform"; }

Format parse_format(const std::string& name) {
    if (name == "hlq") return Format::hlq;
    if (name == "uniform") return Format::uniform;
    throw Error(ErrorKind::config, "unknown format '" + name + "' (expected hlq or uniform)");
}

double mse(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b))
        throw Error(ErrorKind::data, "mse: shapes disagree ([" + std::to_string(a.rows) + ", " +
                                         std::to_string(a.cols) + "] vs [" +
                                         std::to_string(b.rows) + ", " + std::to_string(b.cols) +
                                         "])");
    if (a.size() == 0) return 0.0;
    double acc = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = double(a.data[i]) - double(b.data[i]);
        acc += d * d;
    }
    return acc / double(a.size());
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size())
        throw Error(ErrorKind::data, "cosine_similarity: lengths disagree (" +
                                         std::to_string(a.size()) + " vs " +
                                         std::to_string(b.size()) + ")");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += double(a[i]) * double(b[i]);
        na += double(a[i]) * double(a[i]);
        nb += double(b[i]) * double(b[i]);
    }
    if (na == 0.0 || nb == 0.0) {
        std::cerr << "cosine_similarity: zero vector, returning 0\n";
        return 0.0;
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

double bits_per_weight(int q, int g, Format f) {
    if (q < 1 || q > 8)
        throw Error(ErrorKind::config, "bits_per_weight: q must be in [1, 8]");
    if (g < 1) throw Error(ErrorKind::config, "bits_per_weight: g must be >= 1");
    if (f == Format::uniform) return double(q) + 32.0 / double(g);
    return double(q) + double(q + 1) * 16.0 / double(g);
}

Footprint model_footprint(const ModelShapeConfig& shapes, int q, int g, Format f) {
    const double bpw = bits_per_weight(q, g, f);
    Footprint fp;
    for (const LayerShape& l : shapes.layers) {
        if (l.count < 1 || l.n < 1 || l.k < 1)
            throw Error(ErrorKind::config,
                        "model_footprint: layer '" + l.name + "' has a non-positive dimension");
        const double weights = double(l.count) * double(l.n) * double(l.k);
        fp.quant_bytes += weights * bpw / 8.0;
        fp.fp16_bytes += weights * 2.0;
    }
    fp.quant_bytes += double(shapes.excluded_bytes);
    fp.fp16_bytes += double(shapes.excluded_bytes);
    if (fp.quant_bytes > 0.0) fp.compression_rate = fp.fp16_bytes / fp.quant_bytes;
    return fp;
}

ModelShapeConfig load_shape_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot open shape config '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw Error(ErrorKind::io, "shape config '" + path + "': invalid JSON: " + e.what());
    }

    ModelShapeConfig cfg;
    try {
        cfg.name = j.value("name", "");
        cfg.excluded_bytes = j.value("excluded_bytes", uint64_t(0));
        for (const auto& lj : j.at("layers")) {
            LayerShape l;
            l.name = lj.value("name", "");
            l.count = lj.value("count", 1);
            l.n = lj.at("n").get<int64_t>();
            l.k = lj.at("k").get<int64_t>();
            cfg.layers.push_back(std::move(l));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::io, "shape config '" + path + "': " + e.what());
    }
    return cfg;
}

}  // namespace hlq
