#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hlq/bench.hpp"
#include "hlq/container.hpp"
#include "hlq/finetune.hpp"
#include "hlq/gptq.hpp"
#include "hlq/lut.hpp"
#include "hlq/metrics.hpp"
#include "hlq/quant.hpp"

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    size_t start = 0;
    while (start <= s.size()) {
        const size_t end = s.find(sep, start);
        if (end == std::string::npos) {
            out.push_back(s.substr(start));
            break;
        }
        out.push_back(s.substr(start, end - start));
        start = end + 1;
    }
    return out;
}

hlq::BenchShape parse_shape(const std::string& tok) {
    const size_t x = tok.find('x');
    if (x == std::string::npos || x == 0 || x + 1 >= tok.size())
        throw hlq::Error(hlq::ErrorKind::config,
                         "shape '" + tok + "' is not of the form NxK (e.g. 512x512)");
    try {
        return {std::stoll(tok.substr(0, x)), std::stoll(tok.substr(x + 1))};
    } catch (const std::exception&) {
        throw hlq::Error(hlq::ErrorKind::config, "shape '" + tok + "' has non-numeric dimensions");
    }
}

hlq::Matrix random_activations(int64_t m, int64_t k, uint64_t seed) {
    hlq::Matrix x(m, k);
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    for (float& v : x.data) v = dist(rng);
    return x;
}

const hlq::PackedWeights& kernel_weights(const hlq::HlqpModel& model,
                                         hlq::PackedWeights& scratch) {
    if (model.layout == hlq::HlqpLayout::tiles) return model.packed;
    scratch = hlq::rearrange_tiles(model.planes);
    return scratch;
}

// ---------------------------------------------------------------------------
// quantize
// ---------------------------------------------------------------------------

struct QuantizeArgs {
    std::string input;
    std::string calib;
    std::string out = "model.hlqp";
    std::string method = "hlq-alt";
    int wbits = 2;
    int group = 128;
    int tmax = 10;
    int block = 128;
    double lr = 0.4;
    double lambda_frac = 0.01;
};

int run_quantize(const QuantizeArgs& a) {
    const hlq::Matrix w = hlq::load_raw_matrix(a.input);
    hlq::QuantConfig cfg;
    cfg.q = a.wbits;
    cfg.g = a.group;
    cfg.t_max = a.tmax;
    cfg.lr = a.lr;

    hlq::HlqParams params;
    hlq::BitAssignment bits;
    hlq::Format format = hlq::Format::hlq;
    if (a.method == "rtn") {
        std::tie(params, bits) = hlq::uniform_to_hlq(hlq::rtn_quantize(w, cfg));
        format = hlq::Format::uniform;
    } else if (a.method == "hlq-alt") {
        std::tie(params, bits) = hlq::hlq_alternating(w, cfg);
    } else if (a.method == "hlq-grad") {
        std::tie(params, bits) = hlq::hlq_gradient(w, cfg);
    } else {
        if (a.calib.empty())
            throw hlq::Error(hlq::ErrorKind::config,
                             "method hlq-gptq needs calibration activations (--calib X.raw)");
        const hlq::Matrix x = hlq::load_raw_matrix(a.calib);
        if (x.cols != w.cols)
            throw hlq::Error(hlq::ErrorKind::data,
                             "calibration feature count " + std::to_string(x.cols) +
                                 " does not match weight columns " + std::to_string(w.cols));
        hlq::GptqConfig gcfg;
        gcfg.block = a.block;
        gcfg.lambda_frac = a.lambda_frac;
        const hlq::HessianAccumulator hess = hlq::accumulate_hessian(x, gcfg.lambda_frac);
        std::tie(params, bits) = hlq::hlq_gptq_layer(w, hess, cfg, gcfg);
    }

    const hlq::HlqpModel model = hlq::make_hlqp(format, bits, params);
    hlq::save_hlqp(model, a.out);
    const double err = hlq::mse(w, hlq::hlqp_dequantize(model));
    std::cout << "quantized " << w.rows << "x" << w.cols << " (" << a.method << ", q=" << a.wbits
              << ", g=" << a.group << "): mse " << err << ", "
              << hlq::bits_per_weight(a.wbits, a.group, format) << " bits/weight -> " << a.out
              << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// dequantize / verify
// ---------------------------------------------------------------------------

int run_dequantize(const std::string& model_path, const std::string& out) {
    const hlq::HlqpModel model = hlq::load_hlqp(model_path);
    const hlq::Matrix w = hlq::hlqp_dequantize(model);
    hlq::save_raw_matrix(w, out);
    std::cout << "dequantized " << w.rows << "x" << w.cols << " -> " << out << "\n";
    return 0;
}

int run_verify(const std::string& model_path, const std::string& reference) {
    const hlq::HlqpModel model = hlq::load_hlqp(model_path);
    const hlq::Matrix w_hat = hlq::hlqp_dequantize(model);
    const hlq::Matrix w = hlq::load_raw_matrix(reference);
    if (!w.same_shape(w_hat))
        throw hlq::Error(hlq::ErrorKind::data,
                         "reference shape [" + std::to_string(w.rows) + ", " +
                             std::to_string(w.cols) + "] does not match model [" +
                             std::to_string(w_hat.rows) + ", " + std::to_string(w_hat.cols) + "]");
    std::cout << "mse " << hlq::mse(w, w_hat) << "\n";
    std::cout << "cosine " << hlq::cosine_similarity(w.data, w_hat.data) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// gemm-check
// ---------------------------------------------------------------------------

int run_gemm_check(const std::string& model_path, int batch, const std::string& table,
                   uint64_t seed) {
    const hlq::HlqpModel model = hlq::load_hlqp(model_path);
    hlq::PackedWeights scratch;
    const hlq::PackedWeights& packed = kernel_weights(model, scratch);
    const hlq::MirroredParams mp = hlq::mirror_transform(model.params);

    const hlq::Matrix x = random_activations(batch, model.params.k, seed);
    const hlq::Matrix w_hat = hlq::hlqp_dequantize(model);
    const hlq::Matrix y_ref = hlq::reference_gemm(x, w_hat);

    if (table == "f32") {
        const hlq::Matrix y = hlq::lut_gemm(packed, mp, x);
        double max_abs = 0.0, max_ref = 0.0;
        for (size_t i = 0; i < y.data.size(); ++i) {
            max_abs = std::max(max_abs, std::abs(double(y.data[i]) - double(y_ref.data[i])));
            max_ref = std::max(max_ref, std::abs(double(y_ref.data[i])));
        }
        const double rel = max_ref > 0.0 ? max_abs / max_ref : max_abs;
        std::cout << "max-abs " << max_abs << "\n";
        std::cout << "relative-inf " << rel << "\n";
        if (rel > 1e-4) {
            std::cout << "fail: relative-inf above tolerance 1e-4\n";
            return 1;
        }
        std::cout << "pass (tolerance 1e-4)\n";
        return 0;
    }

    // Int8 tables: per-element quantization error against the float-table
    // path must stay under (k/gA) * maxscale / 2, and the result must still
    // point the same way as the reference.
    const hlq::Matrix y_f32 = hlq::lut_gemm(packed, mp, x);
    const hlq::Matrix y_i8 = hlq::lut_gemm(packed, mp, x, hlq::TableMode::i8);

    double max_abs = 0.0;
    for (size_t i = 0; i < y_i8.data.size(); ++i)
        max_abs = std::max(max_abs, std::abs(double(y_i8.data[i]) - double(y_f32.data[i])));

    const int probed_chunks = int(model.params.k / hlq::kGroupA);
    double worst_bound = 0.0;
    for (int64_t b = 0; b < x.rows; ++b) {
        const hlq::LookupTable lut =
            hlq::build_lut(std::span<const float>(x.row(b), size_t(x.cols)), packed.cols_padded);
        const hlq::QuantizedLut qlut = hlq::quantize_lut(lut);
        float maxscale = 0.0f;
        for (int c = 0; c < probed_chunks; ++c) maxscale = std::max(maxscale, qlut.scales[c]);
        worst_bound = std::max(worst_bound, double(probed_chunks) * double(maxscale) / 2.0);
    }
    const double cos = hlq::cosine_similarity(y_i8.data, y_ref.data);
    std::cout << "max-abs " << max_abs << " (bound " << worst_bound << ")\n";
    std::cout << "cosine " << cos << "\n";
    if (max_abs > worst_bound || cos < 0.999) {
        std::cout << "fail: int8 tables exceeded the error bound or cosine 0.999\n";
        return 1;
    }
    std::cout << "pass\n";
    return 0;
}

// ---------------------------------------------------------------------------
// finetune
// ---------------------------------------------------------------------------

int run_finetune(const std::string& model_path, const std::string& calib,
                 const std::string& reference, double lr, int epochs, int batch,
                 std::string out) {
    hlq::HlqpModel model = hlq::load_hlqp(model_path);
    const hlq::Matrix x = hlq::load_raw_matrix(calib);
    const hlq::Matrix w = hlq::load_raw_matrix(reference);
    const hlq::BitAssignment bits = model.layout == hlq::HlqpLayout::tiles
                                        ? hlq::recompose_bitplanes(hlq::unpack_tiles(model.packed))
                                        : hlq::recompose_bitplanes(model.planes);
    hlq::TuneConfig tune;
    tune.lr = lr;
    tune.epochs = epochs;
    tune.batch = batch;
    const hlq::TuneResult result = hlq::reconstruct_stage2(w, x, model.params, bits, tune);
    model.params = result.params;
    if (out.empty()) out = model_path;
    hlq::save_hlqp(model, out);
    std::cout << "finetuned over " << result.steps << " steps: output loss " << result.initial_loss
              << " -> " << result.final_loss << " -> " << out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// bpw / footprint / bench
// ---------------------------------------------------------------------------

int run_bpw(int wbits, int group, const std::string& format) {
    std::cout << hlq::bits_per_weight(wbits, group, hlq::parse_format(format)) << "\n";
    return 0;
}

int run_footprint(const std::string& shapes, int wbits, int group, const std::string& format) {
    const hlq::ModelShapeConfig cfg = hlq::load_shape_config(shapes);
    const hlq::Format f = hlq::parse_format(format);
    const hlq::Footprint fp = hlq::model_footprint(cfg, wbits, group, f);
    const double gib = 1024.0 * 1024.0 * 1024.0;
    char line[256];
    std::snprintf(line, sizeof(line),
                  "%s: %.3f GiB quantized (%s, q=%d, g=%d, %.3f bits/weight), fp16 %.3f GiB, "
                  "compression %.2fx\n",
                  cfg.name.empty() ? "model" : cfg.name.c_str(), fp.quant_bytes / gib,
                  hlq::format_name(f), wbits, group, hlq::bits_per_weight(wbits, group, f),
                  fp.fp16_bytes / gib, fp.compression_rate);
    std::cout << line;
    return 0;
}

int run_bench(const std::string& shapes, const std::string& wbits, const std::string& formats,
              const std::string& table, int threads, int reps, uint64_t seed, int group,
              const std::string& csv) {
    hlq::BenchConfig cfg;
    cfg.shapes.clear();
    for (const std::string& tok : split(shapes, ',')) cfg.shapes.push_back(parse_shape(tok));
    cfg.qs.clear();
    for (const std::string& tok : split(wbits, ',')) {
        try {
            cfg.qs.push_back(std::stoi(tok));
        } catch (const std::exception&) {
            throw hlq::Error(hlq::ErrorKind::config, "bit width '" + tok + "' is not a number");
        }
    }
    cfg.formats.clear();
    for (const std::string& tok : split(formats, ',')) cfg.formats.push_back(hlq::parse_format(tok));
    cfg.table = table == "int8" ? hlq::TableMode::i8 : hlq::TableMode::f32;
    cfg.threads = threads;
    cfg.reps = reps;
    cfg.seed = seed;
    cfg.g = group;

    const std::string text = hlq::bench_csv(hlq::bench_gemm(cfg));
    if (csv.empty()) {
        std::cout << text;
    } else {
        std::ofstream out(csv, std::ios::trunc);
        if (!out) throw hlq::Error(hlq::ErrorKind::io, "cannot open '" + csv + "' for writing");
        out << text;
        std::cout << "wrote " << csv << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hierarchical low-bit weight quantization toolkit"};
    app.require_subcommand(1);

    QuantizeArgs qa;
    CLI::App* quantize = app.add_subcommand("quantize", "quantize a raw float32 weight matrix");
    quantize->add_option("--input", qa.input, "weight tensor (raw f32 + .json sidecar)")
        ->required();
    quantize->add_option("--wbits", qa.wbits, "bit width")->check(CLI::Range(2, 4));
    quantize->add_option("--group", qa.group, "weight group size");
    quantize->add_option("--method", qa.method, "rtn | hlq-alt | hlq-grad | hlq-gptq")
        ->check(CLI::IsMember({"rtn", "hlq-alt", "hlq-grad", "hlq-gptq"}));
    quantize->add_option("--calib", qa.calib, "calibration activations for hlq-gptq");
    quantize->add_option("--tmax", qa.tmax, "search iterations");
    quantize->add_option("--block", qa.block, "gptq compensation block (multiple of --group)");
    quantize->add_option("--lr", qa.lr, "hlq-grad learning rate");
    quantize->add_option("--lambda-frac", qa.lambda_frac, "gptq damping fraction");
    quantize->add_option("--out", qa.out, "output container path");

    std::string deq_model, deq_out = "weights.raw";
    CLI::App* dequantize = app.add_subcommand("dequantize", "reconstruct weights from a container");
    dequantize->add_option("--model", deq_model, "container path")->required();
    dequantize->add_option("--out", deq_out, "output raw f32 path");

    std::string ver_model, ver_reference;
    CLI::App* verify = app.add_subcommand("verify", "print mse and cosine against a reference");
    verify->add_option("--model", ver_model, "container path")->required();
    verify->add_option("--reference", ver_reference, "reference weights (raw f32)")->required();

    std::string gc_model, gc_table = "f32";
    int gc_batch = 1;
    uint64_t gc_seed = 42;
    CLI::App* gemm_check =
        app.add_subcommand("gemm-check", "compare the lookup kernel against dense reference");
    gemm_check->add_option("--model", gc_model, "container path")->required();
    gemm_check->add_option("--batch", gc_batch, "activation batch size")->check(CLI::Range(1, 4096));
    gemm_check->add_option("--table", gc_table, "f32 | int8")
        ->check(CLI::IsMember({"f32", "int8"}));
    gemm_check->add_option("--seed", gc_seed, "activation seed");

    std::string ft_model, ft_calib, ft_reference, ft_out;
    double ft_lr = 1e-4;
    int ft_epochs = 2, ft_batch = 0;
    CLI::App* finetune =
        app.add_subcommand("finetune", "descend the layer-output loss on scales and zeros");
    finetune->add_option("--model", ft_model, "container path")->required();
    finetune->add_option("--calib", ft_calib, "calibration activations")->required();
    finetune->add_option("--reference", ft_reference, "full-precision weights")->required();
    finetune->add_option("--lr", ft_lr, "learning rate");
    finetune->add_option("--epochs", ft_epochs, "passes over the calibration set");
    finetune->add_option("--batch", ft_batch, "samples per step (0 = full batch)");
    finetune->add_option("--out", ft_out, "output container (default: overwrite --model)");

    int bpw_wbits = 2, bpw_group = 128;
    std::string bpw_format = "hlq";
    CLI::App* bpw = app.add_subcommand("bpw", "print storage bits per weight");
    bpw->add_option("--wbits", bpw_wbits, "bit width")->required();
    bpw->add_option("--group", bpw_group, "weight group size");
    bpw->add_option("--format", bpw_format, "hlq | uniform");

    std::string fp_shapes, fp_format = "hlq";
    int fp_wbits = 2, fp_group = 128;
    CLI::App* footprint = app.add_subcommand("footprint", "model size from a shape config");
    footprint->add_option("--shapes", fp_shapes, "model shape config (json)")->required();
    footprint->add_option("--wbits", fp_wbits, "bit width");
    footprint->add_option("--group", fp_group, "weight group size");
    footprint->add_option("--format", fp_format, "hlq | uniform");

    std::string be_shapes = "512x512", be_wbits = "2,3", be_formats = "hlq,uniform";
    std::string be_table = "f32", be_csv;
    int be_threads = 0, be_reps = 10, be_group = 128;
    uint64_t be_seed = 42;
    CLI::App* bench = app.add_subcommand("bench", "time the lookup kernel");
    bench->add_option("--shapes", be_shapes, "comma-separated NxK list");
    bench->add_option("--wbits", be_wbits, "comma-separated bit widths");
    bench->add_option("--formats", be_formats, "comma-separated formats");
    bench->add_option("--table", be_table, "f32 | int8")->check(CLI::IsMember({"f32", "int8"}));
    bench->add_option("--threads", be_threads, "worker count (0 = HLQ_THREADS or hardware)");
    bench->add_option("--reps", be_reps, "timed repetitions");
    bench->add_option("--seed", be_seed, "input seed");
    bench->add_option("--group", be_group, "weight group size");
    bench->add_option("--csv", be_csv, "write csv here instead of stdout");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(quantize)) return run_quantize(qa);
        if (app.got_subcommand(dequantize)) return run_dequantize(deq_model, deq_out);
        if (app.got_subcommand(verify)) return run_verify(ver_model, ver_reference);
        if (app.got_subcommand(gemm_check))
            return run_gemm_check(gc_model, gc_batch, gc_table, gc_seed);
        if (app.got_subcommand(finetune))
            return run_finetune(ft_model, ft_calib, ft_reference, ft_lr, ft_epochs, ft_batch,
                                ft_out);
        if (app.got_subcommand(bpw)) return run_bpw(bpw_wbits, bpw_group, bpw_format);
        if (app.got_subcommand(footprint))
            return run_footprint(fp_shapes, fp_wbits, fp_group, fp_format);
        if (app.got_subcommand(bench))
            return run_bench(be_shapes, be_wbits, be_formats, be_table, be_threads, be_reps,
                             be_seed, be_group, be_csv);
    } catch (const hlq::Error& e) {
        std::cerr << hlq::error_kind_name(e.kind()) << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
