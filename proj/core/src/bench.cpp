#include "hlq/bench.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <random>
#include <sstream>

#include "hlq/quant.hpp"
#include "hlq/threading.hpp"

namespace hlq {

namespace {

// Pins the worker count through HLQ_THREADS for the lifetime of the guard;
// restores the previous value (or absence) on destruction.
class thread_override {
  public:
    explicit thread_override(int threads) : active_(threads > 0) {
        if (!active_) return;
        if (const char* prev = std::getenv("HLQ_THREADS")) {
            saved_ = prev;
            had_ = true;
        }
        setenv("HLQ_THREADS", std::to_string(threads).c_str(), 1);
    }
    ~thread_override() {
        if (!active_) return;
        if (had_)
            setenv("HLQ_THREADS", saved_.c_str(), 1);
        else
            unsetenv("HLQ_THREADS");
    }

  private:
    std::string saved_;
    bool had_ = false;
    bool active_ = false;
};

}  // namespace

std::vector<BenchRow> bench_gemm(const BenchConfig& cfg) {
    if (cfg.reps < 10)
        throw Error(ErrorKind::config, "bench_gemm: reps must be >= 10 for stable statistics");
    if (cfg.shapes.empty() || cfg.qs.empty() || cfg.formats.empty())
        throw Error(ErrorKind::config, "bench_gemm: shapes, qs and formats must be non-empty");
    thread_override guard(cfg.threads);
    const int threads = worker_count();

    std::vector<BenchRow> rows;
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<float> dist(0.0f, 1.0f);

    for (const BenchShape& shape : cfg.shapes) {
        if (shape.n < 1 || shape.k < 1)
            throw Error(ErrorKind::config, "bench_gemm: shape dimensions must be positive");
        Matrix w(shape.n, shape.k);
        for (float& v : w.data) v = dist(rng);
        std::vector<float> x(size_t(shape.k));
        for (float& v : x) v = dist(rng);

        for (int q : cfg.qs) {
            for (Format fmt : cfg.formats) {
                QuantConfig qc;
                qc.q = q;
                qc.g = cfg.g;
                qc.t_max = 1;  // throughput setup, not quality

                HlqParams params;
                BitAssignment bits;
                if (fmt == Format::hlq) {
                    std::tie(params, bits) = hlq_alternating(w, qc);
                } else {
                    std::tie(params, bits) = uniform_to_hlq(rtn_quantize(w, qc));
                }
                const PackedWeights packed = rearrange_tiles(decompose_bitplanes(bits));
                const MirroredParams mp = mirror_transform(params);

                lut_gemv(packed, mp, x, cfg.table);  // warmup
                reset_lookup_count();
                std::vector<double> times(size_t(cfg.reps));
                for (int r = 0; r < cfg.reps; ++r) {
                    const auto t0 = std::chrono::steady_clock::now();
                    lut_gemv(packed, mp, x, cfg.table);
                    const auto t1 = std::chrono::steady_clock::now();
                    times[size_t(r)] = std::chrono::duration<double>(t1 - t0).count();
                }

                double mean = 0.0;
                for (double t : times) mean += t;
                mean /= double(cfg.reps);
                double var = 0.0;
                for (double t : times) var += (t - mean) * (t - mean);

                BenchRow row;
                row.shape = std::to_string(shape.n) + "x" + std::to_string(shape.k);
                row.q = q;
                row.format = fmt;
                row.table = cfg.table;
                row.threads = threads;
                row.reps = cfg.reps;
                row.mean_s = mean;
                row.std_s = cfg.reps > 1 ? std::sqrt(var / double(cfg.reps - 1)) : 0.0;
                row.lookups = lookup_count() / uint64_t(cfg.reps);
                rows.push_back(std::move(row));
            }
        }
    }
    return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
    std::ostringstream out;
    out << "shape,q,format,table_mode,threads,reps,mean_s,std_s,lookups\n";
    for (const BenchRow& r : rows) {
        out << r.shape << ',' << r.q << ',' << format_name(r.format) << ','
            << (r.table == TableMode::f32 ? "f32" : "i8") << ',' << r.threads << ',' << r.reps
            << ',' << r.mean_s << ',' << r.std_s << ',' << r.lookups << '\n';
    }
    return out.str();
}

}  // namespace hlq
