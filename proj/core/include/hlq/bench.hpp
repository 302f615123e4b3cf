#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hlq/lut.hpp"
#include "hlq/metrics.hpp"

namespace hlq {

struct BenchShape {
    int64_t n = 0;
    int64_t k = 0;
};

struct BenchConfig {
    std::vector<BenchShape> shapes{{512, 512}, {1024, 1024}};
    std::vector<int> qs{2, 3};
    std::vector<Format> formats{Format::hlq, Format::uniform};
    TableMode table = TableMode::f32;
    int threads = 0;  // 0 keeps the ambient worker count
    int reps = 10;
    uint64_t seed = 42;
    int g = 128;
};

struct BenchRow {
    std::string shape;
    int q = 0;
    Format format = Format::hlq;
    TableMode table = TableMode::f32;
    int threads = 0;
    int reps = 0;
    double mean_s = 0.0;
    double std_s = 0.0;
    uint64_t lookups = 0;  // table probes per gemv call
};

// Times lut_gemv over every (shape, q, format) combination. Weights and
// activations are gaussian from cfg.seed; quantization setup runs a single
// refinement pass. Each combination gets one warmup call, then cfg.reps timed
// calls; std_s is the sample standard deviation.
std::vector<BenchRow> bench_gemm(const BenchConfig& cfg);

// Header: shape,q,format,table_mode,threads,reps,mean_s,std_s,lookups
std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace hlq
