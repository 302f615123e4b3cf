// End-to-end checks of the installed command-line tool. Compiled only when
// the build includes the CLI target (HLQ_CLI_PATH points at the binary).
#ifdef HLQ_CLI_PATH

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>

#include "hlq/container.hpp"
#include "hlq/quant.hpp"
#include "oracles.hpp"

using namespace hlq;
namespace fs = std::filesystem;

namespace {

struct CliScratch {
    fs::path dir;
    CliScratch() {
        static int counter = 0;
        dir = fs::temp_directory_path() /
              ("hlq_cli_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(dir);
    }
    ~CliScratch() { fs::remove_all(dir); }
    std::string file(const std::string& name) const { return (dir / name).string(); }
};

struct CliRun {
    int exit_code = -1;
    std::string output;  // stdout and stderr combined

    bool contains(const std::string& needle) const {
        return output.find(needle) != std::string::npos;
    }
    std::vector<std::string> lines() const {
        std::vector<std::string> out;
        std::istringstream in(output);
        for (std::string line; std::getline(in, line);) out.push_back(line);
        return out;
    }
};

CliRun run_cli(const CliScratch& tmp, const std::string& args) {
    const std::string capture = tmp.file("cli_capture.txt");
    const std::string cmd =
        std::string("\"") + HLQ_CLI_PATH + "\" " + args + " > \"" + capture + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    CliRun r;
    if (WIFEXITED(status)) r.exit_code = WEXITSTATUS(status);
    std::ifstream in(capture, std::ios::binary);
    r.output.assign(std::istreambuf_iterator<char>(in), {});
    return r;
}

// 16 x 128 layer whose entries already sit on the integer grid {0,1,2,3}:
// round-to-nearest is exact on it.
Matrix grid_weights() {
    Matrix w(16, 128);
    for (int64_t i = 0; i < w.size(); ++i) w.data[size_t(i)] = float(i % 4);
    return w;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("storage cost prints as a bare number") {
    CliScratch tmp;
    const CliRun r = run_cli(tmp, "bpw --wbits 2 --group 128");
    CHECK(r.exit_code == 0);
    REQUIRE(!r.lines().empty());
    CHECK(r.lines()[0] == "2.375");

    const CliRun u = run_cli(tmp, "bpw --wbits 2 --group 128 --format uniform");
    CHECK(u.lines()[0] == "2.25");
}

TEST_CASE("grid weights quantize without error") {
    CliScratch tmp;
    save_raw_matrix(grid_weights(), tmp.file("w.bin"));
    const CliRun q = run_cli(tmp, "quantize --input " + tmp.file("w.bin") +
                                      " --wbits 2 --group 32 --method rtn --out " +
                                      tmp.file("m.hlqp"));
    CHECK(q.exit_code == 0);
    CHECK(q.contains("quantized 16x128"));

    const CliRun v = run_cli(tmp, "verify --model " + tmp.file("m.hlqp") + " --reference " +
                                      tmp.file("w.bin"));
    CHECK(v.exit_code == 0);
    REQUIRE(v.lines().size() >= 2);
    CHECK(v.lines()[0] == "mse 0");
    CHECK(v.lines()[1] == "cosine 1");
}

TEST_CASE("reconstructed weights match the library path") {
    CliScratch tmp;
    const Matrix w = oracle::gaussian_matrix(24, 64, 0.02f, 601);
    save_raw_matrix(w, tmp.file("w.bin"));
    const CliRun q = run_cli(tmp, "quantize --input " + tmp.file("w.bin") +
                                      " --wbits 3 --group 32 --method hlq-alt --out " +
                                      tmp.file("m.hlqp"));
    REQUIRE(q.exit_code == 0);

    const CliRun d = run_cli(tmp, "dequantize --model " + tmp.file("m.hlqp") + " --out " +
                                      tmp.file("back.bin"));
    CHECK(d.exit_code == 0);
    const Matrix back = load_raw_matrix(tmp.file("back.bin"));
    const Matrix lib = hlqp_dequantize(load_hlqp(tmp.file("m.hlqp")));
    CHECK(back.data == lib.data);
}

TEST_CASE("kernel check passes on both table modes") {
    CliScratch tmp;
    const Matrix w = oracle::gaussian_matrix(32, 128, 0.02f, 607);
    save_raw_matrix(w, tmp.file("w.bin"));
    REQUIRE(run_cli(tmp, "quantize --input " + tmp.file("w.bin") +
                             " --wbits 2 --group 64 --method hlq-alt --out " + tmp.file("m.hlqp"))
                .exit_code == 0);

    const CliRun f32 = run_cli(tmp, "gemm-check --model " + tmp.file("m.hlqp") + " --batch 4");
    CHECK(f32.exit_code == 0);
    CHECK(f32.contains("pass"));

    const CliRun i8 = run_cli(tmp, "gemm-check --model " + tmp.file("m.hlqp") +
                                       " --batch 4 --table int8");
    CHECK(i8.exit_code == 0);
    CHECK(i8.contains("pass"));
}

TEST_CASE("compensation and finetuning run from the command line") {
    CliScratch tmp;
    const Matrix w = oracle::gaussian_matrix(16, 128, 0.02f, 613);
    const Matrix x = oracle::gaussian_matrix(64, 128, 1.0f, 617);
    save_raw_matrix(w, tmp.file("w.bin"));
    save_raw_matrix(x, tmp.file("x.bin"));

    const CliRun g = run_cli(tmp, "quantize --input " + tmp.file("w.bin") + " --calib " +
                                      tmp.file("x.bin") +
                                      " --wbits 2 --group 64 --method hlq-gptq --block 64 --out " +
                                      tmp.file("g.hlqp"));
    CHECK(g.exit_code == 0);
    CHECK(g.contains("hlq-gptq"));

    const CliRun t = run_cli(tmp, "finetune --model " + tmp.file("g.hlqp") + " --calib " +
                                      tmp.file("x.bin") + " --reference " + tmp.file("w.bin") +
                                      " --out " + tmp.file("tuned.hlqp"));
    CHECK(t.exit_code == 0);
    CHECK(t.contains("finetuned over"));
    CHECK(fs::exists(tmp.file("tuned.hlqp")));
}

TEST_CASE("model footprint report uses binary gigabytes") {
    CliScratch tmp;
    const CliRun r = run_cli(tmp, std::string("footprint --shapes ") + HLQ_SHAPES_JSON +
                                      " --wbits 2 --group 128 --format hlq");
    CHECK(r.exit_code == 0);
    CHECK(r.contains("3.887"));
    CHECK(r.contains("GiB"));
}

TEST_CASE("bench writes the pinned csv schema") {
    CliScratch tmp;
    const CliRun r = run_cli(tmp, "bench --shapes 32x64 --wbits 2 --formats hlq --group 64 "
                                  "--threads 1 --reps 10 --csv " +
                                      tmp.file("bench.csv"));
    CHECK(r.exit_code == 0);
    std::ifstream csv(tmp.file("bench.csv"));
    REQUIRE(csv.good());
    std::string header;
    std::getline(csv, header);
    CHECK(header == "shape,q,format,table_mode,threads,reps,mean_s,std_s,lookups");
    std::string row;
    std::getline(csv, row);
    CHECK(row.substr(0, 6) == "32x64,");
}

TEST_CASE("failures exit nonzero with a labeled reason") {
    CliScratch tmp;
    const CliRun missing = run_cli(tmp, "quantize --input " + tmp.file("absent.bin") +
                                            " --out " + tmp.file("m.hlqp"));
    CHECK(missing.exit_code == 1);
    CHECK(missing.contains("io error"));

    const CliRun badflag = run_cli(tmp, "bpw --wbits 2 --frobnicate");
    CHECK(badflag.exit_code != 0);

    const CliRun badbits = run_cli(tmp, "bpw --wbits 9");
    CHECK(badbits.exit_code != 0);

    const CliRun nocalib = run_cli(tmp, "quantize --input " + tmp.file("absent.bin") +
                                            " --method hlq-gptq --out " + tmp.file("m.hlqp"));
    CHECK(nocalib.exit_code != 0);
}

}  // TEST_SUITE

#endif  // HLQ_CLI_PATH
