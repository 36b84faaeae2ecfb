// Compares the serial reference kernels against the OpenMP variants and times
// a toy-backend forward pass. Results are informational; agreement between the
// two implementations is what the test suite asserts.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "xccd/backend.hpp"
#include "xccd/kernels.hpp"
#include "xccd/util.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double time_ms(const std::function<void()>& fn, int reps) {
    const auto start = Clock::now();
    for (int i = 0; i < reps; ++i) fn();
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count() /
           static_cast<double>(reps);
}

void bench_matmul(std::size_t n, int reps) {
    xccd::Rng rng(7);
    std::vector<double> a(n * n), b(n * n), c(n * n);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();

    const double t_serial =
        time_ms([&] { xccd::kern::serial::matmul(c.data(), a.data(), b.data(), n, n, n); }, reps);
    std::vector<double> c_par(n * n);
    const double t_par = time_ms(
        [&] { xccd::kern::par::matmul(c_par.data(), a.data(), b.data(), n, n, n); }, reps);

    const bool equal = std::memcmp(c.data(), c_par.data(), n * n * sizeof(double)) == 0;
    std::printf("matmul %4zux%-4zu  serial %8.2f ms  omp %8.2f ms  speedup %5.2fx  %s\n", n, n,
                t_serial, t_par, t_serial / t_par, equal ? "bitwise-equal" : "MISMATCH");
}

void bench_forward(int block, int reps) {
    xccd::backend::ToyConfig cfg;
    cfg.block_size = block;
    xccd::backend::ToyBackend toy(cfg);
    std::string text(static_cast<std::size_t>(block - 32), 'a');
    auto seq = toy.encode_prompt(std::nullopt, text);
    const double t =
        time_ms([&] { auto r = toy.forward(seq); (void)r; }, reps);
    std::printf("toy forward T=%-4zu d=%d L=%d            %8.2f ms\n", seq.size(), cfg.dim,
                cfg.layers, t);
}

}  // namespace

int main(int argc, char** argv) {
    const bool quick = argc > 1 && std::string(argv[1]) == "--quick";
#ifdef _OPENMP
    std::printf("openmp threads: %d\n", omp_get_max_threads());
#else
    std::printf("openmp: not enabled\n");
#endif
    if (quick) {
        bench_matmul(64, 3);
        bench_forward(128, 3);
        return 0;
    }
    for (std::size_t n : {64, 128, 256, 512}) bench_matmul(n, n >= 512 ? 3 : 10);
    for (int block : {128, 256, 512}) bench_forward(block, 5);
    return 0;
}
