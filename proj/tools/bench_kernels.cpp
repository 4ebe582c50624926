// Timings of the serial reference kernels against the OpenMP versions on
// training-shaped workloads.

#include <chrono>
#include <cstdio>
#include <vector>

#include "dca/kernels.hpp"
#include "dca/rng.hpp"

namespace {

using Clock = std::chrono::steady_clock;
using dca::kernels::gemm_omp;
using dca::kernels::gemm_serial;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::vector<double> random_vec(std::int64_t n, dca::Rng& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal();
    return v;
}

void bench_gemm(std::int64_t groups, std::int64_t m, std::int64_t k, std::int64_t n, int reps) {
    dca::Rng rng(1);
    const std::vector<double> a = random_vec(groups * m * k, rng);
    const std::vector<double> b = random_vec(k * n, rng);
    std::vector<double> c(groups * m * n);

    auto t0 = Clock::now();
    for (int r = 0; r < reps; ++r) {
        gemm_serial(a.data(), b.data(), c.data(), groups, m, k, n, true);
    }
    const double serial_ms = ms_since(t0) / reps;

    t0 = Clock::now();
    for (int r = 0; r < reps; ++r) {
        gemm_omp(a.data(), b.data(), c.data(), groups, m, k, n, true);
    }
    const double omp_ms = ms_since(t0) / reps;

    const double gflop = 2.0 * groups * m * k * n * 1e-9;
    std::printf("gemm %3lldx%4lldx%4lldx%4lld  serial %8.3f ms (%5.2f GF/s)  omp %8.3f ms (%5.2f GF/s)  speedup %.2fx\n",
                static_cast<long long>(groups), static_cast<long long>(m),
                static_cast<long long>(k), static_cast<long long>(n), serial_ms,
                gflop / (serial_ms * 1e-3), omp_ms, gflop / (omp_ms * 1e-3), serial_ms / omp_ms);
}

void bench_softmax(std::int64_t rows, std::int64_t cols, int reps) {
    dca::Rng rng(2);
    const std::vector<double> x = random_vec(rows * cols, rng);
    std::vector<double> y(rows * cols);

    auto t0 = Clock::now();
    for (int r = 0; r < reps; ++r) dca::kernels::softmax_rows_serial(x.data(), y.data(), rows, cols);
    const double serial_ms = ms_since(t0) / reps;

    t0 = Clock::now();
    for (int r = 0; r < reps; ++r) dca::kernels::softmax_rows_omp(x.data(), y.data(), rows, cols);
    const double omp_ms = ms_since(t0) / reps;

    std::printf("softmax %6lld rows x %4lld  serial %8.3f ms  omp %8.3f ms  speedup %.2fx\n",
                static_cast<long long>(rows), static_cast<long long>(cols), serial_ms, omp_ms,
                serial_ms / omp_ms);
}

}  // namespace

int main() {
    std::printf("threads: %d\n", dca::kernels::thread_count());
    // Shapes that dominate a desk-scale training step.
    bench_gemm(8, 96, 64, 64, 50);     // qkv/out projections
    bench_gemm(8, 96, 64, 128, 50);    // mlp in
    bench_gemm(8, 96, 128, 64, 50);    // mlp out
    bench_gemm(32, 96, 16, 106, 50);   // attention scores per head
    bench_gemm(1, 512, 512, 512, 5);   // large square reference point
    bench_softmax(32 * 96, 106, 200);
    bench_softmax(1 << 15, 64, 50);
    return 0;
}
