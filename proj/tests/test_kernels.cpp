#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstring>
#include <vector>

#include "dca/kernels.hpp"
#include "dca/rng.hpp"
#include "doctest.h"

using namespace dca;
using i64 = std::int64_t;

namespace {

std::vector<double> rand_vec(i64 n, Rng& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal();
    return v;
}

bool bits_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("gemm matches a naive triple loop") {
    Rng rng(11);
    const i64 g = 3, m = 5, k = 7, n = 4;
    const auto a = rand_vec(g * m * k, rng);
    const auto b = rand_vec(g * k * n, rng);
    std::vector<double> c(g * m * n), ref(g * m * n, 0.0);
    kernels::gemm_serial(a.data(), b.data(), c.data(), g, m, k, n, false);
    for (i64 gg = 0; gg < g; ++gg) {
        for (i64 i = 0; i < m; ++i) {
            for (i64 j = 0; j < n; ++j) {
                double s = 0.0;
                for (i64 kk = 0; kk < k; ++kk) {
                    s += a[(gg * m + i) * k + kk] * b[(gg * k + kk) * n + j];
                }
                ref[(gg * m + i) * n + j] = s;
            }
        }
    }
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("serial and OpenMP kernels are bit-identical") {
    Rng rng(12);
    const i64 g = 4, m = 33, k = 17, n = 29;
    const auto a = rand_vec(g * m * k, rng);
    const auto b = rand_vec(k * n, rng);
    const auto bfull = rand_vec(g * k * n, rng);

    for (const bool broadcast : {true, false}) {
        const double* bp = broadcast ? b.data() : bfull.data();
        std::vector<double> c1(g * m * n), c2(g * m * n);
        kernels::gemm_serial(a.data(), bp, c1.data(), g, m, k, n, broadcast);
        kernels::gemm_omp(a.data(), bp, c2.data(), g, m, k, n, broadcast);
        CHECK(bits_equal(c1, c2));

        const auto dc = rand_vec(g * m * n, rng);
        std::vector<double> da1(g * m * k, 0.5), da2(g * m * k, 0.5);
        kernels::gemm_acc_da_serial(da1.data(), dc.data(), bp, g, m, k, n, broadcast);
        kernels::gemm_acc_da_omp(da2.data(), dc.data(), bp, g, m, k, n, broadcast);
        CHECK(bits_equal(da1, da2));

        const i64 bn = broadcast ? k * n : g * k * n;
        std::vector<double> db1(bn, -0.25), db2(bn, -0.25);
        kernels::gemm_acc_db_serial(db1.data(), a.data(), dc.data(), g, m, k, n, broadcast);
        kernels::gemm_acc_db_omp(db2.data(), a.data(), dc.data(), g, m, k, n, broadcast);
        CHECK(bits_equal(db1, db2));
    }
}

TEST_CASE("gemm gradient kernels accumulate the right products") {
    Rng rng(13);
    const i64 g = 2, m = 4, k = 3, n = 5;
    const auto a = rand_vec(g * m * k, rng);
    const auto b = rand_vec(k * n, rng);
    const auto dc = rand_vec(g * m * n, rng);

    std::vector<double> da(g * m * k, 0.0);
    kernels::gemm_acc_da(da.data(), dc.data(), b.data(), g, m, k, n, true);
    for (i64 gg = 0; gg < g; ++gg) {
        for (i64 i = 0; i < m; ++i) {
            for (i64 kk = 0; kk < k; ++kk) {
                double s = 0.0;
                for (i64 j = 0; j < n; ++j) s += dc[(gg * m + i) * n + j] * b[kk * n + j];
                CHECK(da[(gg * m + i) * k + kk] == doctest::Approx(s).epsilon(1e-12));
            }
        }
    }

    std::vector<double> db(k * n, 0.0);
    kernels::gemm_acc_db(db.data(), a.data(), dc.data(), g, m, k, n, true);
    for (i64 kk = 0; kk < k; ++kk) {
        for (i64 j = 0; j < n; ++j) {
            double s = 0.0;
            for (i64 gg = 0; gg < g; ++gg) {
                for (i64 i = 0; i < m; ++i) {
                    s += a[(gg * m + i) * k + kk] * dc[(gg * m + i) * n + j];
                }
            }
            CHECK(db[kk * n + j] == doctest::Approx(s).epsilon(1e-12));
        }
    }
}

TEST_CASE("softmax rows: serial/omp identical, rows sum to one") {
    Rng rng(14);
    const i64 rows = 65, cols = 23;
    const auto x = rand_vec(rows * cols, rng);
    std::vector<double> y1(rows * cols), y2(rows * cols);
    kernels::softmax_rows_serial(x.data(), y1.data(), rows, cols);
    kernels::softmax_rows_omp(x.data(), y2.data(), rows, cols);
    CHECK(bits_equal(y1, y2));
    for (i64 r = 0; r < rows; ++r) {
        double s = 0.0;
        for (i64 c = 0; c < cols; ++c) s += y1[r * cols + c];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }

    const auto dy = rand_vec(rows * cols, rng);
    std::vector<double> dx1(rows * cols, 0.0), dx2(rows * cols, 0.0);
    kernels::softmax_bwd_rows_serial(dx1.data(), y1.data(), dy.data(), rows, cols);
    kernels::softmax_bwd_rows_omp(dx2.data(), y1.data(), dy.data(), rows, cols);
    CHECK(bits_equal(dx1, dx2));
}

TEST_CASE("elementwise kernels: serial/omp identical") {
    Rng rng(15);
    const i64 n = 40000;  // above the parallel grain
    const auto a = rand_vec(n, rng);
    const auto b = rand_vec(n, rng);
    std::vector<double> c1(n), c2(n);

    kernels::ew_add_serial(a.data(), b.data(), c1.data(), n);
    kernels::ew_add_omp(a.data(), b.data(), c2.data(), n);
    CHECK(bits_equal(c1, c2));

    kernels::ew_mul_serial(a.data(), b.data(), c1.data(), n);
    kernels::ew_mul_omp(a.data(), b.data(), c2.data(), n);
    CHECK(bits_equal(c1, c2));

    kernels::ew_silu_serial(a.data(), c1.data(), n);
    kernels::ew_silu_omp(a.data(), c2.data(), n);
    CHECK(bits_equal(c1, c2));

    std::vector<double> dx1(n, 0.0), dx2(n, 0.0);
    kernels::ew_silu_bwd_serial(dx1.data(), a.data(), b.data(), n);
    kernels::ew_silu_bwd_omp(dx2.data(), a.data(), b.data(), n);
    CHECK(bits_equal(dx1, dx2));

    kernels::rms_rows_serial(a.data(), b.data(), c1.data(), 200, 200, 1e-6);
    kernels::rms_rows_omp(a.data(), b.data(), c2.data(), 200, 200, 1e-6);
    CHECK(bits_equal(c1, c2));
}

TEST_CASE("dispatch respects the parallel switch") {
    const bool prev = kernels::parallel_enabled();
    kernels::set_parallel(false);
    CHECK_FALSE(kernels::parallel_enabled());
    Rng rng(16);
    const i64 n = 1 << 16;
    const auto a = rand_vec(n, rng);
    const auto b = rand_vec(n, rng);
    std::vector<double> c1(n), c2(n);
    kernels::ew_add(a.data(), b.data(), c1.data(), n);
    kernels::set_parallel(true);
    kernels::ew_add(a.data(), b.data(), c2.data(), n);
    CHECK(bits_equal(c1, c2));
    kernels::set_parallel(prev);
}
