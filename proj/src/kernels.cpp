#include "dca/kernels.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dca::kernels {

namespace {

std::atomic<bool> g_parallel{[] {
    const char* s = std::getenv("DCA_SERIAL");
    return !(s && s[0] == '1');
}()};

using i64 = std::int64_t;

// Shared per-row bodies. Serial and OpenMP drivers call the same body so the
// two paths execute identical arithmetic per output element.

inline void gemm_row(const double* arow, const double* bg, double* crow, i64 k, i64 n) {
    for (i64 j = 0; j < n; ++j) crow[j] = 0.0;
    for (i64 kk = 0; kk < k; ++kk) {
        const double av = arow[kk];
        const double* brow = bg + kk * n;
        for (i64 j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
}

inline void gemm_da_row(double* darow, const double* dcrow, const double* bg, i64 k, i64 n) {
    for (i64 kk = 0; kk < k; ++kk) {
        const double* brow = bg + kk * n;
        double s = 0.0;
        for (i64 j = 0; j < n; ++j) s += dcrow[j] * brow[j];
        darow[kk] += s;
    }
}

// db row kk of one group: db[kk,:] += sum_i a[i,kk] * dc[i,:]
inline void gemm_db_row(double* dbrow, const double* ag, const double* dcg,
                        i64 m, i64 k, i64 n, i64 kk) {
    for (i64 i = 0; i < m; ++i) {
        const double av = ag[i * k + kk];
        const double* dcrow = dcg + i * n;
        for (i64 j = 0; j < n; ++j) dbrow[j] += av * dcrow[j];
    }
}

inline void softmax_row(const double* xr, double* yr, i64 cols) {
    double mx = -std::numeric_limits<double>::infinity();
    for (i64 j = 0; j < cols; ++j) mx = xr[j] > mx ? xr[j] : mx;
    double sum = 0.0;
    for (i64 j = 0; j < cols; ++j) {
        const double e = std::exp(xr[j] - mx);
        yr[j] = e;
        sum += e;
    }
    const double inv = 1.0 / sum;
    for (i64 j = 0; j < cols; ++j) yr[j] *= inv;
}

inline void softmax_bwd_row(double* dx, const double* y, const double* dy, i64 cols) {
    double dot = 0.0;
    for (i64 j = 0; j < cols; ++j) dot += dy[j] * y[j];
    for (i64 j = 0; j < cols; ++j) dx[j] += y[j] * (dy[j] - dot);
}

inline double silu_val(double v) {
    const double s = 1.0 / (1.0 + std::exp(-v));
    return v * s;
}

inline double silu_grad(double v) {
    const double s = 1.0 / (1.0 + std::exp(-v));
    return s * (1.0 + v * (1.0 - s));
}

inline void rms_row(const double* x, const double* w, double* y, i64 cols, double eps) {
    double ss = 0.0;
    for (i64 j = 0; j < cols; ++j) ss += x[j] * x[j];
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(cols) + eps);
    for (i64 j = 0; j < cols; ++j) y[j] = x[j] * inv * w[j];
}

constexpr i64 kGrain = 1 << 14;

inline bool go_parallel(i64 work) {
    return g_parallel.load(std::memory_order_relaxed) && work >= kGrain;
}

}  // namespace

bool parallel_enabled() noexcept { return g_parallel.load(std::memory_order_relaxed); }
void set_parallel(bool on) noexcept { g_parallel.store(on, std::memory_order_relaxed); }

int thread_count() noexcept {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void gemm_serial(const double* a, const double* b, double* c, i64 groups,
                 i64 m, i64 k, i64 n, bool broadcast_b) {
    for (i64 r = 0; r < groups * m; ++r) {
        const i64 g = r / m, i = r % m;
        gemm_row(a + (g * m + i) * k, broadcast_b ? b : b + g * k * n,
                 c + (g * m + i) * n, k, n);
    }
}

void gemm_omp(const double* a, const double* b, double* c, i64 groups,
              i64 m, i64 k, i64 n, bool broadcast_b) {
#pragma omp parallel for schedule(static)
    for (i64 r = 0; r < groups * m; ++r) {
        const i64 g = r / m, i = r % m;
        gemm_row(a + (g * m + i) * k, broadcast_b ? b : b + g * k * n,
                 c + (g * m + i) * n, k, n);
    }
}

void gemm(const double* a, const double* b, double* c, i64 groups,
          i64 m, i64 k, i64 n, bool broadcast_b) {
    if (go_parallel(groups * m * k * n)) {
        gemm_omp(a, b, c, groups, m, k, n, broadcast_b);
    } else {
        gemm_serial(a, b, c, groups, m, k, n, broadcast_b);
    }
}

void gemm_acc_da_serial(double* da, const double* dc, const double* b, i64 groups,
                        i64 m, i64 k, i64 n, bool broadcast_b) {
    for (i64 r = 0; r < groups * m; ++r) {
        const i64 g = r / m, i = r % m;
        gemm_da_row(da + (g * m + i) * k, dc + (g * m + i) * n,
                    broadcast_b ? b : b + g * k * n, k, n);
    }
}

void gemm_acc_da_omp(double* da, const double* dc, const double* b, i64 groups,
                     i64 m, i64 k, i64 n, bool broadcast_b) {
#pragma omp parallel for schedule(static)
    for (i64 r = 0; r < groups * m; ++r) {
        const i64 g = r / m, i = r % m;
        gemm_da_row(da + (g * m + i) * k, dc + (g * m + i) * n,
                    broadcast_b ? b : b + g * k * n, k, n);
    }
}

void gemm_acc_da(double* da, const double* dc, const double* b, i64 groups,
                 i64 m, i64 k, i64 n, bool broadcast_b) {
    if (go_parallel(groups * m * k * n)) {
        gemm_acc_da_omp(da, dc, b, groups, m, k, n, broadcast_b);
    } else {
        gemm_acc_da_serial(da, dc, b, groups, m, k, n, broadcast_b);
    }
}

// With broadcast_b the accumulation over groups runs serially inside each
// k-row so the result stays independent of the thread schedule.
void gemm_acc_db_serial(double* db, const double* a, const double* dc, i64 groups,
                        i64 m, i64 k, i64 n, bool broadcast_b) {
    if (broadcast_b) {
        for (i64 kk = 0; kk < k; ++kk) {
            for (i64 g = 0; g < groups; ++g) {
                gemm_db_row(db + kk * n, a + g * m * k, dc + g * m * n, m, k, n, kk);
            }
        }
    } else {
        for (i64 r = 0; r < groups * k; ++r) {
            const i64 g = r / k, kk = r % k;
            gemm_db_row(db + (g * k + kk) * n, a + g * m * k, dc + g * m * n, m, k, n, kk);
        }
    }
}

void gemm_acc_db_omp(double* db, const double* a, const double* dc, i64 groups,
                     i64 m, i64 k, i64 n, bool broadcast_b) {
    if (broadcast_b) {
#pragma omp parallel for schedule(static)
        for (i64 kk = 0; kk < k; ++kk) {
            for (i64 g = 0; g < groups; ++g) {
                gemm_db_row(db + kk * n, a + g * m * k, dc + g * m * n, m, k, n, kk);
            }
        }
    } else {
#pragma omp parallel for schedule(static)
        for (i64 r = 0; r < groups * k; ++r) {
            const i64 g = r / k, kk = r % k;
            gemm_db_row(db + (g * k + kk) * n, a + g * m * k, dc + g * m * n, m, k, n, kk);
        }
    }
}

void gemm_acc_db(double* db, const double* a, const double* dc, i64 groups,
                 i64 m, i64 k, i64 n, bool broadcast_b) {
    if (go_parallel(groups * m * k * n)) {
        gemm_acc_db_omp(db, a, dc, groups, m, k, n, broadcast_b);
    } else {
        gemm_acc_db_serial(db, a, dc, groups, m, k, n, broadcast_b);
    }
}

void softmax_rows_serial(const double* x, double* y, i64 rows, i64 cols) {
    for (i64 r = 0; r < rows; ++r) softmax_row(x + r * cols, y + r * cols, cols);
}

void softmax_rows_omp(const double* x, double* y, i64 rows, i64 cols) {
#pragma omp parallel for schedule(static)
    for (i64 r = 0; r < rows; ++r) softmax_row(x + r * cols, y + r * cols, cols);
}

void softmax_rows(const double* x, double* y, i64 rows, i64 cols) {
    if (go_parallel(rows * cols)) {
        softmax_rows_omp(x, y, rows, cols);
    } else {
        softmax_rows_serial(x, y, rows, cols);
    }
}

void softmax_bwd_rows_serial(double* dx, const double* y, const double* dy,
                             i64 rows, i64 cols) {
    for (i64 r = 0; r < rows; ++r) {
        softmax_bwd_row(dx + r * cols, y + r * cols, dy + r * cols, cols);
    }
}

void softmax_bwd_rows_omp(double* dx, const double* y, const double* dy,
                          i64 rows, i64 cols) {
#pragma omp parallel for schedule(static)
    for (i64 r = 0; r < rows; ++r) {
        softmax_bwd_row(dx + r * cols, y + r * cols, dy + r * cols, cols);
    }
}

void softmax_bwd_rows(double* dx, const double* y, const double* dy, i64 rows, i64 cols) {
    if (go_parallel(rows * cols)) {
        softmax_bwd_rows_omp(dx, y, dy, rows, cols);
    } else {
        softmax_bwd_rows_serial(dx, y, dy, rows, cols);
    }
}

void ew_add_serial(const double* a, const double* b, double* c, i64 n) {
    for (i64 i = 0; i < n; ++i) c[i] = a[i] + b[i];
}

void ew_add_omp(const double* a, const double* b, double* c, i64 n) {
#pragma omp parallel for schedule(static)
    for (i64 i = 0; i < n; ++i) c[i] = a[i] + b[i];
}

void ew_add(const double* a, const double* b, double* c, i64 n) {
    if (go_parallel(n)) ew_add_omp(a, b, c, n); else ew_add_serial(a, b, c, n);
}

void ew_mul_serial(const double* a, const double* b, double* c, i64 n) {
    for (i64 i = 0; i < n; ++i) c[i] = a[i] * b[i];
}

void ew_mul_omp(const double* a, const double* b, double* c, i64 n) {
#pragma omp parallel for schedule(static)
    for (i64 i = 0; i < n; ++i) c[i] = a[i] * b[i];
}

void ew_mul(const double* a, const double* b, double* c, i64 n) {
    if (go_parallel(n)) ew_mul_omp(a, b, c, n); else ew_mul_serial(a, b, c, n);
}

void ew_silu_serial(const double* x, double* y, i64 n) {
    for (i64 i = 0; i < n; ++i) y[i] = silu_val(x[i]);
}

void ew_silu_omp(const double* x, double* y, i64 n) {
#pragma omp parallel for schedule(static)
    for (i64 i = 0; i < n; ++i) y[i] = silu_val(x[i]);
}

void ew_silu(const double* x, double* y, i64 n) {
    if (go_parallel(n)) ew_silu_omp(x, y, n); else ew_silu_serial(x, y, n);
}

void ew_silu_bwd_serial(double* dx, const double* x, const double* dy, i64 n) {
    for (i64 i = 0; i < n; ++i) dx[i] += dy[i] * silu_grad(x[i]);
}

void ew_silu_bwd_omp(double* dx, const double* x, const double* dy, i64 n) {
#pragma omp parallel for schedule(static)
    for (i64 i = 0; i < n; ++i) dx[i] += dy[i] * silu_grad(x[i]);
}

void ew_silu_bwd(double* dx, const double* x, const double* dy, i64 n) {
    if (go_parallel(n)) ew_silu_bwd_omp(dx, x, dy, n); else ew_silu_bwd_serial(dx, x, dy, n);
}

void ew_scale_serial(const double* x, double* y, double c, i64 n) {
    for (i64 i = 0; i < n; ++i) y[i] = c * x[i];
}

void ew_scale_omp(const double* x, double* y, double c, i64 n) {
#pragma omp parallel for schedule(static)
    for (i64 i = 0; i < n; ++i) y[i] = c * x[i];
}

void ew_scale(const double* x, double* y, double c, i64 n) {
    if (go_parallel(n)) ew_scale_omp(x, y, c, n); else ew_scale_serial(x, y, c, n);
}

void acc_scaled_serial(double* dst, const double* src, double c, i64 n) {
    for (i64 i = 0; i < n; ++i) dst[i] += c * src[i];
}

void acc_scaled_omp(double* dst, const double* src, double c, i64 n) {
#pragma omp parallel for schedule(static)
    for (i64 i = 0; i < n; ++i) dst[i] += c * src[i];
}

void acc_scaled(double* dst, const double* src, double c, i64 n) {
    if (go_parallel(n)) acc_scaled_omp(dst, src, c, n); else acc_scaled_serial(dst, src, c, n);
}

void rms_rows_serial(const double* x, const double* w, double* y,
                     i64 rows, i64 cols, double eps) {
    for (i64 r = 0; r < rows; ++r) rms_row(x + r * cols, w, y + r * cols, cols, eps);
}

void rms_rows_omp(const double* x, const double* w, double* y,
                  i64 rows, i64 cols, double eps) {
#pragma omp parallel for schedule(static)
    for (i64 r = 0; r < rows; ++r) rms_row(x + r * cols, w, y + r * cols, cols, eps);
}

void rms_rows(const double* x, const double* w, double* y, i64 rows, i64 cols, double eps) {
    if (go_parallel(rows * cols)) {
        rms_rows_omp(x, w, y, rows, cols, eps);
    } else {
        rms_rows_serial(x, w, y, rows, cols, eps);
    }
}

}  // namespace dca::kernels
