#pragma once

#include <cstdint>

// Low-level dense kernels behind the tensor ops. Every kernel exists in a
// serial form and an OpenMP form that split work so each output element is
// produced by exactly one thread with a fixed inner-loop order, so the two
// forms are bit-identical and results do not depend on the thread count.
// The unsuffixed entry points dispatch on parallel_enabled().

namespace dca::kernels {

bool parallel_enabled() noexcept;
void set_parallel(bool on) noexcept;
int thread_count() noexcept;

// c[g,m,n] = sum_k a[g,m,k] * b[g,k,n]; broadcast_b reuses b[0] for every g.
void gemm_serial(const double* a, const double* b, double* c, std::int64_t groups,
                 std::int64_t m, std::int64_t k, std::int64_t n, bool broadcast_b);
void gemm_omp(const double* a, const double* b, double* c, std::int64_t groups,
              std::int64_t m, std::int64_t k, std::int64_t n, bool broadcast_b);
void gemm(const double* a, const double* b, double* c, std::int64_t groups,
          std::int64_t m, std::int64_t k, std::int64_t n, bool broadcast_b);

// da[g,m,k] += sum_n dc[g,m,n] * b[g,k,n]   (dC · Bᵀ)
void gemm_acc_da_serial(double* da, const double* dc, const double* b, std::int64_t groups,
                        std::int64_t m, std::int64_t k, std::int64_t n, bool broadcast_b);
void gemm_acc_da_omp(double* da, const double* dc, const double* b, std::int64_t groups,
                     std::int64_t m, std::int64_t k, std::int64_t n, bool broadcast_b);
void gemm_acc_da(double* da, const double* dc, const double* b, std::int64_t groups,
                 std::int64_t m, std::int64_t k, std::int64_t n, bool broadcast_b);

// db[g,k,n] += sum_m a[g,m,k] * dc[g,m,n]   (Aᵀ · dC)
// With broadcast_b the sum also runs over g into the single db[0] slice.
void gemm_acc_db_serial(double* db, const double* a, const double* dc, std::int64_t groups,
                        std::int64_t m, std::int64_t k, std::int64_t n, bool broadcast_b);
void gemm_acc_db_omp(double* db, const double* a, const double* dc, std::int64_t groups,
                     std::int64_t m, std::int64_t k, std::int64_t n, bool broadcast_b);
void gemm_acc_db(double* db, const double* a, const double* dc, std::int64_t groups,
                 std::int64_t m, std::int64_t k, std::int64_t n, bool broadcast_b);

// Row-wise max-subtracted softmax; -inf entries map to exact zeros.
void softmax_rows_serial(const double* x, double* y, std::int64_t rows, std::int64_t cols);
void softmax_rows_omp(const double* x, double* y, std::int64_t rows, std::int64_t cols);
void softmax_rows(const double* x, double* y, std::int64_t rows, std::int64_t cols);

// dx[r,c] += y[r,c] * (dy[r,c] - sum_j dy[r,j]*y[r,j])
void softmax_bwd_rows_serial(double* dx, const double* y, const double* dy,
                             std::int64_t rows, std::int64_t cols);
void softmax_bwd_rows_omp(double* dx, const double* y, const double* dy,
                          std::int64_t rows, std::int64_t cols);
void softmax_bwd_rows(double* dx, const double* y, const double* dy,
                      std::int64_t rows, std::int64_t cols);

// Elementwise.
void ew_add_serial(const double* a, const double* b, double* c, std::int64_t n);
void ew_add_omp(const double* a, const double* b, double* c, std::int64_t n);
void ew_add(const double* a, const double* b, double* c, std::int64_t n);

void ew_mul_serial(const double* a, const double* b, double* c, std::int64_t n);
void ew_mul_omp(const double* a, const double* b, double* c, std::int64_t n);
void ew_mul(const double* a, const double* b, double* c, std::int64_t n);

void ew_silu_serial(const double* x, double* y, std::int64_t n);
void ew_silu_omp(const double* x, double* y, std::int64_t n);
void ew_silu(const double* x, double* y, std::int64_t n);

// dx[i] += dy[i] * d silu / dx at x[i]
void ew_silu_bwd_serial(double* dx, const double* x, const double* dy, std::int64_t n);
void ew_silu_bwd_omp(double* dx, const double* x, const double* dy, std::int64_t n);
void ew_silu_bwd(double* dx, const double* x, const double* dy, std::int64_t n);

// y[i] = c * x[i] and dx[i] += c * dy[i]
void ew_scale_serial(const double* x, double* y, double c, std::int64_t n);
void ew_scale_omp(const double* x, double* y, double c, std::int64_t n);
void ew_scale(const double* x, double* y, double c, std::int64_t n);

void acc_scaled_serial(double* dst, const double* src, double c, std::int64_t n);
void acc_scaled_omp(double* dst, const double* src, double c, std::int64_t n);
void acc_scaled(double* dst, const double* src, double c, std::int64_t n);

// y[r,c] = x[r,c] * w[c] / rms(x[r,:]), rms = sqrt(mean(x^2) + eps)
void rms_rows_serial(const double* x, const double* w, double* y,
                     std::int64_t rows, std::int64_t cols, double eps);
void rms_rows_omp(const double* x, const double* w, double* y,
                  std::int64_t rows, std::int64_t cols, double eps);
void rms_rows(const double* x, const double* w, double* y,
              std::int64_t rows, std::int64_t cols, double eps);

}  // namespace dca::kernels
