#pragma once

// Dense row-major kernels behind the tensor ops.
//
// Every kernel has a serial reference in `ddvqa::kernels::serial` and an
// OpenMP version in `ddvqa::kernels::omp`. The parallel versions split work
// over output rows only and keep the per-element reduction order of the
// serial code, so both produce bit-identical results for any thread count.

#include <cstddef>
#include <span>

namespace ddvqa::kernels {

struct MatDims {
  std::size_t rows;
  std::size_t inner;
  std::size_t cols;
};

namespace serial {

// out[r,c] += sum_k a[r,k] * b[k,c]
void matmul_acc(std::span<const double> a, std::span<const double> b,
                std::span<double> out, MatDims d);
// out[r,c] += sum_k a[r,k] * b[c,k]   (a · bᵀ, b stored as [cols, inner])
void matmul_nt_acc(std::span<const double> a, std::span<const double> b,
                   std::span<double> out, MatDims d);
// out[k,c] += sum_r a[r,k] * b[r,c]   (aᵀ · b, a stored as [rows, inner])
void matmul_tn_acc(std::span<const double> a, std::span<const double> b,
                   std::span<double> out, MatDims d);

void softmax_rows(std::span<const double> x, std::span<double> out,
                  std::size_t rows, std::size_t cols);
void layer_norm_rows(std::span<const double> x, std::span<const double> gain,
                     std::span<const double> bias, double eps,
                     std::span<double> out, std::span<double> mean,
                     std::span<double> rstd, std::size_t rows,
                     std::size_t cols);

}  // namespace serial

namespace omp {

void matmul_acc(std::span<const double> a, std::span<const double> b,
                std::span<double> out, MatDims d);
void matmul_nt_acc(std::span<const double> a, std::span<const double> b,
                   std::span<double> out, MatDims d);
void matmul_tn_acc(std::span<const double> a, std::span<const double> b,
                   std::span<double> out, MatDims d);
void softmax_rows(std::span<const double> x, std::span<double> out,
                  std::size_t rows, std::size_t cols);
void layer_norm_rows(std::span<const double> x, std::span<const double> gain,
                     std::span<const double> bias, double eps,
                     std::span<double> out, std::span<double> mean,
                     std::span<double> rstd, std::size_t rows,
                     std::size_t cols);

}  // namespace omp

/// Number of threads the OpenMP kernels will use (1 when built without OpenMP).
int max_threads();

/// Kernels used by the tensor ops: OpenMP when available, serial otherwise.
/// Work below `kParallelThreshold` multiply-adds always takes the serial path.
inline constexpr std::size_t kParallelThreshold = 1u << 15;

void matmul_acc(std::span<const double> a, std::span<const double> b,
                std::span<double> out, MatDims d);
void matmul_nt_acc(std::span<const double> a, std::span<const double> b,
                   std::span<double> out, MatDims d);
void matmul_tn_acc(std::span<const double> a, std::span<const double> b,
                   std::span<double> out, MatDims d);

}  // namespace ddvqa::kernels
