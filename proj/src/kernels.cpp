#include "ddvqa/kernels.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ddvqa::kernels {

namespace {

inline void softmax_row(const double* x, double* out, std::size_t cols) {
  double mx = x[0];
  for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
  double total = 0.0;
  for (std::size_t c = 0; c < cols; ++c) {
    out[c] = std::exp(x[c] - mx);
    total += out[c];
  }
  const double inv = 1.0 / total;
  for (std::size_t c = 0; c < cols; ++c) out[c] *= inv;
}

inline void layer_norm_row(const double* x, const double* gain,
                           const double* bias, double eps, double* out,
                           double* mean, double* rstd, std::size_t cols) {
  double m = 0.0;
  for (std::size_t c = 0; c < cols; ++c) m += x[c];
  m /= static_cast<double>(cols);
  double var = 0.0;
  for (std::size_t c = 0; c < cols; ++c) var += (x[c] - m) * (x[c] - m);
  var /= static_cast<double>(cols);
  const double rs = 1.0 / std::sqrt(var + eps);
  for (std::size_t c = 0; c < cols; ++c)
    out[c] = (x[c] - m) * rs * gain[c] + bias[c];
  *mean = m;
  *rstd = rs;
}

}  // namespace

namespace serial {

void matmul_acc(std::span<const double> a, std::span<const double> b,
                std::span<double> out, MatDims d) {
  for (std::size_t r = 0; r < d.rows; ++r) {
    double* o = out.data() + r * d.cols;
    const double* ar = a.data() + r * d.inner;
    for (std::size_t k = 0; k < d.inner; ++k) {
      const double av = ar[k];
      const double* br = b.data() + k * d.cols;
      for (std::size_t c = 0; c < d.cols; ++c) o[c] += av * br[c];
    }
  }
}

void matmul_nt_acc(std::span<const double> a, std::span<const double> b,
                   std::span<double> out, MatDims d) {
  for (std::size_t r = 0; r < d.rows; ++r) {
    const double* ar = a.data() + r * d.inner;
    for (std::size_t c = 0; c < d.cols; ++c) {
      const double* bc = b.data() + c * d.inner;
      double s = 0.0;
      for (std::size_t k = 0; k < d.inner; ++k) s += ar[k] * bc[k];
      out[r * d.cols + c] += s;
    }
  }
}

void matmul_tn_acc(std::span<const double> a, std::span<const double> b,
                   std::span<double> out, MatDims d) {
  for (std::size_t r = 0; r < d.rows; ++r) {
    const double* ar = a.data() + r * d.inner;
    const double* br = b.data() + r * d.cols;
    for (std::size_t k = 0; k < d.inner; ++k) {
      const double av = ar[k];
      double* o = out.data() + k * d.cols;
      for (std::size_t c = 0; c < d.cols; ++c) o[c] += av * br[c];
    }
  }
}

void softmax_rows(std::span<const double> x, std::span<double> out,
                  std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r)
    softmax_row(x.data() + r * cols, out.data() + r * cols, cols);
}

void layer_norm_rows(std::span<const double> x, std::span<const double> gain,
                     std::span<const double> bias, double eps,
                     std::span<double> out, std::span<double> mean,
                     std::span<double> rstd, std::size_t rows,
                     std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r)
    layer_norm_row(x.data() + r * cols, gain.data(), bias.data(), eps,
                   out.data() + r * cols, &mean[r], &rstd[r], cols);
}

}  // namespace serial

namespace omp {

void matmul_acc(std::span<const double> a, std::span<const double> b,
                std::span<double> out, MatDims d) {
  const auto rows = static_cast<std::ptrdiff_t>(d.rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    double* o = out.data() + r * d.cols;
    const double* ar = a.data() + r * d.inner;
    for (std::size_t k = 0; k < d.inner; ++k) {
      const double av = ar[k];
      const double* br = b.data() + k * d.cols;
      for (std::size_t c = 0; c < d.cols; ++c) o[c] += av * br[c];
    }
  }
}

void matmul_nt_acc(std::span<const double> a, std::span<const double> b,
                   std::span<double> out, MatDims d) {
  const auto rows = static_cast<std::ptrdiff_t>(d.rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const double* ar = a.data() + r * d.inner;
    for (std::size_t c = 0; c < d.cols; ++c) {
      const double* bc = b.data() + c * d.inner;
      double s = 0.0;
      for (std::size_t k = 0; k < d.inner; ++k) s += ar[k] * bc[k];
      out[r * d.cols + c] += s;
    }
  }
}

// Parallel over output rows k; each element still accumulates over r in
// ascending order, matching the serial loop nest.
void matmul_tn_acc(std::span<const double> a, std::span<const double> b,
                   std::span<double> out, MatDims d) {
  const auto inner = static_cast<std::ptrdiff_t>(d.inner);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t k = 0; k < inner; ++k) {
    double* o = out.data() + k * d.cols;
    for (std::size_t r = 0; r < d.rows; ++r) {
      const double av = a[r * d.inner + k];
      const double* br = b.data() + r * d.cols;
      for (std::size_t c = 0; c < d.cols; ++c) o[c] += av * br[c];
    }
  }
}

void softmax_rows(std::span<const double> x, std::span<double> out,
                  std::size_t rows, std::size_t cols) {
  const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < n; ++r)
    softmax_row(x.data() + r * cols, out.data() + r * cols, cols);
}

void layer_norm_rows(std::span<const double> x, std::span<const double> gain,
                     std::span<const double> bias, double eps,
                     std::span<double> out, std::span<double> mean,
                     std::span<double> rstd, std::size_t rows,
                     std::size_t cols) {
  const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < n; ++r)
    layer_norm_row(x.data() + r * cols, gain.data(), bias.data(), eps,
                   out.data() + r * cols, &mean[r], &rstd[r], cols);
}

}  // namespace omp

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace {
bool use_parallel(MatDims d) {
  return max_threads() > 1 && d.rows * d.inner * d.cols >= kParallelThreshold;
}
}  // namespace

void matmul_acc(std::span<const double> a, std::span<const double> b,
                std::span<double> out, MatDims d) {
  if (use_parallel(d))
    omp::matmul_acc(a, b, out, d);
  else
    serial::matmul_acc(a, b, out, d);
}

void matmul_nt_acc(std::span<const double> a, std::span<const double> b,
                   std::span<double> out, MatDims d) {
  if (use_parallel(d))
    omp::matmul_nt_acc(a, b, out, d);
  else
    serial::matmul_nt_acc(a, b, out, d);
}

void matmul_tn_acc(std::span<const double> a, std::span<const double> b,
                   std::span<double> out, MatDims d) {
  if (use_parallel(d))
    omp::matmul_tn_acc(a, b, out, d);
  else
    serial::matmul_tn_acc(a, b, out, d);
}

}  // namespace ddvqa::kernels
