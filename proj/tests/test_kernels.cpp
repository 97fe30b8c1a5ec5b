#include <vector>

#include "ddvqa/kernels.hpp"
#include "ddvqa/rng.hpp"
#include "doctest.h"

using namespace ddvqa;

namespace {

std::vector<double> random_values(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = 2.0 * uniform01(rng) - 1.0;
  return v;
}

}  // namespace

TEST_CASE("openmp kernels are bitwise equal to the serial reference") {
  Rng rng(2024);
  for (kernels::MatDims d : {kernels::MatDims{1, 1, 1}, kernels::MatDims{7, 13, 5},
                             kernels::MatDims{65, 128, 96}}) {
    const auto a = random_values(d.rows * d.inner, rng);
    const auto b = random_values(d.inner * d.cols, rng);
    const auto bt = random_values(d.cols * d.inner, rng);
    const auto c = random_values(d.rows * d.cols, rng);

    std::vector<double> s(d.rows * d.cols, 0.5), p = s;
    kernels::serial::matmul_acc(a, b, s, d);
    kernels::omp::matmul_acc(a, b, p, d);
    CHECK(s == p);

    std::fill(s.begin(), s.end(), 0.0);
    std::fill(p.begin(), p.end(), 0.0);
    kernels::serial::matmul_nt_acc(a, bt, s, d);
    kernels::omp::matmul_nt_acc(a, bt, p, d);
    CHECK(s == p);

    std::vector<double> st(d.inner * d.cols, 0.0), pt = st;
    kernels::serial::matmul_tn_acc(a, c, st, d);
    kernels::omp::matmul_tn_acc(a, c, pt, d);
    CHECK(st == pt);

    std::vector<double> so(d.rows * d.inner), po(d.rows * d.inner);
    kernels::serial::softmax_rows(a, so, d.rows, d.inner);
    kernels::omp::softmax_rows(a, po, d.rows, d.inner);
    CHECK(so == po);

    const auto gain = random_values(d.inner, rng);
    const auto bias = random_values(d.inner, rng);
    std::vector<double> sm(d.rows), sr(d.rows), pm(d.rows), pr(d.rows);
    kernels::serial::layer_norm_rows(a, gain, bias, 1e-5, so, sm, sr, d.rows, d.inner);
    kernels::omp::layer_norm_rows(a, gain, bias, 1e-5, po, pm, pr, d.rows, d.inner);
    CHECK(so == po);
    CHECK(sm == pm);
    CHECK(sr == pr);
  }
}

TEST_CASE("serial matmul matches a naive triple loop") {
  Rng rng(1);
  const kernels::MatDims d{4, 3, 5};
  const auto a = random_values(12, rng);
  const auto b = random_values(15, rng);
  std::vector<double> out(20, 0.0);
  kernels::serial::matmul_acc(a, b, out, d);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 5; ++c) {
      double acc = 0;
      for (std::size_t k = 0; k < 3; ++k) acc += a[r * 3 + k] * b[k * 5 + c];
      CHECK(out[r * 5 + c] == doctest::Approx(acc).epsilon(1e-15));
    }
}
