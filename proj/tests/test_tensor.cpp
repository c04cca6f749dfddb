#include <cmath>

#include "doctest.h"
#include "vclab/blas_env.hpp"
#include "vclab/tensor.hpp"

using vclab::Tensor;

TEST_CASE("tensor construction and indexing") {
  Tensor<float> t({2, 3, 4});
  CHECK(t.numel() == 24);
  t.at(1, 2, 3) = 5.0f;
  CHECK(t[23] == 5.0f);
  t.zero();
  CHECK(t.at(1, 2, 3) == 0.0f);
}

TEST_CASE("gemm matches a hand-rolled multiply") {
  vclab::Rng rng(3);
  const int m = 7, k = 5, n = 6;
  Tensor<double> a({m, k}), b({k, n}), c({m, n}), ref({m, n});
  a.fill_normal(rng);
  b.fill_normal(rng);
  vclab::gemm(false, false, m, n, k, 1.0, a.ptr(), k, b.ptr(), n, 0.0, c.ptr(), n);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += a.at(i, p) * b.at(p, j);
      ref.at(i, j) = s;
    }
  }
  CHECK(vclab::max_abs_diff(c, ref) < 1e-12);
}

TEST_CASE("gemm transpose flags") {
  vclab::Rng rng(4);
  const int m = 4, k = 3, n = 5;
  Tensor<float> at({k, m}), b({k, n}), c({m, n}), ref({m, n});
  at.fill_normal(rng);
  b.fill_normal(rng);
  vclab::gemm(true, false, m, n, k, 1.0f, at.ptr(), m, b.ptr(), n, 0.0f,
              c.ptr(), n);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      float s = 0.0f;
      for (int p = 0; p < k; ++p) s += at.at(p, i) * b.at(p, j);
      ref.at(i, j) = s;
    }
  }
  CHECK(vclab::max_abs_diff(c, ref) < 1e-5f);
}

TEST_CASE("blas kernel selection picked a vectorized core") {
  // The container misreports its CPU model; the load-time override must have
  // landed on something newer than the SSE3 fallback.
  std::string core = vclab::blas_core_name();
  CHECK(core != "Prescott");
  CHECK(core != "prescott");
}
