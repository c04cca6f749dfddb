#pragma once

#include <string>

namespace vclab {

// Matrix multiply C = alpha * op(A) * op(B) + beta * C, row-major.
// Thin wrappers over the BLAS so the rest of the code can stay templated
// on float/double.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
          const float* a, int lda, const float* b, int ldb, float beta,
          float* c, int ldc);
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const double* a, int lda, const double* b, int ldb, double beta,
          double* c, int ldc);

// Name of the BLAS kernel set actually selected at load time.
std::string blas_core_name();

}  // namespace vclab
