#include "vclab/blas_env.hpp"

#include <cpuid.h>

#include <cstdlib>

#include <cblas.h>

namespace vclab {

namespace {

// Raw CPUID probing. This runs from a priority constructor, before the
// libgcc cpu-model constructor, so __builtin_cpu_supports would still read
// an uninitialized feature cache here.
bool os_saves_simd_state(uint64_t mask) {
  unsigned eax, ebx, ecx, edx;
  if (!__get_cpuid(1, &eax, &ebx, &ecx, &edx)) return false;
  if (!(ecx & (1u << 27))) return false;  // OSXSAVE
  uint32_t lo, hi;
  __asm__ volatile("xgetbv" : "=a"(lo), "=d"(hi) : "c"(0));
  uint64_t xcr0 = (uint64_t(hi) << 32) | lo;
  return (xcr0 & mask) == mask;
}

bool cpu_has_avx512() {
  unsigned eax, ebx, ecx, edx;
  if (!__get_cpuid_count(7, 0, &eax, &ebx, &ecx, &edx)) return false;
  bool f = ebx & (1u << 16), bw = ebx & (1u << 30), vl = ebx & (1u << 31);
  return f && bw && vl && os_saves_simd_state(0xe6);
}

bool cpu_has_avx2() {
  unsigned eax, ebx, ecx, edx;
  if (!__get_cpuid_count(7, 0, &eax, &ebx, &ecx, &edx)) return false;
  return (ebx & (1u << 5)) && os_saves_simd_state(0x6);
}

}  // namespace

// OpenBLAS picks its kernel set from the CPUID model, and inside this
// container the hypervisor masks the model id, which lands on the lowest
// common denominator (SSE3 kernels, about a third of the attainable GEMM
// rate). OPENBLAS_CORETYPE overrides the detection, but it must be in the
// environment before OpenBLAS initializes; a priority-101 constructor in the
// same image guarantees that, which is why the library is linked statically.
// overwrite=0 keeps any user-provided value authoritative.
__attribute__((constructor(101))) static void pin_blas_environment() {
  if (cpu_has_avx512()) {
    setenv("OPENBLAS_CORETYPE", "COOPERLAKE", 0);
  } else if (cpu_has_avx2()) {
    setenv("OPENBLAS_CORETYPE", "HASWELL", 0);
  }
  setenv("OPENBLAS_NUM_THREADS", "1", 0);
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
          const float* a, int lda, const float* b, int ldb, float beta,
          float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, ldc);
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const double* a, int lda, const double* b, int ldb, double beta,
          double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, ldc);
}

std::string blas_core_name() {
  const char* name = openblas_get_corename();
  return name ? name : "unknown";
}

}  // namespace vclab
