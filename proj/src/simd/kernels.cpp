#include "gazeracer/simd/kernels.hpp"

#include <algorithm>
#include <cstdlib>
#include <cstring>

#if defined(__x86_64__) || defined(_M_X64)
#define GAZERACER_X86 1
#include <immintrin.h>
#else
#define GAZERACER_X86 0
#endif

#if defined(__aarch64__)
#define GAZERACER_NEON 1
#include <arm_neon.h>
#else
#define GAZERACER_NEON 0
#endif

namespace gazeracer::simd {

namespace {

// ---------------------------------------------------------------------------
// Scalar reference
// ---------------------------------------------------------------------------

float dot_scalar(const float* a, const float* b, std::size_t n) {
  float s = 0.0f;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_scalar(float alpha, const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemm_scalar(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
                 int ldc, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    float* crow = c + static_cast<std::size_t>(i) * ldc;
    if (!accumulate) std::fill(crow, crow + n, 0.0f);
    const float* arow = a + static_cast<std::size_t>(i) * lda;
    for (int p = 0; p < k; ++p) {
      const float av = arow[p];
      if (av == 0.0f) continue;
      const float* brow = b + static_cast<std::size_t>(p) * ldb;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void relu_scalar(const float* x, float* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void mul_scalar(const float* a, const float* b, float* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

// ---------------------------------------------------------------------------
// AVX2 + FMA
// ---------------------------------------------------------------------------

#if GAZERACER_X86

__attribute__((target("avx2,fma"))) float hsum256(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  __m128 s = _mm_add_ps(lo, hi);
  s = _mm_hadd_ps(s, s);
  s = _mm_hadd_ps(s, s);
  return _mm_cvtss_f32(s);
}

__attribute__((target("avx2,fma"))) float dot_avx2(const float* a, const float* b, std::size_t n) {
  __m256 acc0 = _mm256_setzero_ps();
  __m256 acc1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
    acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), acc1);
  }
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
  }
  float s = hsum256(_mm256_add_ps(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

__attribute__((target("avx2,fma"))) void axpy_avx2(float alpha, const float* x, float* y,
                                                   std::size_t n) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

__attribute__((target("avx2,fma"))) inline void store_pair(float* dst, __m256 lo, __m256 hi,
                                                           bool accumulate) {
  if (accumulate) {
    lo = _mm256_add_ps(lo, _mm256_loadu_ps(dst));
    hi = _mm256_add_ps(hi, _mm256_loadu_ps(dst + 8));
  }
  _mm256_storeu_ps(dst, lo);
  _mm256_storeu_ps(dst + 8, hi);
}

// 4 rows x 16 columns register block.
__attribute__((target("avx2,fma"))) void gemm_block_4x16(int k, const float* a, int lda,
                                                         const float* b, int ldb, float* c, int ldc,
                                                         bool accumulate) {
  __m256 c00 = _mm256_setzero_ps(), c01 = _mm256_setzero_ps();
  __m256 c10 = _mm256_setzero_ps(), c11 = _mm256_setzero_ps();
  __m256 c20 = _mm256_setzero_ps(), c21 = _mm256_setzero_ps();
  __m256 c30 = _mm256_setzero_ps(), c31 = _mm256_setzero_ps();
  const float* a0 = a;
  const float* a1 = a + lda;
  const float* a2 = a + 2 * static_cast<std::size_t>(lda);
  const float* a3 = a + 3 * static_cast<std::size_t>(lda);
  for (int p = 0; p < k; ++p) {
    const float* brow = b + static_cast<std::size_t>(p) * ldb;
    const __m256 b0 = _mm256_loadu_ps(brow);
    const __m256 b1 = _mm256_loadu_ps(brow + 8);
    __m256 av = _mm256_broadcast_ss(a0 + p);
    c00 = _mm256_fmadd_ps(av, b0, c00);
    c01 = _mm256_fmadd_ps(av, b1, c01);
    av = _mm256_broadcast_ss(a1 + p);
    c10 = _mm256_fmadd_ps(av, b0, c10);
    c11 = _mm256_fmadd_ps(av, b1, c11);
    av = _mm256_broadcast_ss(a2 + p);
    c20 = _mm256_fmadd_ps(av, b0, c20);
    c21 = _mm256_fmadd_ps(av, b1, c21);
    av = _mm256_broadcast_ss(a3 + p);
    c30 = _mm256_fmadd_ps(av, b0, c30);
    c31 = _mm256_fmadd_ps(av, b1, c31);
  }
  store_pair(c, c00, c01, accumulate);
  store_pair(c + ldc, c10, c11, accumulate);
  store_pair(c + 2 * static_cast<std::size_t>(ldc), c20, c21, accumulate);
  store_pair(c + 3 * static_cast<std::size_t>(ldc), c30, c31, accumulate);
}

// One row, 8 columns at a time plus scalar tail.
__attribute__((target("avx2,fma"))) void gemm_row(int n, int k, const float* a, const float* b,
                                                  int ldb, float* c, bool accumulate) {
  int j = 0;
  for (; j + 8 <= n; j += 8) {
    __m256 acc = _mm256_setzero_ps();
    for (int p = 0; p < k; ++p) {
      acc = _mm256_fmadd_ps(_mm256_broadcast_ss(a + p),
                            _mm256_loadu_ps(b + static_cast<std::size_t>(p) * ldb + j), acc);
    }
    if (accumulate) acc = _mm256_add_ps(acc, _mm256_loadu_ps(c + j));
    _mm256_storeu_ps(c + j, acc);
  }
  for (; j < n; ++j) {
    float acc = 0.0f;
    for (int p = 0; p < k; ++p) acc += a[p] * b[static_cast<std::size_t>(p) * ldb + j];
    c[j] = accumulate ? c[j] + acc : acc;
  }
}

__attribute__((target("avx2,fma"))) void gemm_avx2(int m, int n, int k, const float* a, int lda,
                                                   const float* b, int ldb, float* c, int ldc,
                                                   bool accumulate) {
  const int n16 = n - n % 16;
  int i = 0;
  for (; i + 4 <= m; i += 4) {
    const float* ablk = a + static_cast<std::size_t>(i) * lda;
    float* cblk = c + static_cast<std::size_t>(i) * ldc;
    for (int j = 0; j < n16; j += 16) {
      gemm_block_4x16(k, ablk, lda, b + j, ldb, cblk + j, ldc, accumulate);
    }
    if (n16 < n) {
      for (int r = 0; r < 4; ++r) {
        gemm_row(n - n16, k, ablk + static_cast<std::size_t>(r) * lda, b + n16, ldb,
                 cblk + static_cast<std::size_t>(r) * ldc + n16, accumulate);
      }
    }
  }
  for (; i < m; ++i) {
    gemm_row(n, k, a + static_cast<std::size_t>(i) * lda, b, ldb,
             c + static_cast<std::size_t>(i) * ldc, accumulate);
  }
}

__attribute__((target("avx2,fma"))) void relu_avx2(const float* x, float* out, std::size_t n) {
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_max_ps(_mm256_loadu_ps(x + i), zero));
  for (; i < n; ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

__attribute__((target("avx2,fma"))) void mul_avx2(const float* a, const float* b, float* out,
                                                  std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

#endif  // GAZERACER_X86

// ---------------------------------------------------------------------------
// NEON
// ---------------------------------------------------------------------------

#if GAZERACER_NEON

float dot_neon(const float* a, const float* b, std::size_t n) {
  float32x4_t acc = vdupq_n_f32(0.0f);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = vfmaq_f32(acc, vld1q_f32(a + i), vld1q_f32(b + i));
  float s = vaddvq_f32(acc);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_neon(float alpha, const float* x, float* y, std::size_t n) {
  const float32x4_t va = vdupq_n_f32(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(y + i, vfmaq_f32(vld1q_f32(y + i), va, vld1q_f32(x + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void gemm_neon(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
               int ldc, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<std::size_t>(i) * lda;
    float* crow = c + static_cast<std::size_t>(i) * ldc;
    int j = 0;
    for (; j + 4 <= n; j += 4) {
      float32x4_t acc = vdupq_n_f32(0.0f);
      for (int p = 0; p < k; ++p) {
        acc = vfmaq_n_f32(acc, vld1q_f32(b + static_cast<std::size_t>(p) * ldb + j), arow[p]);
      }
      if (accumulate) acc = vaddq_f32(acc, vld1q_f32(crow + j));
      vst1q_f32(crow + j, acc);
    }
    for (; j < n; ++j) {
      float acc = 0.0f;
      for (int p = 0; p < k; ++p) acc += arow[p] * b[static_cast<std::size_t>(p) * ldb + j];
      crow[j] = accumulate ? crow[j] + acc : acc;
    }
  }
}

void relu_neon(const float* x, float* out, std::size_t n) {
  const float32x4_t zero = vdupq_n_f32(0.0f);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(out + i, vmaxq_f32(vld1q_f32(x + i), zero));
  for (; i < n; ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void mul_neon(const float* a, const float* b, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(out + i, vmulq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

#endif  // GAZERACER_NEON

const KernelTable kScalar{Isa::Scalar, dot_scalar, axpy_scalar, gemm_scalar, relu_scalar,
                          mul_scalar};

#if GAZERACER_X86
const KernelTable kAvx2{Isa::Avx2, dot_avx2, axpy_avx2, gemm_avx2, relu_avx2, mul_avx2};
#endif

#if GAZERACER_NEON
const KernelTable kNeon{Isa::Neon, dot_neon, axpy_neon, gemm_neon, relu_neon, mul_neon};
#endif

const KernelTable* select_default() {
  if (const char* env = std::getenv("GAZERACER_SIMD"); env && std::strcmp(env, "scalar") == 0) {
    return &kScalar;
  }
#if GAZERACER_X86
  if (cpu_supports(Isa::Avx2)) return &kAvx2;
#endif
#if GAZERACER_NEON
  return &kNeon;
#endif
  return &kScalar;
}

const KernelTable*& active_table() {
  static const KernelTable* table = select_default();
  return table;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar: return "scalar";
    case Isa::Avx2: return "avx2";
    case Isa::Neon: return "neon";
  }
  return "unknown";
}

bool cpu_supports(Isa isa) {
  switch (isa) {
    case Isa::Scalar: return true;
    case Isa::Avx2:
#if GAZERACER_X86 && (defined(__GNUC__) || defined(__clang__))
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::Neon: return GAZERACER_NEON != 0;
  }
  return false;
}

const KernelTable& scalar_kernels() { return kScalar; }

const KernelTable& avx2_kernels() {
#if GAZERACER_X86
  if (cpu_supports(Isa::Avx2)) return kAvx2;
#endif
  return kScalar;
}

const KernelTable& neon_kernels() {
#if GAZERACER_NEON
  return kNeon;
#else
  return kScalar;
#endif
}

const KernelTable& kernels() { return *active_table(); }

Isa active_isa() { return active_table()->isa; }

bool force_isa(Isa isa) {
  if (!cpu_supports(isa)) return false;
  switch (isa) {
    case Isa::Scalar: active_table() = &kScalar; break;
    case Isa::Avx2: active_table() = &avx2_kernels(); break;
    case Isa::Neon: active_table() = &neon_kernels(); break;
  }
  return true;
}

}  // namespace gazeracer::simd
