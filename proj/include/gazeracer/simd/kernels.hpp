#pragma once

// Data-parallel float kernels behind the NN engine and the image pipeline.
// Each kernel has a portable scalar reference and vectorized variants
// (AVX2+FMA on x86-64, NEON on aarch64). The variant is picked once at
// startup from the CPU's capabilities; GAZERACER_SIMD=scalar forces the
// reference path.

#include <cstddef>
#include <string_view>

namespace gazeracer::simd {

enum class Isa { Scalar, Avx2, Neon };

std::string_view isa_name(Isa isa);

struct KernelTable {
  Isa isa;
  float (*dot)(const float* a, const float* b, std::size_t n);
  void (*axpy)(float alpha, const float* x, float* y, std::size_t n);
  // C[M x N] (+)= A[M x K] * B[K x N]; all row-major with leading dims.
  void (*gemm)(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
               int ldc, bool accumulate);
  // out[i] = max(x[i], 0)
  void (*relu)(const float* x, float* out, std::size_t n);
  // out[i] = a[i] * b[i]
  void (*mul)(const float* a, const float* b, float* out, std::size_t n);
};

// Reference and vectorized tables. A table for an ISA the build or the CPU
// cannot run falls back to the scalar entries.
const KernelTable& scalar_kernels();
const KernelTable& avx2_kernels();
const KernelTable& neon_kernels();

bool cpu_supports(Isa isa);

// Currently active table.
const KernelTable& kernels();
Isa active_isa();

// Overrides dispatch (tests and benchmarks). Returns false if the CPU lacks
// the requested ISA, in which case the active table is unchanged.
bool force_isa(Isa isa);

}  // namespace gazeracer::simd
