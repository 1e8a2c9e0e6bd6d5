#include <doctest.h>

#include <array>
#include <cmath>
#include <vector>

#include "gazeracer/simd/kernels.hpp"
#include "gazeracer/util/rng.hpp"

using namespace gazeracer;
using namespace gazeracer::simd;

namespace {

std::vector<float> random_vec(std::size_t n, Rng& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(uniform(rng, -1.0, 1.0));
  return v;
}

// Tables to compare against the reference; the scalar table is always present.
std::vector<const KernelTable*> variants() {
  std::vector<const KernelTable*> out;
  if (cpu_supports(Isa::Avx2)) out.push_back(&avx2_kernels());
  if (cpu_supports(Isa::Neon)) out.push_back(&neon_kernels());
  return out;
}

}  // namespace

TEST_CASE("scalar gemm matches naive triple loop") {
  Rng rng(1);
  const int m = 7, n = 13, k = 5;
  const auto a = random_vec(m * k, rng), b = random_vec(k * n, rng);
  std::vector<float> c(m * n, 0.0f);
  scalar_kernels().gemm(m, n, k, a.data(), k, b.data(), n, c.data(), n, false);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += static_cast<double>(a[i * k + p]) * b[p * n + j];
      CHECK(c[i * n + j] == doctest::Approx(s).epsilon(1e-5));
    }
  }
}

TEST_CASE("vector kernels agree with the scalar reference") {
  Rng rng(2);
  const auto& ref = scalar_kernels();
  for (const auto* kt : variants()) {
    CAPTURE(isa_name(kt->isa));
    for (std::size_t n : {0u, 1u, 7u, 8u, 9u, 31u, 64u, 1000u}) {
      CAPTURE(n);
      const auto a = random_vec(n, rng), b = random_vec(n, rng);
      CHECK(kt->dot(a.data(), b.data(), n) ==
            doctest::Approx(ref.dot(a.data(), b.data(), n)).epsilon(1e-5).scale(1.0));

      auto y1 = b, y2 = b;
      ref.axpy(0.7f, a.data(), y1.data(), n);
      kt->axpy(0.7f, a.data(), y2.data(), n);
      for (std::size_t i = 0; i < n; ++i) CHECK(y2[i] == doctest::Approx(y1[i]).epsilon(1e-6));

      std::vector<float> r1(n), r2(n), m1(n), m2(n);
      ref.relu(a.data(), r1.data(), n);
      kt->relu(a.data(), r2.data(), n);
      ref.mul(a.data(), b.data(), m1.data(), n);
      kt->mul(a.data(), b.data(), m2.data(), n);
      CHECK(r1 == r2);
      CHECK(m1 == m2);
    }
  }
}

TEST_CASE("vector gemm agrees with the scalar reference on ragged shapes") {
  Rng rng(3);
  const auto& ref = scalar_kernels();
  for (const auto* kt : variants()) {
    CAPTURE(isa_name(kt->isa));
    const std::vector<std::array<int, 3>> shapes{{1, 1, 1},   {4, 16, 3},  {5, 17, 9},
                                                 {16, 300, 27}, {3, 7, 144}, {33, 65, 12}};
    for (const auto& [m, n, k] : shapes) {
      CAPTURE(m);
      CAPTURE(n);
      CAPTURE(k);
      const int lda = k + 2, ldb = n + 3, ldc = n + 1;
      const auto a = random_vec(m * lda, rng), b = random_vec(k * ldb, rng);
      const auto c0 = random_vec(m * ldc, rng);
      for (bool acc : {false, true}) {
        auto c1 = c0, c2 = c0;
        ref.gemm(m, n, k, a.data(), lda, b.data(), ldb, c1.data(), ldc, acc);
        kt->gemm(m, n, k, a.data(), lda, b.data(), ldb, c2.data(), ldc, acc);
        for (int i = 0; i < m; ++i) {
          for (int j = 0; j < ldc; ++j) {
            const float tol = 1e-5f * static_cast<float>(k + 1);
            CHECK(std::abs(c1[i * ldc + j] - c2[i * ldc + j]) <= tol);
          }
        }
      }
    }
  }
}

TEST_CASE("dispatch can be forced to the scalar path and back") {
  const Isa original = active_isa();
  REQUIRE(force_isa(Isa::Scalar));
  CHECK(active_isa() == Isa::Scalar);
  CHECK(kernels().isa == Isa::Scalar);
  if (cpu_supports(original)) CHECK(force_isa(original));
  CHECK(active_isa() == original);
}
