#include "gazeracer/util/fpenv.hpp"

#if defined(__SSE2__)
#include <xmmintrin.h>
#endif

namespace gazeracer {

#if defined(__SSE2__)

DenormalGuard::DenormalGuard() : saved_(_mm_getcsr()) {
  _mm_setcsr(static_cast<unsigned>(saved_) | 0x8040u);  // FTZ | DAZ
}
DenormalGuard::~DenormalGuard() { _mm_setcsr(static_cast<unsigned>(saved_)); }

#elif defined(__aarch64__)

DenormalGuard::DenormalGuard() {
  std::uint64_t fpcr;
  asm volatile("mrs %0, fpcr" : "=r"(fpcr));
  saved_ = fpcr;
  fpcr |= (1ull << 24);  // FZ
  asm volatile("msr fpcr, %0" : : "r"(fpcr));
}
DenormalGuard::~DenormalGuard() { asm volatile("msr fpcr, %0" : : "r"(saved_)); }

#else

DenormalGuard::DenormalGuard() = default;
DenormalGuard::~DenormalGuard() = default;

#endif

}  // namespace gazeracer
