#pragma once

#include <cstdint>

namespace gazeracer {

/// Flushes denormal floats to zero (FTZ/DAZ on x86, FZ on AArch64) on the
/// calling thread for the guard's lifetime. Softmax tails otherwise drive
/// gradients into the slow denormal range.
class DenormalGuard {
 public:
  DenormalGuard();
  ~DenormalGuard();
  DenormalGuard(const DenormalGuard&) = delete;
  DenormalGuard& operator=(const DenormalGuard&) = delete;

 private:
  std::uint64_t saved_ = 0;
};

}  // namespace gazeracer
