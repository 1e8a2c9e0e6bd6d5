#pragma once

#include <vector>

#include "gazeracer/nn/tensor.hpp"

namespace gazeracer::nn {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over the trainable parameters it was built with.
template <class T>
class Adam {
 public:
  Adam(std::vector<Param<T>*> params, AdamConfig cfg);
  /// Applies one update from the accumulated gradients; does not zero them.
  void step();
  int steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  std::vector<Param<T>*> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamConfig cfg_;
  int t_ = 0;
};

/// Single Adam update of one value given its moments; t >= 1.
double adam_update(double& m, double& v, double g, int t, const AdamConfig& cfg);

}  // namespace gazeracer::nn
