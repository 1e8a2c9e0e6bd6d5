#include "gazeracer/nn/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace gazeracer::nn {

double adam_update(double& m, double& v, double g, int t, const AdamConfig& cfg) {
  if (t < 1) throw std::invalid_argument("adam: step index must be >= 1");
  m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
  v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
  const double mhat = m / (1.0 - std::pow(cfg.beta1, t));
  const double vhat = v / (1.0 - std::pow(cfg.beta2, t));
  return -cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
}

template <class T>
Adam<T>::Adam(std::vector<Param<T>*> params, AdamConfig cfg) : cfg_(cfg) {
  if (!(cfg.lr > 0.0)) throw std::invalid_argument("adam: learning rate must be positive");
  for (auto* p : params) {
    if (!p->trainable) continue;
    params_.push_back(p);
    m_.emplace_back(p->value.size(), 0.0);
    v_.emplace_back(p->value.size(), 0.0);
  }
}

template <class T>
void Adam<T>::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double c2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = *params_[k];
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      p.value[i] = static_cast<T>(p.value[i] - cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps));
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace gazeracer::nn
