#pragma once

#include <cmath>
#include <vector>

#include "core/tensor.hpp"

namespace avloc {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adaptive-moment optimizer over a fixed list of parameter tensors.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void attach(const std::vector<Tensor*>& params) {
    m_.clear();
    v_.clear();
    for (const Tensor* p : params) {
      m_.emplace_back(p->shape());
      v_.emplace_back(p->shape());
    }
    t_ = 0;
  }

  void step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor& p = *params[k];
      const Tensor& gr = *grads[k];
      Tensor& m = m_[k];
      Tensor& v = v_[k];
      for (std::size_t i = 0; i < p.numel(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gr[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gr[i] * gr[i];
        const double mh = m[i] / bc1;
        const double vh = v[i] / bc2;
        p[i] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
      }
    }
  }

  const AdamConfig& config() const { return cfg_; }
  long long step_count() const { return t_; }
  std::vector<Tensor>& moment1() { return m_; }
  std::vector<Tensor>& moment2() { return v_; }
  void set_step_count(long long t) { t_ = t; }

 private:
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  long long t_ = 0;
};

}  // namespace avloc
