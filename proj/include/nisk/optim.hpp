#pragma once

#include "nisk/diffcore.hpp"

#include <cmath>

namespace nisk {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {
    require(cfg.lr > 0.0, "Adam learning rate must be positive");
    require(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0,
            "Adam betas must lie in [0, 1)");
  }

  // One descent step on `params` using `grad`.
  void step(Vector& params, const ParamGrad& grad) {
    require_shape(params.size() == grad.size(), "Adam: gradient length mismatch");
    if (m_.size() != params.size()) {
      m_ = Vector::Zero(params.size());
      v_ = Vector::Zero(params.size());
      t_ = 0;
    }
    ++t_;
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
    v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double c2 = 1.0 - std::pow(cfg_.beta2, t_);
    const double lr = cfg_.lr;
    const double eps = cfg_.eps;
    params.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps);
  }

  void step(Mlp& net, const ParamGrad& grad) {
    Vector p = net.params();
    step(p, grad);
    net.set_params(p);
  }

  long steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  Vector m_, v_;
  long t_ = 0;
};

}  // namespace nisk
