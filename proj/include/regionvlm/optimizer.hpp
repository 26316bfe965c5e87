#pragma once

#include <cmath>
#include <vector>

#include "regionvlm/error.hpp"
#include "regionvlm/nn.hpp"

namespace regionvlm {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled
  double clip_norm = 0.0;     // 0 disables global-norm clipping
};

// Adam over a fixed list of tensors. A step whose gradient is exactly zero
// everywhere is skipped entirely (moments and step count untouched).
template <class S>
class Adam {
 public:
  Adam(AdamConfig cfg, const std::vector<nn::Mat<S>*>& params) : cfg_(cfg) {
    if (!(cfg.lr > 0)) throw ConfigError("learning rate must be positive");
    for (auto* p : params) {
      m_.push_back(nn::Mat<S>::Zero(p->rows(), p->cols()));
      v_.push_back(nn::Mat<S>::Zero(p->rows(), p->cols()));
    }
  }

  long steps() const { return t_; }

  // Returns the global gradient norm before clipping.
  double step(const std::vector<nn::Mat<S>*>& params, const std::vector<nn::Mat<S>*>& grads) {
    if (params.size() != m_.size() || grads.size() != m_.size()) throw ShapeError("optimizer tensor list mismatch");
    double sq = 0;
    for (auto* g : grads) sq += static_cast<double>(g->squaredNorm());
    const double norm = std::sqrt(sq);
    if (norm == 0.0) return 0.0;
    const double clip = (cfg_.clip_norm > 0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const auto b1 = static_cast<S>(cfg_.beta1), b2 = static_cast<S>(cfg_.beta2);
    const auto step_size = static_cast<S>(cfg_.lr / bc1);
    const auto inv_bc2 = static_cast<S>(1.0 / bc2);
    const auto eps = static_cast<S>(cfg_.eps);
    const auto decay = static_cast<S>(cfg_.lr * cfg_.weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = *params[i];
      const auto g = (grads[i]->array() * static_cast<S>(clip)).eval();
      m_[i].array() = b1 * m_[i].array() + (S(1) - b1) * g;
      v_[i].array() = b2 * v_[i].array() + (S(1) - b2) * g.square();
      if (decay != S(0)) p.array() -= decay * p.array();
      p.array() -= step_size * m_[i].array() / ((v_[i].array() * inv_bc2).sqrt() + eps);
    }
    return norm;
  }

 private:
  AdamConfig cfg_;
  std::vector<nn::Mat<S>> m_, v_;
  long t_ = 0;
};

}  // namespace regionvlm
