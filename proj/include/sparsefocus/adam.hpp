#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "sparsefocus/errors.hpp"
#include "sparsefocus/graph.hpp"

namespace sf {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a fixed parameter list. Moment buffers are laid
/// out in the same order as the parameters handed to the constructor.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Parameter<T>*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (auto* p : params_) {
      m_.emplace_back(p->value.dims());
      v_.emplace_back(p->value.dims());
    }
  }

  void step() { step(cfg_.lr); }

  void step(double lr) {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Parameter<T>& p = *params_[k];
      if (!p.trainable) continue;
      auto val = p.value.data();
      auto grad = p.grad.data();
      auto m = m_[k].data();
      auto v = v_[k].data();
      for (std::size_t i = 0; i < val.size(); ++i) {
        const double g = grad[i];
        const double mi = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        const double vi = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double upd = lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg_.eps);
        val[i] = static_cast<T>(val[i] - upd);
      }
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  std::uint64_t step_count() const noexcept { return step_count_; }
  const AdamConfig& config() const noexcept { return cfg_; }
  const Tensor<T>& first_moment(std::size_t k) const { return m_.at(k); }
  const Tensor<T>& second_moment(std::size_t k) const { return v_.at(k); }

 private:
  std::vector<Parameter<T>*> params_;
  AdamConfig cfg_;
  std::vector<Tensor<T>> m_, v_;
  std::uint64_t step_count_ = 0;
};

}  // namespace sf
