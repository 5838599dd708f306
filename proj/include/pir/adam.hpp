#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pir/graph.hpp"
#include "pir/tensor.hpp"

namespace pir {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a ParamStore. Moment accumulators are allocated
/// per parameter at construction; the step counter advances by one per step().
class Adam {
 public:
  explicit Adam(const ParamStore& store, AdamConfig cfg = {}) : cfg_(cfg) {
    m_.reserve(store.count());
    v_.reserve(store.count());
    for (int i = 0; i < store.count(); ++i) {
      m_.emplace_back(store.value_at(i).shape, 0.0);
      v_.emplace_back(store.value_at(i).shape, 0.0);
    }
  }

  /// Applies one update from the gradients currently held in the store.
  void step(ParamStore& store) {
    if (store.count() != static_cast<int>(m_.size())) {
      throw std::invalid_argument("adam: store does not match optimizer state");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (int p = 0; p < store.count(); ++p) {
      Tensor& value = store.value_at(p);
      const Tensor& grad = store.grad_at(p);
      Tensor& m = m_[p];
      Tensor& v = v_[p];
      for (std::size_t i = 0; i < value.data.size(); ++i) {
        const double g = grad.data[i];
        if (!std::isfinite(g)) {
          throw std::runtime_error("adam: non-finite gradient for parameter '" +
                                   store.name_at(p) + "'");
        }
        m.data[i] = cfg_.beta1 * m.data[i] + (1.0 - cfg_.beta1) * g;
        v.data[i] = cfg_.beta2 * v.data[i] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m.data[i] / bc1;
        const double vhat = v.data[i] / bc2;
        value.data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  std::int64_t step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace pir
