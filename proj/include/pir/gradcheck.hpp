#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "pir/graph.hpp"

namespace pir {

/// Max over coordinates of |analytic - central difference| / (|analytic| + 1e-12).
/// `f` must be scalar-valued and smooth at `point`.
inline double finite_difference_check(const std::function<double(const std::vector<double>&)>& f,
                                      const std::vector<double>& analytic,
                                      const std::vector<double>& point, double step) {
  if (step <= 0.0) throw std::invalid_argument("finite_difference_check: step must be positive");
  if (analytic.size() != point.size()) {
    throw std::invalid_argument("finite_difference_check: gradient/point length mismatch");
  }
  if (!std::isfinite(f(point))) {
    throw std::runtime_error("finite_difference_check: non-finite function value at point");
  }
  std::vector<double> p = point;
  double worst = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double saved = p[i];
    p[i] = saved + step;
    const double fp = f(p);
    p[i] = saved - step;
    const double fm = f(p);
    p[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw std::runtime_error("finite_difference_check: non-finite function value near point");
    }
    const double central = (fp - fm) / (2.0 * step);
    const double rel = std::abs(analytic[i] - central) / (std::abs(analytic[i]) + 1e-12);
    worst = std::max(worst, rel);
  }
  return worst;
}

/// Checks the graph's analytic gradients of a scalar node against central
/// finite differences over every parameter coordinate. Inputs must already
/// be bound; parameter values are restored on return.
inline double graph_gradient_check(Graph& g, ParamStore& store, int scalar_node,
                                   double step = 1e-5) {
  std::vector<double> point;
  for (int i = 0; i < store.count(); ++i) {
    const auto& d = store.value_at(i).data;
    point.insert(point.end(), d.begin(), d.end());
  }
  auto apply = [&](const std::vector<double>& v) {
    std::size_t off = 0;
    for (int i = 0; i < store.count(); ++i) {
      auto& d = store.value_at(i).data;
      std::copy(v.begin() + off, v.begin() + off + d.size(), d.begin());
      off += d.size();
    }
  };
  auto f = [&](const std::vector<double>& v) {
    apply(v);
    g.run();
    return g.scalar_of(scalar_node);
  };

  apply(point);
  g.run();
  store.zero_grads();
  g.run_backward(scalar_node, 1.0);
  std::vector<double> analytic;
  for (int i = 0; i < store.count(); ++i) {
    const auto& d = store.grad_at(i).data;
    analytic.insert(analytic.end(), d.begin(), d.end());
  }

  const double err = finite_difference_check(f, analytic, point, step);
  apply(point);
  g.run();
  return err;
}

}  // namespace pir
