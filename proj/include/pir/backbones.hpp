#pragma once

#include <cmath>
#include <iostream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "pir/dataio.hpp"
#include "pir/tensor.hpp"

namespace pir {

/// Repeats the last `period` input steps cyclically over the horizon.
inline Tensor seasonal_naive(const Tensor& x, int period, int l_out) {
  const int n = x.rows(), l_in = x.cols();
  if (period < 1 || period > l_in) {
    throw std::invalid_argument("seasonal_naive: period " + std::to_string(period) +
                                " out of range [1, " + std::to_string(l_in) + "]");
  }
  Tensor out({n, l_out});
  for (int c = 0; c < n; ++c) {
    for (int t = 0; t < l_out; ++t) out.at(c, t) = x.at(c, l_in - period + (t % period));
  }
  return out;
}

/// Channel-independent linear map from input window to target window, shared
/// across channels, fit in closed form with ridge regularization (bias
/// unpenalized).
struct LinearBackbone {
  Tensor weight;  // L_out x L_in
  Tensor bias;    // L_out x 1
  double ridge = 1e-3;
};

namespace detail {

// In-place lower-triangular Cholesky; false when a pivot is not positive.
inline bool cholesky(std::vector<double>& m, int n) {
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = m[static_cast<std::size_t>(i) * n + j];
      for (int k = 0; k < j; ++k) {
        s -= m[static_cast<std::size_t>(i) * n + k] * m[static_cast<std::size_t>(j) * n + k];
      }
      if (i == j) {
        if (s <= 0.0) return false;
        m[static_cast<std::size_t>(i) * n + i] = std::sqrt(s);
      } else {
        m[static_cast<std::size_t>(i) * n + j] = s / m[static_cast<std::size_t>(j) * n + j];
      }
    }
  }
  return true;
}

inline void cholesky_solve(const std::vector<double>& l, int n, std::vector<double>& rhs) {
  for (int i = 0; i < n; ++i) {
    double s = rhs[i];
    for (int k = 0; k < i; ++k) s -= l[static_cast<std::size_t>(i) * n + k] * rhs[k];
    rhs[i] = s / l[static_cast<std::size_t>(i) * n + i];
  }
  for (int i = n - 1; i >= 0; --i) {
    double s = rhs[i];
    for (int k = i + 1; k < n; ++k) s -= l[static_cast<std::size_t>(k) * n + i] * rhs[k];
    rhs[i] = s / l[static_cast<std::size_t>(i) * n + i];
  }
}

}  // namespace detail

/// Pools every (instance, channel) pair as one regression sample. A singular
/// normal system with ridge=0 falls back to a jitter-regularized solve, which
/// approaches the minimum-norm solution, with a warning.
inline LinearBackbone fit_linear(const std::vector<WindowInstance>& train, double ridge = 1e-3) {
  if (train.empty()) throw std::invalid_argument("fit_linear: no training windows");
  if (ridge < 0.0) throw std::invalid_argument("fit_linear: ridge must be nonnegative");
  const int l_in = train[0].x.cols();
  const int l_out = train[0].y.cols();
  const int d = l_in + 1;

  std::vector<double> gram(static_cast<std::size_t>(d) * d, 0.0);
  std::vector<double> rhs(static_cast<std::size_t>(d) * l_out, 0.0);
  std::vector<double> a(d);
  for (const auto& w : train) {
    for (int c = 0; c < w.x.rows(); ++c) {
      for (int i = 0; i < l_in; ++i) a[i] = w.x.at(c, i);
      a[l_in] = 1.0;
      for (int i = 0; i < d; ++i) {
        for (int j = 0; j <= i; ++j) gram[static_cast<std::size_t>(i) * d + j] += a[i] * a[j];
        for (int o = 0; o < l_out; ++o) {
          rhs[static_cast<std::size_t>(i) * l_out + o] += a[i] * w.y.at(c, o);
        }
      }
    }
  }
  for (int i = 0; i < d; ++i) {
    for (int j = i + 1; j < d; ++j) {
      gram[static_cast<std::size_t>(i) * d + j] = gram[static_cast<std::size_t>(j) * d + i];
    }
  }
  for (int i = 0; i < l_in; ++i) gram[static_cast<std::size_t>(i) * d + i] += ridge;

  double trace = 0.0;
  for (int i = 0; i < d; ++i) trace += gram[static_cast<std::size_t>(i) * d + i];
  double jitter = 0.0;
  std::vector<double> chol;
  for (;;) {
    chol = gram;
    if (jitter > 0.0) {
      for (int i = 0; i < d; ++i) chol[static_cast<std::size_t>(i) * d + i] += jitter;
    }
    if (detail::cholesky(chol, d)) break;
    const double next = jitter == 0.0 ? 1e-10 * std::max(1.0, trace / d) : jitter * 10.0;
    if (jitter == 0.0) {
      std::cerr << "warning: fit_linear: singular normal equations (ridge=" << ridge
                << "); falling back to jitter-regularized minimum-norm solve\n";
    }
    jitter = next;
    if (jitter > 1.0 * std::max(1.0, trace)) {
      throw std::runtime_error("fit_linear: normal equations could not be factorized");
    }
  }

  LinearBackbone model;
  model.ridge = ridge;
  model.weight = Tensor({l_out, l_in});
  model.bias = Tensor({l_out, 1});
  std::vector<double> col(d);
  for (int o = 0; o < l_out; ++o) {
    for (int i = 0; i < d; ++i) col[i] = rhs[static_cast<std::size_t>(i) * l_out + o];
    detail::cholesky_solve(chol, d, col);
    for (int i = 0; i < l_in; ++i) model.weight.at(o, i) = col[i];
    model.bias.at(o, 0) = col[l_in];
  }
  return model;
}

inline Tensor predict(const LinearBackbone& model, const Tensor& x) {
  const int n = x.rows(), l_in = x.cols(), l_out = model.weight.rows();
  if (l_in != model.weight.cols()) {
    throw std::invalid_argument("predict: input length " + std::to_string(l_in) +
                                " does not match model (" + std::to_string(model.weight.cols()) +
                                ")");
  }
  Tensor out({n, l_out});
  for (int c = 0; c < n; ++c) {
    for (int o = 0; o < l_out; ++o) {
      double s = model.bias.at(o, 0);
      for (int i = 0; i < l_in; ++i) s += model.weight.at(o, i) * x.at(c, i);
      out.at(c, o) = s;
    }
  }
  return out;
}

/// Reads a forecast-exchange file and joins it against `instances`. Every
/// instance must be covered with a matching shape.
inline std::map<int, ForecastRecord> load_external_forecasts(
    const std::string& path, const std::vector<WindowInstance>& instances) {
  auto records = read_forecasts(path);
  std::map<int, ForecastRecord> by_id;
  for (auto& r : records) by_id.emplace(r.id, std::move(r));

  std::string missing;
  int missing_count = 0;
  for (const auto& inst : instances) {
    auto it = by_id.find(inst.id);
    if (it == by_id.end()) {
      missing += (missing_count++ ? ", " : "") + std::to_string(inst.id);
      continue;
    }
    const Tensor& ybar = it->second.ybar;
    if (ybar.rows() != inst.y.rows() || ybar.cols() != inst.y.cols()) {
      throw std::runtime_error("forecast file '" + path + "': instance " +
                               std::to_string(inst.id) + " has shape " + shape_str(ybar.shape) +
                               ", expected " + shape_str(inst.y.shape));
    }
  }
  if (missing_count > 0) {
    throw std::runtime_error("forecast file '" + path + "': missing ids: [" + missing + "]");
  }
  std::map<int, ForecastRecord> out;
  for (const auto& inst : instances) {
    auto node = by_id.extract(inst.id);
    out.insert(std::move(node));
  }
  return out;
}

}  // namespace pir
