#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "pir/dataio.hpp"
#include "pir/tensor.hpp"

namespace pir {

struct InstanceError {
  int id = 0;
  double mse = 0.0;
  double mae = 0.0;
};

/// One record per instance: mean over all N x L_out cells.
inline std::vector<InstanceError> per_instance_errors(const std::map<int, ForecastRecord>& preds,
                                                      const std::vector<WindowInstance>& targets) {
  std::vector<InstanceError> out;
  out.reserve(targets.size());
  for (const auto& w : targets) {
    auto it = preds.find(w.id);
    if (it == preds.end()) {
      throw std::invalid_argument("per_instance_errors: no prediction for instance " +
                                  std::to_string(w.id));
    }
    const Tensor& p = it->second.ybar;
    if (!p.same_shape(w.y)) {
      throw std::invalid_argument("per_instance_errors: shape mismatch for instance " +
                                  std::to_string(w.id));
    }
    InstanceError e;
    e.id = w.id;
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      const double d = p.data[i] - w.y.data[i];
      e.mse += d * d;
      e.mae += std::abs(d);
    }
    e.mse /= static_cast<double>(p.data.size());
    e.mae /= static_cast<double>(p.data.size());
    out.push_back(e);
  }
  return out;
}

/// Per-horizon-step MSE/MAE across instances and channels.
struct HorizonBreakdown {
  std::vector<double> mse;
  std::vector<double> mae;
};

inline HorizonBreakdown per_horizon_errors(const std::map<int, ForecastRecord>& preds,
                                           const std::vector<WindowInstance>& targets) {
  if (targets.empty()) throw std::invalid_argument("per_horizon_errors: no targets");
  const int l = targets[0].y.cols();
  HorizonBreakdown out;
  out.mse.assign(l, 0.0);
  out.mae.assign(l, 0.0);
  std::int64_t rows = 0;
  for (const auto& w : targets) {
    const Tensor& p = preds.at(w.id).ybar;
    for (int c = 0; c < w.y.rows(); ++c) {
      for (int t = 0; t < l; ++t) {
        const double d = p.at(c, t) - w.y.at(c, t);
        out.mse[t] += d * d;
        out.mae[t] += std::abs(d);
      }
    }
    rows += w.y.rows();
  }
  for (int t = 0; t < l; ++t) {
    out.mse[t] /= static_cast<double>(rows);
    out.mae[t] /= static_cast<double>(rows);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Moments and distribution analysis
// ---------------------------------------------------------------------------

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double std_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

inline double skewness_of(const std::vector<double>& v) {
  const double m = mean_of(v), sd = std_of(v);
  if (sd == 0.0) return 0.0;
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m) * (x - m);
  return s / (static_cast<double>(v.size()) * sd * sd * sd);
}

/// Plain (non-excess) kurtosis; 3 for a normal distribution.
inline double kurtosis_of(const std::vector<double>& v) {
  const double m = mean_of(v), sd = std_of(v);
  if (sd == 0.0) return 0.0;
  double s = 0.0;
  for (double x : v) {
    const double d = (x - m) * (x - m);
    s += d * d;
  }
  return s / (static_cast<double>(v.size()) * sd * sd * sd * sd);
}

struct DistributionReport {
  std::vector<double> bin_edges;  // bins + 1 edges over [min, max]
  std::vector<int> counts;
  std::vector<double> kde_x;        // 256 samples
  std::vector<double> kde_density;  // Gaussian KDE, Scott's-rule bandwidth
  double bandwidth = 0.0;
  double peak_x = 0.0;  // error value at peak density
  double peak_density = 0.0;
};

/// Equal-width histogram plus Gaussian KDE with Scott's-rule bandwidth
/// (std * n^(-1/5)), sampled at 256 points over [min-3h, max+3h]. The
/// bandwidth is floored at 1e-6 when the errors are degenerate.
inline DistributionReport error_distribution(const std::vector<double>& errors, int bins) {
  if (errors.size() < 2) throw std::invalid_argument("error_distribution: need >= 2 errors");
  if (bins < 1) throw std::invalid_argument("error_distribution: need >= 1 bin");
  DistributionReport rep;
  const double lo = *std::min_element(errors.begin(), errors.end());
  const double hi = *std::max_element(errors.begin(), errors.end());
  const double width = hi - lo;

  rep.bin_edges.resize(bins + 1);
  for (int b = 0; b <= bins; ++b) rep.bin_edges[b] = lo + width * b / bins;
  rep.counts.assign(bins, 0);
  for (double e : errors) {
    int b = width > 0.0 ? static_cast<int>((e - lo) / width * bins) : 0;
    b = std::min(b, bins - 1);
    ++rep.counts[b];
  }

  const double n = static_cast<double>(errors.size());
  double h = std_of(errors) * std::pow(n, -0.2);
  if (h < 1e-6) {
    std::cerr << "warning: error_distribution: degenerate errors; KDE bandwidth floored at 1e-6\n";
    h = 1e-6;
  }
  rep.bandwidth = h;
  const int samples = 256;
  const double gx0 = lo - 3.0 * h, gx1 = hi + 3.0 * h;
  rep.kde_x.resize(samples);
  rep.kde_density.resize(samples);
  const double inv = 1.0 / (h * std::sqrt(2.0 * 3.14159265358979323846));
  for (int i = 0; i < samples; ++i) {
    const double x = gx0 + (gx1 - gx0) * i / (samples - 1);
    double density = 0.0;
    for (double e : errors) {
      const double z = (x - e) / h;
      density += std::exp(-0.5 * z * z);
    }
    rep.kde_x[i] = x;
    rep.kde_density[i] = density * inv / n;
    if (rep.kde_density[i] > rep.peak_density) {
      rep.peak_density = rep.kde_density[i];
      rep.peak_x = x;
    }
  }
  return rep;
}

struct DeltaFidelity {
  bool defined = false;
  double pearson_r = 0.0;
  double r_squared = 0.0;
};

/// Pearson correlation between instance-mean delta and realized instance
/// error, plus the R^2 of the corresponding simple regression.
inline DeltaFidelity delta_fidelity(const std::vector<double>& delta_mean,
                                    const std::vector<double>& realized) {
  if (delta_mean.size() != realized.size()) {
    throw std::invalid_argument("delta_fidelity: length mismatch");
  }
  if (delta_mean.size() < 3) throw std::invalid_argument("delta_fidelity: need >= 3 instances");
  DeltaFidelity out;
  const double md = mean_of(delta_mean), mr = mean_of(realized);
  double sdd = 0.0, srr = 0.0, sdr = 0.0;
  for (std::size_t i = 0; i < delta_mean.size(); ++i) {
    const double a = delta_mean[i] - md, b = realized[i] - mr;
    sdd += a * a;
    srr += b * b;
    sdr += a * b;
  }
  if (sdd <= 0.0 || srr <= 0.0) {
    out.defined = false;  // zero variance on one side
    return out;
  }
  out.defined = true;
  out.pearson_r = sdr / std::sqrt(sdd * srr);
  out.r_squared = out.pearson_r * out.pearson_r;
  return out;
}

// ---------------------------------------------------------------------------
// Aggregate reporting
// ---------------------------------------------------------------------------

inline double improvement_percent(double base, double revised) {
  return (base - revised) / base * 100.0;
}

/// Improvement to two decimals, the same formatting as the report tables.
inline std::string format_improvement(double base, double revised) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", improvement_percent(base, revised));
  return buf;
}

struct RunMetrics {
  int l_out = 0;
  double base_mse = 0.0;
  double base_mae = 0.0;
  double revised_mse = 0.0;
  double revised_mae = 0.0;
};

struct EvalReport {
  std::vector<RunMetrics> rows;
  double base_mse = 0.0, base_mae = 0.0;
  double revised_mse = 0.0, revised_mae = 0.0;
  double mse_improvement_pct = 0.0;
  double mae_improvement_pct = 0.0;
};

/// Averages per-horizon runs and applies the improvement formula to the
/// averaged metrics.
inline EvalReport aggregate_report(const std::vector<RunMetrics>& runs) {
  if (runs.empty()) throw std::invalid_argument("aggregate_report: no runs");
  EvalReport rep;
  rep.rows = runs;
  for (const auto& r : runs) {
    rep.base_mse += r.base_mse;
    rep.base_mae += r.base_mae;
    rep.revised_mse += r.revised_mse;
    rep.revised_mae += r.revised_mae;
  }
  const double n = static_cast<double>(runs.size());
  rep.base_mse /= n;
  rep.base_mae /= n;
  rep.revised_mse /= n;
  rep.revised_mae /= n;
  rep.mse_improvement_pct = improvement_percent(rep.base_mse, rep.revised_mse);
  rep.mae_improvement_pct = improvement_percent(rep.base_mae, rep.revised_mae);
  return rep;
}

}  // namespace pir
