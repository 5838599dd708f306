#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>

#include "pir/graph.hpp"
#include "pir/rng.hpp"
#include "pir/tensor.hpp"

namespace pir {

/// Failure-identification network: a channel embedding matrix plus a
/// two-layer fully connected net shared across channels, trained to predict
/// each channel's realized forecast MSE.
struct UncertaintyConfig {
  int channels = 0;
  int l_in = 0;
  int l_out = 0;
  int embed_dim = 32;
  int hidden_dim = 128;
};

inline void init_uncertainty_params(ParamStore& store, const std::string& prefix,
                                    const UncertaintyConfig& cfg, std::uint64_t seed) {
  const int in = cfg.l_in + cfg.l_out + cfg.embed_dim;
  Rng re = seeded_for(seed, prefix + ".embed");
  store.create(prefix + ".embed", uniform_init(cfg.channels, cfg.embed_dim, cfg.embed_dim, re));
  Rng r1 = seeded_for(seed, prefix + ".l1");
  store.create(prefix + ".w1", uniform_init(cfg.hidden_dim, in, in, r1));
  store.create(prefix + ".b1", uniform_init(cfg.hidden_dim, 1, in, r1));
  Rng r2 = seeded_for(seed, prefix + ".l2");
  store.create(prefix + ".w2", uniform_init(1, cfg.hidden_dim, cfg.hidden_dim, r2));
  store.create(prefix + ".b2", uniform_init(1, 1, cfg.hidden_dim, r2));
}

/// delta_i = net([x_i || ybar_i || e_i]); returns the (N,1) delta node.
inline int build_uncertainty(Graph& g, const std::string& prefix, const UncertaintyConfig& cfg,
                             int x, int ybar) {
  const int z = g.concat_cols({x, ybar, g.param(prefix + ".embed")});
  const int h = g.gelu(g.linear(z, g.param(prefix + ".w1"), g.param(prefix + ".b1")));
  return g.linear(h, g.param(prefix + ".w2"), g.param(prefix + ".b2"));
}

/// Standalone wrapper around the builder for module-level use and tests.
class UncertaintyNet {
 public:
  UncertaintyNet(const UncertaintyConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), store_ptr_(std::make_unique<ParamStore>()), store_(*store_ptr_),
        graph_(store_ptr_.get()) {
    init_uncertainty_params(store_, "ue", cfg, seed);
    x_ = graph_.input("x", cfg.channels, cfg.l_in);
    ybar_ = graph_.input("ybar", cfg.channels, cfg.l_out);
    delta_ = build_uncertainty(graph_, "ue", cfg, x_, ybar_);
    graph_.mark_output("delta", delta_);
  }

  /// Per-channel predicted squared error from (x, ybar).
  Tensor estimate(const Tensor& x, const Tensor& ybar) {
    graph_.bind(x_, x);
    graph_.bind(ybar_, ybar);
    graph_.run();
    return graph_.value_of(delta_);
  }

  const UncertaintyConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  Graph& graph() { return graph_; }
  int delta_node() const { return delta_; }
  int x_node() const { return x_; }
  int ybar_node() const { return ybar_; }

 private:
  UncertaintyConfig cfg_;
  std::unique_ptr<ParamStore> store_ptr_;  // stable address across moves
  ParamStore& store_;
  Graph graph_;
  int x_ = 0, ybar_ = 0, delta_ = 0;
};

/// Per-channel horizon-mean squared error of a forecast, the training target
/// for delta.
inline Tensor realized_channel_mse(const Tensor& ybar, const Tensor& y) {
  if (!ybar.same_shape(y)) {
    throw std::invalid_argument("realized_channel_mse: shape mismatch " + shape_str(ybar.shape) +
                                " vs " + shape_str(y.shape));
  }
  const int n = ybar.rows(), l = ybar.cols();
  Tensor m({n, 1});
  for (int c = 0; c < n; ++c) {
    double s = 0.0;
    for (int t = 0; t < l; ++t) {
      const double d = ybar.at(c, t) - y.at(c, t);
      s += d * d;
    }
    m.at(c, 0) = s / l;
  }
  return m;
}

/// L_ue = (1/N) sum_i |delta_i - m_i| with m the realized per-channel MSE.
inline double uncertainty_loss(const Tensor& delta, const Tensor& ybar, const Tensor& y) {
  const Tensor m = realized_channel_mse(ybar, y);
  if (delta.rows() != m.rows() || delta.cols() != 1) {
    throw std::invalid_argument("uncertainty_loss: delta must be (N,1), got " +
                                shape_str(delta.shape));
  }
  double s = 0.0;
  for (int c = 0; c < m.rows(); ++c) s += std::abs(delta.at(c, 0) - m.at(c, 0));
  return s / m.rows();
}

}  // namespace pir
