#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "pir/global_rev.hpp"
#include "pir/graph.hpp"
#include "pir/identify.hpp"
#include "pir/local_rev.hpp"
#include "pir/rng.hpp"
#include "pir/tensor.hpp"

namespace pir {

struct PirConfig {
  // shapes
  int channels = 0;
  int l_in = 96;
  int l_out = 96;
  int exo_features = 5;
  // retrieval
  int k = 10;
  RetrievalGranularity granularity = RetrievalGranularity::kChannel;
  double temperature = 1.0;
  bool rescale_by_query_stats = false;
  // failure identification
  int ue_embed_dim = 32;
  int ue_hidden_dim = 128;
  // local reviser
  int d_model = 64;
  int heads = 4;
  int layers = 1;
  int ff_dim = 128;
  // beta gate
  int beta_hidden = 32;
  // training
  double lambda = 1.0;
  double lr = 1e-3;
  int batch_size = 32;
  int max_epochs = 50;
  int patience = 5;
  std::uint64_t seed = 0;
  // ablation variants: no_local drops the alpha branch, no_global the beta branch
  bool use_local = true;
  bool use_global = true;

  UncertaintyConfig uncertainty() const {
    return {channels, l_in, l_out, ue_embed_dim, ue_hidden_dim};
  }
  LocalConfig local() const { return {channels, l_out, exo_features, d_model, heads, layers, ff_dim}; }
};

/// Everything the model consumes for one instance. Retrieval outputs are
/// parameter-independent, so they are computed once and cached.
struct InstanceData {
  int id = 0;
  Tensor x;         // N x L_in
  Tensor ybar;      // N x L_out
  Tensor exo;       // L_out x F
  Tensor y_global;  // N x L_out (zeros when retrieval is off)
  Tensor w;         // N x K similarity rows (zeros when retrieval is off)
};

struct CombineResult {
  Tensor y_pred;
  Tensor alpha;  // N x 1
  Tensor beta;   // N x 1
};

/// The end-to-end PIR model: failure identification, local and global
/// revision gates, and the residual combination, wired into one compute
/// graph so the multi-task loss trains everything jointly.
///
/// The model is a strict no-op over the backbone until the first training
/// epoch completes: the local head is zero-initialized and the global branch
/// is gated off while `epochs_completed() == 0`.
class PirModel {
 public:
  explicit PirModel(const PirConfig& cfg)
      : cfg_(cfg), store_ptr_(std::make_unique<ParamStore>()), store_(*store_ptr_),
        graph_(store_ptr_.get()) {
    if (cfg.channels < 1 || cfg.l_in < 2 || cfg.l_out < 1 || cfg.k < 1) {
      throw std::invalid_argument("pir model: channels, l_in, l_out and k must be positive");
    }
    init_uncertainty_params(store_, "ue", cfg_.uncertainty(), cfg_.seed);
    if (cfg_.use_local) init_local_params(store_, "local", cfg_.local(), cfg_.seed);
    if (cfg_.use_local) {
      // "initialized to vectors of ones" / zeros: alpha starts as sigmoid(delta)
      store_.create("gate.alpha.w", Tensor({1, 1}, 1.0));
      store_.create("gate.alpha.b", Tensor({1, 1}, 0.0));
    }
    if (cfg_.use_global) {
      Rng r1 = seeded_for(cfg_.seed, "gate.beta.l1");
      store_.create("gate.beta.w1", uniform_init(cfg_.beta_hidden, 1 + cfg_.k, 1 + cfg_.k, r1));
      store_.create("gate.beta.b1", uniform_init(cfg_.beta_hidden, 1, 1 + cfg_.k, r1));
      Rng r2 = seeded_for(cfg_.seed, "gate.beta.l2");
      store_.create("gate.beta.w2", uniform_init(1, cfg_.beta_hidden, cfg_.beta_hidden, r2));
      store_.create("gate.beta.b2", Tensor({1, 1}, -2.0));  // open slowly
    }
    build_graph();
    zero_target_ = Tensor({cfg_.channels, cfg_.l_out});
    zero_m_ = Tensor({cfg_.channels, 1});
    zero_global_ = Tensor({cfg_.channels, cfg_.l_out});
  }

  const PirConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  Graph& graph() { return graph_; }

  int epochs_completed() const { return epochs_completed_; }
  void set_epochs_completed(int n) { epochs_completed_ = n; }
  /// Warm-up gate: during epoch 0 the global branch contributes nothing, so a
  /// freshly constructed model reproduces the backbone bitwise.
  bool warm() const { return epochs_completed_ == 0; }

  std::uint64_t db_fingerprint() const { return db_fingerprint_; }
  void set_db_fingerprint(std::uint64_t f) { db_fingerprint_ = f; }

  struct Outputs {
    Tensor y_pred;
    Tensor delta;
    Tensor alpha;
    Tensor beta;
    double lpr = 0.0;
    double lue = 0.0;
    double loss = 0.0;
  };

  /// Forward pass for one instance. `y`/`m` default to zeros, which leaves
  /// y_pred valid and the loss outputs meaningless; pass both when training.
  /// The warm-up gate replaces y_global with zeros.
  Outputs forward(const InstanceData& inst, const Tensor* y = nullptr, const Tensor* m = nullptr) {
    bind_instance(inst, y, m);
    graph_.run();
    Outputs out;
    out.y_pred = graph_.value_of(y_pred_);
    out.delta = graph_.value_of(delta_);
    out.alpha = cfg_.use_local ? graph_.value_of(alpha_) : Tensor({cfg_.channels, 1});
    out.beta = cfg_.use_global ? graph_.value_of(beta_) : Tensor({cfg_.channels, 1});
    out.lpr = graph_.scalar_of(lpr_);
    out.lue = graph_.scalar_of(lue_);
    out.loss = graph_.scalar_of(loss_);
    return out;
  }

  /// Accumulates d(loss)/d(params) into the store for the last forward.
  void backward_loss() { graph_.run_backward(loss_, 1.0); }

  /// Reference combination outside the graph. Force flags are test hooks for
  /// the gate-off identity.
  CombineResult combine(const Tensor& ybar, const Tensor& y_local, const Tensor& y_global,
                        const Tensor& delta, const Tensor& w, bool force_zero_alpha = false,
                        bool force_zero_beta = false) const {
    const int n = ybar.rows(), l = ybar.cols();
    CombineResult res;
    res.alpha = Tensor({n, 1});
    res.beta = Tensor({n, 1});
    if (cfg_.use_local && !force_zero_alpha) {
      const double aw = store_.value("gate.alpha.w").data[0];
      const double ab = store_.value("gate.alpha.b").data[0];
      for (int c = 0; c < n; ++c) res.alpha.at(c, 0) = detail::sigmoid(aw * delta.at(c, 0) + ab);
    }
    if (cfg_.use_global && !force_zero_beta) {
      for (int c = 0; c < n; ++c) res.beta.at(c, 0) = beta_gate(delta.at(c, 0), w, c);
    }
    res.y_pred = Tensor({n, l});
    for (int c = 0; c < n; ++c) {
      const double a = res.alpha.at(c, 0);
      const double b = res.beta.at(c, 0);
      for (int t = 0; t < l; ++t) {
        res.y_pred.at(c, t) = ybar.at(c, t) + (a * y_local.at(c, t) + b * y_global.at(c, t));
      }
    }
    return res;
  }

  // node accessors (tests, gradient checks)
  int loss_node() const { return loss_; }
  int y_pred_node() const { return y_pred_; }
  int delta_node() const { return delta_; }

 private:
  void build_graph() {
    x_in_ = graph_.input("x", cfg_.channels, cfg_.l_in);
    ybar_in_ = graph_.input("ybar", cfg_.channels, cfg_.l_out);
    exo_in_ = graph_.input("exo", cfg_.l_out, cfg_.exo_features);
    yglobal_in_ = graph_.input("y_global", cfg_.channels, cfg_.l_out);
    w_in_ = graph_.input("w", cfg_.channels, cfg_.k);
    y_in_ = graph_.input("y", cfg_.channels, cfg_.l_out);
    m_in_ = graph_.input("m", cfg_.channels, 1);

    delta_ = build_uncertainty(graph_, "ue", cfg_.uncertainty(), x_in_, ybar_in_);

    int correction = -1;
    if (cfg_.use_local) {
      const int y_local =
          build_local(graph_, "local", cfg_.local(), ybar_in_, exo_in_, &attn_nodes_);
      y_local_ = y_local;
      alpha_ = graph_.sigmoid(
          graph_.linear(delta_, graph_.param("gate.alpha.w"), graph_.param("gate.alpha.b")));
      correction = graph_.row_scale(y_local, alpha_);
    }
    if (cfg_.use_global) {
      const int zb = graph_.concat_cols({delta_, w_in_});
      const int hb =
          graph_.gelu(graph_.linear(zb, graph_.param("gate.beta.w1"), graph_.param("gate.beta.b1")));
      beta_ = graph_.sigmoid(
          graph_.linear(hb, graph_.param("gate.beta.w2"), graph_.param("gate.beta.b2")));
      const int gscaled = graph_.row_scale(yglobal_in_, beta_);
      correction = correction < 0 ? gscaled : graph_.add(correction, gscaled);
    }
    y_pred_ = correction < 0 ? ybar_in_ : graph_.add(ybar_in_, correction);

    lpr_ = graph_.mse(y_pred_, y_in_);
    lue_ = graph_.mae(delta_, m_in_);
    loss_ = graph_.add(lpr_, graph_.scale(lue_, cfg_.lambda));
    graph_.mark_output("y_pred", y_pred_);
    graph_.mark_output("delta", delta_);
    graph_.mark_output("loss", loss_);
  }

  void bind_instance(const InstanceData& inst, const Tensor* y, const Tensor* m) {
    graph_.bind(x_in_, inst.x);
    graph_.bind(ybar_in_, inst.ybar);
    graph_.bind(exo_in_, inst.exo);
    const bool gate_global = cfg_.use_global && !warm();
    graph_.bind(yglobal_in_, gate_global ? inst.y_global : zero_global_);
    graph_.bind(w_in_, cfg_.use_global ? inst.w : Tensor({cfg_.channels, cfg_.k}));
    graph_.bind(y_in_, y != nullptr ? *y : zero_target_);
    graph_.bind(m_in_, m != nullptr ? *m : zero_m_);
  }

  double beta_gate(double delta_c, const Tensor& w, int c) const {
    const Tensor& w1 = store_.value("gate.beta.w1");
    const Tensor& b1 = store_.value("gate.beta.b1");
    const Tensor& w2 = store_.value("gate.beta.w2");
    const Tensor& b2 = store_.value("gate.beta.b2");
    double logit = b2.data[0];
    for (int h = 0; h < cfg_.beta_hidden; ++h) {
      double z = b1.at(h, 0) + w1.at(h, 0) * delta_c;
      for (int j = 0; j < cfg_.k; ++j) z += w1.at(h, 1 + j) * w.at(c, j);
      logit += w2.at(0, h) * detail::gelu(z);
    }
    return detail::sigmoid(logit);
  }

  PirConfig cfg_;
  std::unique_ptr<ParamStore> store_ptr_;  // stable address across moves
  ParamStore& store_;
  Graph graph_;
  std::vector<int> attn_nodes_;
  int epochs_completed_ = 0;
  std::uint64_t db_fingerprint_ = 0;

  int x_in_ = 0, ybar_in_ = 0, exo_in_ = 0, yglobal_in_ = 0, w_in_ = 0, y_in_ = 0, m_in_ = 0;
  int delta_ = 0, y_local_ = -1, alpha_ = -1, beta_ = -1, y_pred_ = 0;
  int lpr_ = 0, lue_ = 0, loss_ = 0;
  Tensor zero_target_, zero_m_, zero_global_;
};

/// L_pr: mean over channels of the horizon-mean squared error.
inline double prediction_loss(const Tensor& y_pred, const Tensor& y) {
  if (!y_pred.same_shape(y)) {
    throw std::invalid_argument("prediction_loss: shape mismatch " + shape_str(y_pred.shape) +
                                " vs " + shape_str(y.shape));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < y_pred.data.size(); ++i) {
    const double d = y_pred.data[i] - y.data[i];
    s += d * d;
  }
  return s / static_cast<double>(y_pred.data.size());
}

/// L = L_pr + lambda * L_ue.
inline double total_loss(double lpr, double lue, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("total_loss: lambda must be nonnegative");
  return lpr + lambda * lue;
}

/// Runs retrieval for one window and fills y_global and the per-channel
/// similarity rows. Exclusion is applied for training-split queries.
inline void attach_retrieval(InstanceData& inst, const RetrievalDatabase& db,
                             const PirConfig& cfg, bool exclude_self, int origin) {
  const int n = cfg.channels, l_out = cfg.l_out;
  inst.y_global = Tensor({n, l_out});
  inst.w = Tensor({n, cfg.k});
  auto rescale = [&](std::vector<double>& values, const double* query, int len) {
    double mean = 0.0;
    for (int i = 0; i < len; ++i) mean += query[i];
    mean /= len;
    double var = 0.0;
    for (int i = 0; i < len; ++i) var += (query[i] - mean) * (query[i] - mean);
    const double sd = std::max(std::sqrt(var / len), 1e-8);
    for (double& v : values) v = v * sd + mean;
  };
  if (cfg.granularity == RetrievalGranularity::kChannel) {
    for (int c = 0; c < n; ++c) {
      std::vector<double> query(inst.x.data.begin() + static_cast<std::size_t>(c) * cfg.l_in,
                                inst.x.data.begin() + static_cast<std::size_t>(c + 1) * cfg.l_in);
      ExclusionWindow ex{c, origin};
      auto result = db.retrieve(query, cfg.k, exclude_self ? &ex : nullptr);
      auto rev = global_revise(result, cfg.temperature);
      if (cfg.rescale_by_query_stats) rescale(rev.y_global, query.data(), cfg.l_in);
      for (int j = 0; j < cfg.k; ++j) inst.w.at(c, j) = result.similarities[j];
      for (int t = 0; t < l_out; ++t) inst.y_global.at(c, t) = rev.y_global[t];
    }
  } else {
    std::vector<double> query(inst.x.data.begin(), inst.x.data.end());
    ExclusionWindow ex{-1, origin};
    auto result = db.retrieve(query, cfg.k, exclude_self ? &ex : nullptr);
    auto rev = global_revise(result, cfg.temperature);
    if (cfg.rescale_by_query_stats) {
      rescale(rev.y_global, query.data(), static_cast<int>(query.size()));
    }
    for (int c = 0; c < n; ++c) {
      for (int j = 0; j < cfg.k; ++j) inst.w.at(c, j) = result.similarities[j];
      for (int t = 0; t < l_out; ++t) {
        inst.y_global.at(c, t) = rev.y_global[static_cast<std::size_t>(c) * l_out + t];
      }
    }
  }
}

}  // namespace pir
