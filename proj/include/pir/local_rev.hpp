#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "pir/graph.hpp"
#include "pir/rng.hpp"
#include "pir/tensor.hpp"

namespace pir {

/// Local revision: per-variate forecast tokens plus one exogenous token run
/// through a self-attention encoder, with a linear head over the variate
/// tokens. The head is zero-initialized so y_local starts at exactly zero.
/// No positional encoding: variate order carries no meaning.
struct LocalConfig {
  int channels = 0;
  int l_out = 0;
  int exo_features = 5;
  int d_model = 64;
  int heads = 4;
  int layers = 1;
  int ff_dim = 128;
};

inline void init_local_params(ParamStore& store, const std::string& prefix, const LocalConfig& cfg,
                              std::uint64_t seed) {
  if (cfg.d_model % cfg.heads != 0) {
    throw std::invalid_argument("local reviser: d_model must be divisible by heads");
  }
  const int d = cfg.d_model;
  auto create_linear = [&](const std::string& name, int out, int in) {
    Rng r = seeded_for(seed, prefix + "." + name);
    store.create(prefix + "." + name + ".w", uniform_init(out, in, in, r));
    store.create(prefix + "." + name + ".b", uniform_init(out, 1, in, r));
  };
  create_linear("co_emb", d, cfg.l_out);
  create_linear("exo_emb", d, cfg.l_out * cfg.exo_features);
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string lp = "enc" + std::to_string(l);
    create_linear(lp + ".q", d, d);
    {
      // no key bias: a constant shift of K cancels in the row softmax
      Rng r = seeded_for(seed, prefix + "." + lp + ".k");
      store.create(prefix + "." + lp + ".k.w", uniform_init(d, d, d, r));
    }
    create_linear(lp + ".v", d, d);
    create_linear(lp + ".o", d, d);
    store.create(prefix + "." + lp + ".ln1.g", Tensor({1, d}, 1.0));
    store.create(prefix + "." + lp + ".ln1.b", Tensor({1, d}, 0.0));
    create_linear(lp + ".ff1", cfg.ff_dim, d);
    create_linear(lp + ".ff2", d, cfg.ff_dim);
    store.create(prefix + "." + lp + ".ln2.g", Tensor({1, d}, 1.0));
    store.create(prefix + "." + lp + ".ln2.b", Tensor({1, d}, 0.0));
  }
  // zero head: the revision starts as an exact no-op
  store.create(prefix + ".head.w", Tensor({cfg.l_out, d}, 0.0));
  store.create(prefix + ".head.b", Tensor({cfg.l_out, 1}, 0.0));
}

/// Token matrix (N+1, d_model): rows 0..N-1 embed ybar per variate, row N
/// embeds the flattened exogenous matrix.
inline int build_local_tokens(Graph& g, const std::string& prefix, const LocalConfig& cfg,
                              int ybar, int exo) {
  const int h_co = g.linear(ybar, g.param(prefix + ".co_emb.w"), g.param(prefix + ".co_emb.b"));
  const int exo_flat = g.reshape(exo, 1, cfg.l_out * cfg.exo_features);
  const int h_exo =
      g.linear(exo_flat, g.param(prefix + ".exo_emb.w"), g.param(prefix + ".exo_emb.b"));
  return g.concat_rows({h_co, h_exo});
}

/// Encoder stack; optionally records the per-head attention softmax nodes.
inline int build_local_encoder(Graph& g, const std::string& prefix, const LocalConfig& cfg,
                               int tokens, std::vector<int>* attn_nodes = nullptr) {
  const int d_head = cfg.d_model / cfg.heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(d_head));
  int h = tokens;
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string lp = prefix + ".enc" + std::to_string(l);
    const int q = g.linear(h, g.param(lp + ".q.w"), g.param(lp + ".q.b"));
    const int k = g.matmul_nt(h, g.param(lp + ".k.w"));
    const int v = g.linear(h, g.param(lp + ".v.w"), g.param(lp + ".v.b"));
    std::vector<int> head_outs;
    for (int hd = 0; hd < cfg.heads; ++hd) {
      const int qh = g.slice_cols(q, hd * d_head, d_head);
      const int kh = g.slice_cols(k, hd * d_head, d_head);
      const int vh = g.slice_cols(v, hd * d_head, d_head);
      const int scores = g.scale(g.matmul_nt(qh, kh), att_scale);
      const int p = g.softmax_rows(scores);
      if (attn_nodes != nullptr) attn_nodes->push_back(p);
      head_outs.push_back(g.matmul(p, vh));
    }
    const int merged = g.concat_cols(head_outs);
    const int o = g.linear(merged, g.param(lp + ".o.w"), g.param(lp + ".o.b"));
    h = g.layer_norm(g.add(h, o), g.param(lp + ".ln1.g"), g.param(lp + ".ln1.b"));
    const int f1 = g.gelu(g.linear(h, g.param(lp + ".ff1.w"), g.param(lp + ".ff1.b")));
    const int f2 = g.linear(f1, g.param(lp + ".ff2.w"), g.param(lp + ".ff2.b"));
    h = g.layer_norm(g.add(h, f2), g.param(lp + ".ln2.g"), g.param(lp + ".ln2.b"));
  }
  return h;
}

/// y_local (N, l_out): head applied to the variate tokens only; the exogenous
/// token contributes through attention alone.
inline int build_local(Graph& g, const std::string& prefix, const LocalConfig& cfg, int ybar,
                       int exo, std::vector<int>* attn_nodes = nullptr) {
  const int tokens = build_local_tokens(g, prefix, cfg, ybar, exo);
  const int enc = build_local_encoder(g, prefix, cfg, tokens, attn_nodes);
  const int vars = g.slice_rows(enc, 0, cfg.channels);
  return g.linear(vars, g.param(prefix + ".head.w"), g.param(prefix + ".head.b"));
}

/// Standalone wrapper for module-level use and tests.
class LocalReviser {
 public:
  LocalReviser(const LocalConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), store_ptr_(std::make_unique<ParamStore>()), store_(*store_ptr_),
        graph_(store_ptr_.get()) {
    init_local_params(store_, "local", cfg, seed);
    ybar_ = graph_.input("ybar", cfg.channels, cfg.l_out);
    exo_ = graph_.input("exo", cfg.l_out, cfg.exo_features);
    tokens_ = build_local_tokens(graph_, "local", cfg, ybar_, exo_);
    const int enc = build_local_encoder(graph_, "local", cfg, tokens_, &attn_nodes_);
    const int vars = graph_.slice_rows(enc, 0, cfg.channels);
    y_local_ = graph_.linear(vars, graph_.param("local.head.w"), graph_.param("local.head.b"));
    graph_.mark_output("tokens", tokens_);
    graph_.mark_output("y_local", y_local_);
  }

  Tensor embed_tokens(const Tensor& ybar, const Tensor& exo) {
    run(ybar, exo);
    return graph_.value_of(tokens_);
  }

  Tensor revise(const Tensor& ybar, const Tensor& exo) {
    run(ybar, exo);
    return graph_.value_of(y_local_);
  }

  /// Attention matrices ((N+1)x(N+1) per head and layer) from the last run.
  std::vector<Tensor> attention_weights() const {
    std::vector<Tensor> out;
    for (int id : attn_nodes_) out.push_back(graph_.value_of(id));
    return out;
  }

  const LocalConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  Graph& graph() { return graph_; }
  int y_local_node() const { return y_local_; }

 private:
  void run(const Tensor& ybar, const Tensor& exo) {
    graph_.bind(ybar_, ybar);
    graph_.bind(exo_, exo);
    graph_.run();
  }

  LocalConfig cfg_;
  std::unique_ptr<ParamStore> store_ptr_;  // stable address across moves
  ParamStore& store_;
  Graph graph_;
  std::vector<int> attn_nodes_;
  int ybar_ = 0, exo_ = 0, tokens_ = 0, y_local_ = 0;
};

}  // namespace pir
