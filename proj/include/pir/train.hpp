#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pir/adam.hpp"
#include "pir/checkpoint.hpp"
#include "pir/dataio.hpp"
#include "pir/global_rev.hpp"
#include "pir/pir_model.hpp"
#include "pir/rng.hpp"

namespace pir {

struct TrainingInstance {
  InstanceData data;
  Tensor y;  // N x L_out target
  Tensor m;  // N x 1 realized per-channel MSE of the backbone forecast
};

/// Joins windows with their backbone forecasts and precomputes retrieval.
/// Windows without a forecast are skipped (holdout-refit mode produces
/// partial training coverage); pass every id for the standard path.
inline std::vector<TrainingInstance> prepare_training_set(
    const std::vector<WindowInstance>& windows, const std::map<int, ForecastRecord>& forecasts,
    const PirConfig& cfg, const RetrievalDatabase* db, bool exclude_self) {
  std::vector<TrainingInstance> out;
  out.reserve(windows.size());
  for (const auto& w : windows) {
    auto it = forecasts.find(w.id);
    if (it == forecasts.end()) continue;
    TrainingInstance ti;
    ti.data.id = w.id;
    ti.data.x = w.x;
    ti.data.ybar = it->second.ybar;
    ti.data.exo = w.exo;
    if (cfg.use_global && db != nullptr) {
      attach_retrieval(ti.data, *db, cfg, exclude_self, w.origin);
    } else {
      ti.data.y_global = Tensor({cfg.channels, cfg.l_out});
      ti.data.w = Tensor({cfg.channels, cfg.k});
    }
    ti.y = w.y;
    ti.m = realized_channel_mse(ti.data.ybar, w.y);
    out.push_back(std::move(ti));
  }
  return out;
}

struct TrainHistory {
  struct EpochStats {
    double train_loss = 0.0;
    double val_mse = 0.0;
    double lue = 0.0;
  };
  std::vector<EpochStats> epochs;
  int chosen_epoch = -1;
};

/// Mini-batch Adam on L_pr + lambda * L_ue with early stopping on validation
/// MSE; the best-validation parameters are restored before returning.
/// Deterministic under a fixed seed: shuffles derive from (seed, epoch).
inline TrainHistory train_model(PirModel& model, std::vector<TrainingInstance>& train_set,
                                std::vector<TrainingInstance>& val_set) {
  if (train_set.empty()) throw std::invalid_argument("train_model: empty training set");
  if (val_set.empty()) throw std::invalid_argument("train_model: empty validation set");
  if (model.config().max_epochs < 1) {
    throw std::invalid_argument("train_model: max_epochs must be >= 1");
  }
  const PirConfig& cfg = model.config();
  ParamStore& store = model.params();
  Adam opt(store, {.lr = cfg.lr});
  TrainHistory hist;

  auto validation_mse = [&]() {
    double total = 0.0;
    for (auto& ti : val_set) {
      auto out = model.forward(ti.data, &ti.y, &ti.m);
      total += out.lpr;
    }
    return total / static_cast<double>(val_set.size());
  };

  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best_params;
  int best_epochs_completed = 0;
  int stall = 0;

  std::vector<int> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    Rng shuffle_rng = seeded_for(cfg.seed, "epoch-shuffle-" + std::to_string(epoch));
    shuffle_rng.shuffle(order);

    double epoch_loss = 0.0, epoch_lue = 0.0;
    int batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
      const int bsz = static_cast<int>(std::min<std::size_t>(cfg.batch_size, order.size() - b0));
      store.zero_grads();
      double batch_loss = 0.0;
      for (int i = 0; i < bsz; ++i) {
        auto& ti = train_set[order[b0 + i]];
        auto out = model.forward(ti.data, &ti.y, &ti.m);
        model.backward_loss();
        batch_loss += out.loss;
        epoch_lue += out.lue;
      }
      batch_loss /= bsz;
      if (!std::isfinite(batch_loss)) {
        throw std::runtime_error("training diverged (non-finite loss) at epoch " +
                                 std::to_string(epoch) + ", batch " + std::to_string(batches));
      }
      store.scale_grads(1.0 / bsz);
      opt.step(store);
      epoch_loss += batch_loss;
      ++batches;
    }
    model.set_epochs_completed(epoch + 1);

    TrainHistory::EpochStats stats;
    stats.train_loss = epoch_loss / batches;
    stats.lue = epoch_lue / static_cast<double>(order.size());
    stats.val_mse = validation_mse();
    hist.epochs.push_back(stats);

    if (stats.val_mse < best_val) {
      best_val = stats.val_mse;
      hist.chosen_epoch = epoch;
      best_epochs_completed = epoch + 1;
      best_params.clear();
      for (int p = 0; p < store.count(); ++p) best_params.push_back(store.value_at(p).data);
      stall = 0;
    } else {
      ++stall;
      if (stall >= cfg.patience) break;
    }
  }

  for (int p = 0; p < store.count(); ++p) store.value_at(p).data = best_params[p];
  model.set_epochs_completed(best_epochs_completed);
  return hist;
}

// ---------------------------------------------------------------------------
// Model checkpoints: parameters + config + database fingerprint
// ---------------------------------------------------------------------------

inline nlohmann::json config_to_json(const PirConfig& c) {
  return {{"channels", c.channels},
          {"l_in", c.l_in},
          {"l_out", c.l_out},
          {"exo_features", c.exo_features},
          {"k", c.k},
          {"granularity", to_string(c.granularity)},
          {"temperature", c.temperature},
          {"rescale_by_query_stats", c.rescale_by_query_stats},
          {"ue_embed_dim", c.ue_embed_dim},
          {"ue_hidden_dim", c.ue_hidden_dim},
          {"d_model", c.d_model},
          {"heads", c.heads},
          {"layers", c.layers},
          {"ff_dim", c.ff_dim},
          {"beta_hidden", c.beta_hidden},
          {"lambda", c.lambda},
          {"lr", c.lr},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"seed", c.seed},
          {"use_local", c.use_local},
          {"use_global", c.use_global}};
}

inline PirConfig config_from_json(const nlohmann::json& j) {
  PirConfig c;
  c.channels = j.at("channels").get<int>();
  c.l_in = j.at("l_in").get<int>();
  c.l_out = j.at("l_out").get<int>();
  c.exo_features = j.at("exo_features").get<int>();
  c.k = j.at("k").get<int>();
  c.granularity = granularity_from_string(j.at("granularity").get<std::string>());
  c.temperature = j.at("temperature").get<double>();
  c.rescale_by_query_stats = j.at("rescale_by_query_stats").get<bool>();
  c.ue_embed_dim = j.at("ue_embed_dim").get<int>();
  c.ue_hidden_dim = j.at("ue_hidden_dim").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.heads = j.at("heads").get<int>();
  c.layers = j.at("layers").get<int>();
  c.ff_dim = j.at("ff_dim").get<int>();
  c.beta_hidden = j.at("beta_hidden").get<int>();
  c.lambda = j.at("lambda").get<double>();
  c.lr = j.at("lr").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.max_epochs = j.at("max_epochs").get<int>();
  c.patience = j.at("patience").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.use_local = j.at("use_local").get<bool>();
  c.use_global = j.at("use_global").get<bool>();
  return c;
}

inline void save_model(const PirModel& model, const std::string& path) {
  nlohmann::json doc;
  doc["version"] = kCheckpointVersion;
  doc["config"] = config_to_json(model.config());
  doc["epochs_completed"] = model.epochs_completed();
  char fp[20];
  std::snprintf(fp, sizeof(fp), "%016llx",
                static_cast<unsigned long long>(model.db_fingerprint()));
  doc["db_fingerprint"] = std::string(fp);
  doc["params"] = params_to_json(model.params());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << doc.dump(2) << "\n";
}

inline PirModel load_model(const std::string& path) {
  const nlohmann::json doc = load_checkpoint_json(path);
  PirModel model(config_from_json(doc.at("config")));
  params_from_json(doc.at("params"), model.params());
  model.set_epochs_completed(doc.at("epochs_completed").get<int>());
  const std::string fp = doc.value("db_fingerprint", "0");
  model.set_db_fingerprint(std::stoull(fp, nullptr, 16));
  return model;
}

}  // namespace pir
