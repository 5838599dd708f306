#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "pir/backbones.hpp"
#include "pir/dataio.hpp"
#include "pir/eval.hpp"
#include "pir/global_rev.hpp"
#include "pir/pir_model.hpp"
#include "pir/synth.hpp"
#include "pir/train.hpp"
#include "pir/workspace.hpp"

namespace fs = std::filesystem;
using namespace pir;

namespace {

void write_effective_config(CLI::App& app, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << app.config_to_str(true, false);
}

struct TrainFlags {
  std::string data_dir;
  std::string forecasts;
  std::string val_forecasts;
  int k = 10;
  double lambda = 1.0;
  std::uint64_t seed = 0;
  double lr = 1e-3;
  int batch_size = 32;
  int max_epochs = 50;
  int patience = 5;
  std::string granularity = "channel";
  double temperature = 1.0;
  bool rescale_by_query_stats = false;
  bool no_local = false;
  bool no_global = false;
  int d_model = 64;
  int heads = 4;
  int layers = 1;
  int ff_dim = 128;
  int ue_embed_dim = 32;
  int ue_hidden_dim = 128;
  int beta_hidden = 32;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f, bool require_forecasts = true) {
  cmd->add_option("--data", f.data_dir, "Ingested dataset directory")->required();
  auto* fc = cmd->add_option("--forecasts", f.forecasts, "Backbone forecasts for the train split");
  auto* vfc =
      cmd->add_option("--val-forecasts", f.val_forecasts, "Backbone forecasts for the val split");
  if (require_forecasts) {
    fc->required();
    vfc->required();
  }
  cmd->add_option("--k", f.k, "Retrieval depth (top-K)")->capture_default_str();
  cmd->add_option("--lambda", f.lambda, "Weight of the error-estimation loss")
      ->capture_default_str();
  cmd->add_option("--seed", f.seed, "Random seed")->capture_default_str();
  cmd->add_option("--lr", f.lr, "Adam learning rate")->capture_default_str();
  cmd->add_option("--batch", f.batch_size, "Mini-batch size")->capture_default_str();
  cmd->add_option("--epochs", f.max_epochs, "Maximum training epochs")->capture_default_str();
  cmd->add_option("--patience", f.patience, "Early-stopping patience")->capture_default_str();
  cmd->add_option("--granularity", f.granularity, "Retrieval granularity: channel|instance")
      ->capture_default_str();
  cmd->add_option("--temperature", f.temperature, "Softmax temperature over similarities")
      ->capture_default_str();
  cmd->add_flag("--rescale-by-query-stats", f.rescale_by_query_stats,
                "Re-apply the query window mean/std to y_global");
  cmd->add_flag("--no-local", f.no_local, "Disable the local revision branch");
  cmd->add_flag("--no-global", f.no_global, "Disable the global revision branch");
  cmd->add_option("--d-model", f.d_model, "Local reviser width")->capture_default_str();
  cmd->add_option("--heads", f.heads, "Attention heads")->capture_default_str();
  cmd->add_option("--enc-layers", f.layers, "Encoder layers")->capture_default_str();
  cmd->add_option("--ff-dim", f.ff_dim, "Feed-forward width")->capture_default_str();
  cmd->add_option("--ue-embed", f.ue_embed_dim, "Channel embedding size")->capture_default_str();
  cmd->add_option("--ue-hidden", f.ue_hidden_dim, "Error-estimator hidden width")
      ->capture_default_str();
  cmd->add_option("--beta-hidden", f.beta_hidden, "Beta gate hidden width")->capture_default_str();
}

PirConfig config_from_flags(const TrainFlags& f, const Workspace& ws) {
  PirConfig cfg;
  cfg.channels = ws.channels();
  cfg.l_in = ws.l_in;
  cfg.l_out = ws.l_out;
  cfg.k = f.k;
  cfg.granularity = granularity_from_string(f.granularity);
  cfg.temperature = f.temperature;
  cfg.rescale_by_query_stats = f.rescale_by_query_stats;
  cfg.lambda = f.lambda;
  cfg.lr = f.lr;
  cfg.batch_size = f.batch_size;
  cfg.max_epochs = f.max_epochs;
  cfg.patience = f.patience;
  cfg.seed = f.seed;
  cfg.use_local = !f.no_local;
  cfg.use_global = !f.no_global;
  cfg.d_model = f.d_model;
  cfg.heads = f.heads;
  cfg.layers = f.layers;
  cfg.ff_dim = f.ff_dim;
  cfg.ue_embed_dim = f.ue_embed_dim;
  cfg.ue_hidden_dim = f.ue_hidden_dim;
  cfg.beta_hidden = f.beta_hidden;
  return cfg;
}

void write_history_csv(const TrainHistory& hist, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "epoch,train_loss,val_mse,lue,chosen\n";
  for (std::size_t e = 0; e < hist.epochs.size(); ++e) {
    out << e << "," << detail::format_double(hist.epochs[e].train_loss) << ","
        << detail::format_double(hist.epochs[e].val_mse) << ","
        << detail::format_double(hist.epochs[e].lue) << ","
        << (static_cast<int>(e) == hist.chosen_epoch ? 1 : 0) << "\n";
  }
}

PirModel train_on_workspace(const Workspace& ws, const PirConfig& cfg,
                            const std::string& train_fc_path, const std::string& val_fc_path,
                            TrainHistory* hist_out) {
  std::map<int, ForecastRecord> train_fc;
  if (cfg.use_global || true) {
    // holdout-refit backbones may cover only part of the train split
    auto records = read_forecasts(train_fc_path);
    for (auto& r : records) train_fc.emplace(r.id, std::move(r));
    std::size_t covered = 0;
    for (const auto& w : ws.train_w) covered += train_fc.count(w.id);
    if (covered == 0) {
      throw std::runtime_error("no train-split instance is covered by '" + train_fc_path + "'");
    }
    if (covered < ws.train_w.size()) {
      std::cerr << "note: training on " << covered << " of " << ws.train_w.size()
                << " train instances covered by the forecast file\n";
    }
  }
  auto val_fc = load_external_forecasts(val_fc_path, ws.val_w);

  PirModel model(cfg);
  RetrievalDatabase db = RetrievalDatabase::build(ws.train_w, cfg.granularity);
  const RetrievalDatabase* dbp = cfg.use_global ? &db : nullptr;
  if (cfg.use_global) model.set_db_fingerprint(db.fingerprint());
  auto train_set = prepare_training_set(ws.train_w, train_fc, cfg, dbp, true);
  auto val_set = prepare_training_set(ws.val_w, val_fc, cfg, dbp, false);
  auto hist = train_model(model, train_set, val_set);
  if (hist_out != nullptr) *hist_out = hist;
  return model;
}

struct RevisedSplit {
  std::vector<ForecastRecord> revised;
  std::vector<std::pair<int, Tensor>> deltas;  // instance id -> (N,1)
};

RevisedSplit revise_split(PirModel& model, const Workspace& ws, const std::string& split,
                          const std::map<int, ForecastRecord>& forecasts) {
  const auto& windows = ws.windows(split);
  const PirConfig& cfg = model.config();
  RevisedSplit out;
  RetrievalDatabase db = RetrievalDatabase::build(ws.train_w, cfg.granularity);
  if (cfg.use_global && model.db_fingerprint() != 0 &&
      model.db_fingerprint() != db.fingerprint()) {
    throw std::runtime_error(
        "retrieval database fingerprint mismatch: the checkpoint was trained against a "
        "different training split");
  }
  const bool exclude_self = split == "train";
  for (const auto& w : windows) {
    InstanceData data;
    data.id = w.id;
    data.x = w.x;
    data.ybar = forecasts.at(w.id).ybar;
    data.exo = w.exo;
    if (cfg.use_global) {
      attach_retrieval(data, db, cfg, exclude_self, w.origin);
    } else {
      data.y_global = Tensor({cfg.channels, cfg.l_out});
      data.w = Tensor({cfg.channels, cfg.k});
    }
    auto res = model.forward(data);
    out.revised.push_back({w.id, res.y_pred, "pir"});
    out.deltas.emplace_back(w.id, res.delta);
  }
  return out;
}

void write_deltas_csv(const std::vector<std::pair<int, Tensor>>& deltas, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "instance_id,channel,delta\n";
  for (const auto& [id, d] : deltas) {
    for (int c = 0; c < d.rows(); ++c) {
      out << id << "," << c << "," << detail::format_double(d.at(c, 0)) << "\n";
    }
  }
}

std::map<int, double> read_delta_means(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open deltas file '" + path + "'");
  std::string line;
  std::getline(in, line);  // header
  std::map<int, std::pair<double, int>> acc;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = detail::split_fields(line);
    if (fields.size() != 3) {
      throw std::runtime_error("deltas file row " + std::to_string(line_no) + ": expected 3 fields");
    }
    const int id = static_cast<int>(detail::parse_double(fields[0], line_no));
    acc[id].first += detail::parse_double(fields[2], line_no);
    acc[id].second += 1;
  }
  std::map<int, double> out;
  for (const auto& [id, p] : acc) out[id] = p.first / p.second;
  return out;
}

void write_distribution_csv(const DistributionReport& base, const DistributionReport& revised,
                            const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "series,kind,a,b\n";
  auto dump = [&](const char* name, const DistributionReport& rep) {
    for (std::size_t b = 0; b + 1 < rep.bin_edges.size(); ++b) {
      out << name << ",hist," << detail::format_double(rep.bin_edges[b]) << ","
          << rep.counts[b] << "\n";
    }
    for (std::size_t i = 0; i < rep.kde_x.size(); ++i) {
      out << name << ",kde," << detail::format_double(rep.kde_x[i]) << ","
          << detail::format_double(rep.kde_density[i]) << "\n";
    }
    out << name << ",peak," << detail::format_double(rep.peak_x) << ","
        << detail::format_double(rep.peak_density) << "\n";
  };
  dump("base", base);
  dump("revised", revised);
}

struct EvalFiles {
  double base_mse = 0.0, base_mae = 0.0, revised_mse = 0.0, revised_mae = 0.0;
};

EvalFiles run_eval(const Workspace& ws, const std::string& split, const std::string& pred_path,
                   const std::string& base_path, const std::string& deltas_path,
                   const std::string& out_dir, int bins) {
  const auto& windows = ws.windows(split);
  auto base = load_external_forecasts(base_path, windows);
  auto pred = load_external_forecasts(pred_path, windows);
  auto base_errors = per_instance_errors(base, windows);
  auto pred_errors = per_instance_errors(pred, windows);

  fs::create_directories(out_dir);
  {
    std::ofstream out(out_dir + "/per_instance.csv");
    out << "instance_id,base_mse,base_mae,revised_mse,revised_mae\n";
    for (std::size_t i = 0; i < base_errors.size(); ++i) {
      out << base_errors[i].id << "," << detail::format_double(base_errors[i].mse) << ","
          << detail::format_double(base_errors[i].mae) << ","
          << detail::format_double(pred_errors[i].mse) << ","
          << detail::format_double(pred_errors[i].mae) << "\n";
    }
  }

  std::vector<double> base_mses, pred_mses;
  EvalFiles agg;
  for (std::size_t i = 0; i < base_errors.size(); ++i) {
    base_mses.push_back(base_errors[i].mse);
    pred_mses.push_back(pred_errors[i].mse);
    agg.base_mse += base_errors[i].mse;
    agg.base_mae += base_errors[i].mae;
    agg.revised_mse += pred_errors[i].mse;
    agg.revised_mae += pred_errors[i].mae;
  }
  const double n = static_cast<double>(base_errors.size());
  agg.base_mse /= n;
  agg.base_mae /= n;
  agg.revised_mse /= n;
  agg.revised_mae /= n;

  auto base_dist = error_distribution(base_mses, bins);
  auto pred_dist = error_distribution(pred_mses, bins);
  write_distribution_csv(base_dist, pred_dist, out_dir + "/distribution.csv");

  auto horizon_base = per_horizon_errors(base, windows);
  auto horizon_pred = per_horizon_errors(pred, windows);

  nlohmann::json metrics;
  metrics["split"] = split;
  metrics["instances"] = base_errors.size();
  metrics["base"] = {{"mse", agg.base_mse}, {"mae", agg.base_mae}};
  metrics["revised"] = {{"mse", agg.revised_mse}, {"mae", agg.revised_mae}};
  metrics["improvement_pct"] = {
      {"mse", std::stod(format_improvement(agg.base_mse, agg.revised_mse))},
      {"mae", std::stod(format_improvement(agg.base_mae, agg.revised_mae))}};
  metrics["peak_density_mse"] = {{"base", base_dist.peak_x}, {"revised", pred_dist.peak_x}};
  auto horizon = nlohmann::json::array();
  for (std::size_t t = 0; t < horizon_base.mse.size(); ++t) {
    horizon.push_back({{"step", t},
                       {"base_mse", horizon_base.mse[t]},
                       {"revised_mse", horizon_pred.mse[t]},
                       {"base_mae", horizon_base.mae[t]},
                       {"revised_mae", horizon_pred.mae[t]}});
  }
  metrics["per_horizon"] = std::move(horizon);

  if (!deltas_path.empty()) {
    auto delta_means = read_delta_means(deltas_path);
    std::vector<double> dm, realized;
    std::ofstream out(out_dir + "/delta_fidelity.csv");
    out << "instance_id,delta_mean,realized_mse\n";
    for (const auto& e : base_errors) {
      auto it = delta_means.find(e.id);
      if (it == delta_means.end()) {
        throw std::runtime_error("deltas file missing instance " + std::to_string(e.id));
      }
      dm.push_back(it->second);
      realized.push_back(e.mse);
      out << e.id << "," << detail::format_double(it->second) << ","
          << detail::format_double(e.mse) << "\n";
    }
    auto fid = delta_fidelity(dm, realized);
    if (fid.defined) {
      metrics["delta_fidelity"] = {{"pearson_r", fid.pearson_r}, {"r_squared", fid.r_squared}};
    } else {
      metrics["delta_fidelity"] = {{"undefined", true}};
    }
  }

  std::ofstream mout(out_dir + "/metrics.json");
  mout << metrics.dump(2) << "\n";
  return agg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PIR: post-forecasting identification and revision for time-series forecasts"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read options from a key=value config file");

  // ---- synth ----
  struct {
    std::string out_dir;
    std::uint64_t seed = 0;
    bool no_motifs = false;
    int length = 6000;
    int channels = 3;
    int segment_len = 24;
    double motif_rate = 0.05;
    double motif_amplitude = 2.5;
  } synth_opts;
  auto* synth_cmd = app.add_subcommand("synth", "Generate the synthetic long-tail benchmark");
  synth_cmd->add_option("--out", synth_opts.out_dir, "Output directory")->required();
  synth_cmd->add_option("--seed", synth_opts.seed, "Random seed")->capture_default_str();
  synth_cmd->add_flag("--no-motifs", synth_opts.no_motifs, "Skip rare-motif injection");
  synth_cmd->add_option("--length", synth_opts.length, "Series length")->capture_default_str();
  synth_cmd->add_option("--channels", synth_opts.channels, "Channel count")->capture_default_str();
  synth_cmd->add_option("--segment-len", synth_opts.segment_len, "Motif segment length")
      ->capture_default_str();
  synth_cmd->add_option("--motif-rate", synth_opts.motif_rate, "Motif segment rate")
      ->capture_default_str();
  synth_cmd->add_option("--motif-amplitude", synth_opts.motif_amplitude, "Motif amplitude")
      ->capture_default_str();

  // ---- ingest ----
  struct {
    std::string data;
    std::string out_dir;
    std::string splits = "7:1:2";
    int l_in = 96;
    int l_out = 96;
    int stride = 1;
  } ingest_opts;
  auto* ingest_cmd = app.add_subcommand("ingest", "Ingest a dataset CSV and pin the protocol");
  ingest_cmd->add_option("--data", ingest_opts.data, "Dataset CSV")->required();
  ingest_cmd->add_option("--out", ingest_opts.out_dir, "Output directory")->required();
  ingest_cmd->add_option("--splits", ingest_opts.splits, "Chronological split ratios a:b:c")
      ->capture_default_str();
  ingest_cmd->add_option("--lin", ingest_opts.l_in, "Input window length")->capture_default_str();
  ingest_cmd->add_option("--lout", ingest_opts.l_out, "Target horizon length")
      ->capture_default_str();
  ingest_cmd->add_option("--stride", ingest_opts.stride, "Window stride")->capture_default_str();

  // ---- backbone ----
  struct {
    std::string data_dir;
    std::string kind = "seasonal";
    int period = 24;
    double ridge = 1e-3;
    std::string split = "test";
    std::string out;
    std::string external;
    bool holdout_refit = false;
  } backbone_opts;
  auto* backbone_cmd = app.add_subcommand("backbone", "Produce intermediate forecasts");
  backbone_cmd->add_option("--data", backbone_opts.data_dir, "Ingested dataset directory")
      ->required();
  backbone_cmd->add_option("--kind", backbone_opts.kind, "seasonal|linear")
      ->capture_default_str();
  backbone_cmd->add_option("--period", backbone_opts.period, "Seasonal period")
      ->capture_default_str();
  backbone_cmd->add_option("--ridge", backbone_opts.ridge, "Ridge coefficient")
      ->capture_default_str();
  backbone_cmd->add_option("--split", backbone_opts.split, "train|val|test|all")
      ->capture_default_str();
  backbone_cmd->add_option("--out", backbone_opts.out, "Output file (directory when --split all)")
      ->required();
  backbone_cmd->add_option("--external", backbone_opts.external,
                           "Validate and adopt an external forecast-exchange file");
  backbone_cmd->add_flag("--holdout-refit", backbone_opts.holdout_refit,
                         "Fit the linear backbone on the first 80% of train windows and emit "
                         "train forecasts only for the rest");

  // ---- train ----
  TrainFlags train_opts;
  std::string train_ckpt;
  auto* train_cmd = app.add_subcommand("train", "Train the PIR model");
  add_train_flags(train_cmd, train_opts);
  train_cmd->add_option("--ckpt", train_ckpt, "Checkpoint output path")->required();

  // ---- revise ----
  struct {
    std::string data_dir;
    std::string ckpt;
    std::string forecasts;
    std::string split = "test";
    std::string out;
    std::string deltas;
  } revise_opts;
  auto* revise_cmd = app.add_subcommand("revise", "Revise backbone forecasts with a checkpoint");
  revise_cmd->add_option("--data", revise_opts.data_dir, "Ingested dataset directory")->required();
  revise_cmd->add_option("--ckpt", revise_opts.ckpt, "Model checkpoint")->required();
  revise_cmd->add_option("--forecasts", revise_opts.forecasts, "Backbone forecasts to revise")
      ->required();
  revise_cmd->add_option("--split", revise_opts.split, "train|val|test")->capture_default_str();
  revise_cmd->add_option("--out", revise_opts.out, "Revised forecast-exchange output")->required();
  revise_cmd->add_option("--deltas", revise_opts.deltas,
                         "Per-channel delta export (default: <out stem>_deltas.csv)");

  // ---- eval ----
  struct {
    std::string data_dir;
    std::string split = "test";
    std::string pred;
    std::string base;
    std::string deltas;
    std::string out_dir;
    int bins = 50;
  } eval_opts;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate revised against backbone forecasts");
  eval_cmd->add_option("--data", eval_opts.data_dir, "Ingested dataset directory")->required();
  eval_cmd->add_option("--split", eval_opts.split, "train|val|test")->capture_default_str();
  eval_cmd->add_option("--pred", eval_opts.pred, "Revised forecasts")->required();
  eval_cmd->add_option("--base", eval_opts.base, "Backbone forecasts")->required();
  eval_cmd->add_option("--deltas", eval_opts.deltas, "Delta export from revise");
  eval_cmd->add_option("--out", eval_opts.out_dir, "Report directory")->required();
  eval_cmd->add_option("--bins", eval_opts.bins, "Histogram bins")->capture_default_str();

  // ---- ablate ----
  TrainFlags ablate_opts;
  struct {
    std::string test_forecasts;
    std::string variant = "all";
    std::string out_dir;
  } ablate_extra;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train and evaluate PIR variants");
  add_train_flags(ablate_cmd, ablate_opts);
  ablate_cmd->add_option("--test-forecasts", ablate_extra.test_forecasts,
                         "Backbone forecasts for the test split")
      ->required();
  ablate_cmd->add_option("--variant", ablate_extra.variant, "full|no_local|no_global|none|all")
      ->capture_default_str();
  ablate_cmd->add_option("--out", ablate_extra.out_dir, "Report directory")->required();

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth_cmd->parsed()) {
      SynthConfig cfg;
      cfg.seed = synth_opts.seed;
      cfg.motifs = !synth_opts.no_motifs;
      cfg.length = synth_opts.length;
      cfg.channels = synth_opts.channels;
      cfg.segment_len = synth_opts.segment_len;
      cfg.motif_rate = synth_opts.motif_rate;
      cfg.motif_amplitude = synth_opts.motif_amplitude;
      auto synth = generate_synthetic_benchmark(cfg);
      fs::create_directories(synth_opts.out_dir);
      write_csv(synth.dataset, synth_opts.out_dir + "/data.csv");
      write_motif_log(synth, synth_opts.out_dir + "/motifs.csv");
      write_effective_config(app, synth_opts.out_dir + "/effective_config.ini");
      std::cout << "wrote " << synth_opts.out_dir << "/data.csv (" << cfg.length << " x "
                << cfg.channels << ", " << synth.events.size() << " motif events)\n";
    } else if (ingest_cmd->parsed()) {
      ingest_dataset(ingest_opts.data, ingest_opts.out_dir, parse_ratios(ingest_opts.splits),
                     ingest_opts.l_in, ingest_opts.l_out, ingest_opts.stride);
      write_effective_config(app, ingest_opts.out_dir + "/effective_config.ini");
      auto ws = load_workspace(ingest_opts.out_dir);
      std::cout << "ingested: T=" << ws.splits.train.length() + ws.splits.val.length() +
                       ws.splits.test.length()
                << " N=" << ws.channels() << " windows train/val/test = " << ws.train_w.size()
                << "/" << ws.val_w.size() << "/" << ws.test_w.size() << "\n";
    } else if (backbone_cmd->parsed()) {
      auto ws = load_workspace(backbone_opts.data_dir);
      const bool all = backbone_opts.split == "all";
      std::vector<std::string> splits =
          all ? std::vector<std::string>{"train", "val", "test"}
              : std::vector<std::string>{backbone_opts.split};
      LinearBackbone linear_model;
      LinearBackbone holdout_model;
      if (backbone_opts.kind == "linear") {
        linear_model = fit_linear(ws.train_w, backbone_opts.ridge);
        if (backbone_opts.holdout_refit) {
          auto head = ws.train_w;
          head.resize(std::max<std::size_t>(1, head.size() * 8 / 10));
          holdout_model = fit_linear(head, backbone_opts.ridge);
        }
      }
      for (const auto& split : splits) {
        const auto& windows = ws.windows(split);
        std::vector<ForecastRecord> records;
        if (!backbone_opts.external.empty()) {
          auto loaded = load_external_forecasts(backbone_opts.external, windows);
          for (const auto& w : windows) records.push_back(loaded.at(w.id));
        } else if (backbone_opts.kind == "seasonal") {
          for (const auto& w : windows) {
            records.push_back(
                {w.id, seasonal_naive(w.x, backbone_opts.period, ws.l_out), "seasonal_naive"});
          }
        } else if (backbone_opts.kind == "linear") {
          const bool holdout = backbone_opts.holdout_refit && split == "train";
          const std::size_t from = holdout ? ws.train_w.size() * 8 / 10 : 0;
          for (std::size_t i = 0; i < windows.size(); ++i) {
            if (holdout && i < from) continue;
            const auto& w = windows[i];
            records.push_back(
                {w.id, predict(holdout ? holdout_model : linear_model, w.x), "linear"});
          }
        } else {
          throw std::runtime_error("unknown backbone kind '" + backbone_opts.kind + "'");
        }
        const std::string path =
            all ? backbone_opts.out + "/forecasts_" + split + ".csv" : backbone_opts.out;
        if (all) fs::create_directories(backbone_opts.out);
        write_forecasts(records, path);
        std::cout << "wrote " << path << " (" << records.size() << " instances)\n";
      }
      const std::string snap = all ? backbone_opts.out + "/effective_config.ini"
                                   : backbone_opts.out + ".config.ini";
      write_effective_config(app, snap);
    } else if (train_cmd->parsed()) {
      auto ws = load_workspace(train_opts.data_dir);
      PirConfig cfg = config_from_flags(train_opts, ws);
      TrainHistory hist;
      PirModel model =
          train_on_workspace(ws, cfg, train_opts.forecasts, train_opts.val_forecasts, &hist);
      save_model(model, train_ckpt);
      write_history_csv(hist, train_ckpt + ".history.csv");
      write_effective_config(app, train_ckpt + ".config.ini");
      std::cout << "trained " << hist.epochs.size() << " epochs (best epoch " << hist.chosen_epoch
                << ", val MSE " << hist.epochs[hist.chosen_epoch].val_mse << "); wrote "
                << train_ckpt << "\n";
    } else if (revise_cmd->parsed()) {
      auto ws = load_workspace(revise_opts.data_dir);
      PirModel model = load_model(revise_opts.ckpt);
      if (model.config().channels != ws.channels() || model.config().l_in != ws.l_in ||
          model.config().l_out != ws.l_out) {
        throw std::runtime_error("checkpoint geometry does not match the dataset directory");
      }
      const auto& windows = ws.windows(revise_opts.split);
      auto forecasts = load_external_forecasts(revise_opts.forecasts, windows);
      auto revised = revise_split(model, ws, revise_opts.split, forecasts);
      write_forecasts(revised.revised, revise_opts.out);
      std::string deltas_path = revise_opts.deltas;
      if (deltas_path.empty()) {
        deltas_path = fs::path(revise_opts.out).replace_extension().string() + "_deltas.csv";
      }
      write_deltas_csv(revised.deltas, deltas_path);
      write_effective_config(app, revise_opts.out + ".config.ini");
      std::cout << "wrote " << revise_opts.out << " and " << deltas_path << " ("
                << revised.revised.size() << " instances)\n";
    } else if (eval_cmd->parsed()) {
      auto ws = load_workspace(eval_opts.data_dir);
      auto agg = run_eval(ws, eval_opts.split, eval_opts.pred, eval_opts.base, eval_opts.deltas,
                          eval_opts.out_dir, eval_opts.bins);
      write_effective_config(app, eval_opts.out_dir + "/effective_config.ini");
      std::cout << "base MSE " << agg.base_mse << " -> revised MSE " << agg.revised_mse << " ("
                << format_improvement(agg.base_mse, agg.revised_mse) << "% improvement); report in "
                << eval_opts.out_dir << "\n";
    } else if (ablate_cmd->parsed()) {
      auto ws = load_workspace(ablate_opts.data_dir);
      std::vector<std::string> variants;
      if (ablate_extra.variant == "all") {
        variants = {"full", "no_local", "no_global", "none"};
      } else {
        variants = {ablate_extra.variant};
      }
      auto test_fc = load_external_forecasts(ablate_extra.test_forecasts, ws.test_w);
      fs::create_directories(ablate_extra.out_dir);
      std::ofstream table(ablate_extra.out_dir + "/ablation.csv");
      table << "variant,mse,mae,mse_improvement_pct\n";
      double base_mse = 0.0, base_mae = 0.0;
      {
        auto errors = per_instance_errors(test_fc, ws.test_w);
        for (const auto& e : errors) {
          base_mse += e.mse;
          base_mae += e.mae;
        }
        base_mse /= errors.size();
        base_mae /= errors.size();
      }
      for (const auto& variant : variants) {
        PirConfig cfg = config_from_flags(ablate_opts, ws);
        cfg.use_local = variant == "full" || variant == "no_global";
        cfg.use_global = variant == "full" || variant == "no_local";
        double mse = 0.0, mae = 0.0;
        if (variant == "none") {
          mse = base_mse;
          mae = base_mae;
        } else {
          PirModel model = train_on_workspace(ws, cfg, ablate_opts.forecasts,
                                              ablate_opts.val_forecasts, nullptr);
          auto revised = revise_split(model, ws, "test", test_fc);
          std::map<int, ForecastRecord> by_id;
          for (auto& r : revised.revised) by_id.emplace(r.id, std::move(r));
          auto errors = per_instance_errors(by_id, ws.test_w);
          for (const auto& e : errors) {
            mse += e.mse;
            mae += e.mae;
          }
          mse /= errors.size();
          mae /= errors.size();
        }
        table << variant << "," << detail::format_double(mse) << "," << detail::format_double(mae)
              << "," << format_improvement(base_mse, mse) << "\n";
        std::cout << variant << ": MSE " << mse << " ("
                  << format_improvement(base_mse, mse) << "% vs backbone)\n";
      }
      write_effective_config(app, ablate_extra.out_dir + "/effective_config.ini");
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
