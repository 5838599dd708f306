#pragma once

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pir/dataio.hpp"

namespace pir {

/// An ingested dataset directory: the raw CSV plus a manifest pinning the
/// split ratios and window geometry, so every later stage derives identical
/// windows. Layout:
///   DIR/data.csv      raw series (copied at ingest)
///   DIR/ingest.json   ratios, l_in, l_out, stride
///   DIR/stats.json    train-split channel statistics (sidecar)
struct Workspace {
  SplitRatios ratios;
  int l_in = 0, l_out = 0, stride = 1;
  ChannelStats stats;        // computed on the train split
  SplitDatasets splits;      // standardized with the train statistics
  std::vector<WindowInstance> train_w, val_w, test_w;

  int channels() const { return splits.train.channels(); }

  const std::vector<WindowInstance>& windows(const std::string& split) const {
    if (split == "train") return train_w;
    if (split == "val") return val_w;
    if (split == "test") return test_w;
    throw std::invalid_argument("unknown split '" + split + "' (train|val|test)");
  }
};

inline void ingest_dataset(const std::string& data_csv, const std::string& out_dir,
                           const SplitRatios& ratios, int l_in, int l_out, int stride) {
  auto ds = load_csv(data_csv);
  std::filesystem::create_directories(out_dir);
  write_csv(ds, out_dir + "/data.csv");

  auto splits = split_chronological(ds, ratios);
  auto [train_std, stats] = standardize(splits.train);
  save_stats(stats, ds.channel_names, out_dir + "/stats.json");

  // validate the geometry against every split now, not at first use
  make_windows(train_std, l_in, l_out, stride);
  make_windows(standardize(splits.val, &stats).first, l_in, l_out, stride);
  make_windows(standardize(splits.test, &stats).first, l_in, l_out, stride);

  nlohmann::json manifest = {{"ratios", {ratios.train, ratios.val, ratios.test}},
                             {"l_in", l_in},
                             {"l_out", l_out},
                             {"stride", stride}};
  std::ofstream out(out_dir + "/ingest.json");
  if (!out) throw std::runtime_error("cannot open '" + out_dir + "/ingest.json' for writing");
  out << manifest.dump(2) << "\n";
}

inline Workspace load_workspace(const std::string& dir) {
  std::ifstream in(dir + "/ingest.json");
  if (!in) {
    throw std::runtime_error("'" + dir + "' is not an ingested dataset (missing ingest.json)");
  }
  nlohmann::json manifest;
  in >> manifest;
  Workspace ws;
  auto r = manifest.at("ratios");
  ws.ratios = {r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>()};
  ws.l_in = manifest.at("l_in").get<int>();
  ws.l_out = manifest.at("l_out").get<int>();
  ws.stride = manifest.at("stride").get<int>();

  auto ds = load_csv(dir + "/data.csv");
  auto splits = split_chronological(ds, ws.ratios);
  auto [train_std, stats] = standardize(splits.train);
  ws.stats = stats;
  ws.splits.train = std::move(train_std);
  ws.splits.val = standardize(splits.val, &stats).first;
  ws.splits.test = standardize(splits.test, &stats).first;
  ws.train_w = make_windows(ws.splits.train, ws.l_in, ws.l_out, ws.stride);
  ws.val_w = make_windows(ws.splits.val, ws.l_in, ws.l_out, ws.stride);
  ws.test_w = make_windows(ws.splits.test, ws.l_in, ws.l_out, ws.stride);
  return ws;
}

}  // namespace pir
