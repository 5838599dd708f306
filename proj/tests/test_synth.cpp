#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <vector>

#include "pir/backbones.hpp"
#include "pir/dataio.hpp"
#include "pir/eval.hpp"
#include "pir/synth.hpp"

using namespace pir;

namespace {

// Per-instance MSE distribution of the seasonal-naive backbone on the test
// split of a generated benchmark.
std::vector<double> backbone_test_errors(const SynthConfig& cfg) {
  auto synth = generate_synthetic_benchmark(cfg);
  auto splits = split_chronological(synth.dataset, {0.7, 0.1, 0.2});
  auto [train_std, stats] = standardize(splits.train);
  auto test_std = standardize(splits.test, &stats).first;
  auto test_w = make_windows(test_std, 96, 24);
  std::map<int, ForecastRecord> preds;
  for (const auto& w : test_w) preds[w.id] = {w.id, seasonal_naive(w.x, 24, 24), "naive"};
  std::vector<double> errors;
  for (const auto& e : per_instance_errors(preds, test_w)) errors.push_back(e.mse);
  return errors;
}

}  // namespace

TEST_CASE("same seed gives a bitwise-identical dataset") {
  SynthConfig cfg;
  cfg.length = 2000;
  cfg.seed = 9;
  auto a = generate_synthetic_benchmark(cfg);
  auto b = generate_synthetic_benchmark(cfg);
  REQUIRE(a.dataset.values.data == b.dataset.values.data);
  REQUIRE(a.dataset.timestamps == b.dataset.timestamps);
  REQUIRE(a.events.size() == b.events.size());
  for (std::size_t i = 0; i < a.events.size(); ++i) {
    REQUIRE(a.events[i].start == b.events[i].start);
    REQUIRE(a.events[i].channel == b.events[i].channel);
    REQUIRE(a.events[i].template_id == b.events[i].template_id);
  }
}

TEST_CASE("every template recurs in the training region") {
  SynthConfig cfg;
  cfg.seed = 0;
  auto synth = generate_synthetic_benchmark(cfg);
  const int boundary = static_cast<int>(cfg.length * cfg.train_fraction);
  std::vector<int> train_counts(cfg.templates, 0);
  for (const auto& ev : synth.events) {
    if (ev.start + cfg.segment_len <= boundary) ++train_counts[ev.template_id];
  }
  for (int t = 0; t < cfg.templates; ++t) {
    REQUIRE(train_counts[t] >= cfg.min_train_occurrences);
  }
}

TEST_CASE("no motif crosses a split boundary") {
  SynthConfig cfg;
  cfg.seed = 3;
  auto synth = generate_synthetic_benchmark(cfg);
  const int b1 = static_cast<int>(cfg.length * cfg.train_fraction);
  const int b2 = static_cast<int>(cfg.length * (cfg.train_fraction + cfg.val_fraction));
  for (const auto& ev : synth.events) {
    const int lo = ev.start, hi = ev.start + cfg.segment_len;
    const bool crosses1 = lo < b1 && hi > b1;
    const bool crosses2 = lo < b2 && hi > b2;
    REQUIRE_FALSE(crosses1);
    REQUIRE_FALSE(crosses2);
  }
}

TEST_CASE("motif events land in every region") {
  SynthConfig cfg;
  cfg.seed = 0;
  auto synth = generate_synthetic_benchmark(cfg);
  const int b1 = static_cast<int>(cfg.length * cfg.train_fraction);
  const int b2 = static_cast<int>(cfg.length * (cfg.train_fraction + cfg.val_fraction));
  int train = 0, val = 0, test = 0;
  for (const auto& ev : synth.events) {
    if (ev.start + cfg.segment_len <= b1) {
      ++train;
    } else if (ev.start >= b1 && ev.start + cfg.segment_len <= b2) {
      ++val;
    } else {
      ++test;
    }
  }
  REQUIRE(train >= cfg.templates * cfg.min_train_occurrences);
  REQUIRE(val >= 1);
  REQUIRE(test >= 1);
}

TEST_CASE("motif-free benchmark has no heavy backbone error tail") {
  SynthConfig cfg;
  cfg.seed = 0;
  cfg.motifs = false;
  auto errors = backbone_test_errors(cfg);
  REQUIRE(errors.size() > 500);
  REQUIRE(kurtosis_of(errors) < 5.0);
}

TEST_CASE("motifs create a right-skewed backbone error distribution") {
  SynthConfig cfg;
  cfg.seed = 0;
  auto errors = backbone_test_errors(cfg);
  REQUIRE(skewness_of(errors) > 1.0);
}

TEST_CASE("motif log writes ground-truth positions") {
  SynthConfig cfg;
  cfg.length = 2000;
  cfg.seed = 5;
  auto synth = generate_synthetic_benchmark(cfg);
  const std::string path = "synth_motifs_test.csv";
  write_motif_log(synth, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  REQUIRE(line == "start,channel,template");
  int rows = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#') ++rows;
  }
  REQUIRE(rows == static_cast<int>(synth.events.size()));
  std::remove(path.c_str());
}
