#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <numbers>

#include "pir/backbones.hpp"
#include "pir/dataio.hpp"
#include "pir/rng.hpp"

using namespace pir;

namespace {

TimeSeriesDataset ramp_dataset(int t) {
  TimeSeriesDataset ds;
  ds.channel_names = {"a"};
  ds.values = Tensor({t, 1});
  for (int i = 0; i < t; ++i) {
    ds.timestamps.push_back(3600ll * i);
    ds.values.at(i, 0) = i + 1.0;
  }
  return ds;
}

}  // namespace

TEST_CASE("seasonal_naive") {
  SECTION("period 2 over a 3-step horizon") {
    Tensor x({1, 4}, {1.0, 2.0, 3.0, 4.0});
    auto y = seasonal_naive(x, 2, 3);
    REQUIRE(y.data == std::vector<double>{3.0, 4.0, 3.0});
  }
  SECTION("period 1 repeats the last value") {
    Tensor x({2, 3}, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0});
    auto y = seasonal_naive(x, 1, 4);
    for (int t = 0; t < 4; ++t) {
      REQUIRE(y.at(0, t) == 3.0);
      REQUIRE(y.at(1, t) == 6.0);
    }
  }
  SECTION("period out of range is rejected") {
    Tensor x({1, 4}, {1.0, 2.0, 3.0, 4.0});
    REQUIRE_THROWS_AS(seasonal_naive(x, 5, 2), std::invalid_argument);
    REQUIRE_THROWS_AS(seasonal_naive(x, 0, 2), std::invalid_argument);
  }
  SECTION("period L_in on a periodic sine reproduces the next cycle") {
    const int l_in = 24;
    Tensor x({1, l_in});
    for (int t = 0; t < l_in; ++t) x.at(0, t) = std::sin(2.0 * std::numbers::pi * t / l_in);
    auto y = seasonal_naive(x, l_in, l_in);
    for (int t = 0; t < l_in; ++t) {
      const double expected = std::sin(2.0 * std::numbers::pi * (l_in + t) / l_in);
      REQUIRE(y.at(0, t) == Catch::Approx(expected).margin(1e-9));
    }
  }
  SECTION("output depends only on the last period steps") {
    Rng rng(4);
    Tensor x({1, 10});
    for (double& v : x.data) v = rng.uniform(-1.0, 1.0);
    Tensor x2 = x;
    for (int j = 0; j < 7; ++j) x2.at(0, j) += 100.0;  // perturb outside the last 3
    REQUIRE(seasonal_naive(x, 3, 6).data == seasonal_naive(x2, 3, 6).data);
  }
}

TEST_CASE("fit_linear") {
  SECTION("linear ramp is fit exactly in-sample with ridge 0") {
    auto ds = ramp_dataset(20);
    auto windows = make_windows(ds, 3, 2, 1);
    auto model = fit_linear(windows, 0.0);
    for (const auto& w : windows) {
      auto pred = predict(model, w.x);
      for (int t = 0; t < 2; ++t) REQUIRE(pred.at(0, t) == Catch::Approx(w.y.at(0, t)).margin(1e-6));
    }
  }
  SECTION("huge ridge drives weights to zero and predictions to the mean target") {
    Rng rng(13);
    TimeSeriesDataset ds;
    ds.channel_names = {"a", "b"};
    const int t = 60;
    ds.values = Tensor({t, 2});
    for (int i = 0; i < t; ++i) {
      ds.timestamps.push_back(3600ll * i);
      ds.values.at(i, 0) = rng.uniform(0.0, 4.0);
      ds.values.at(i, 1) = rng.uniform(-3.0, 3.0);
    }
    auto windows = make_windows(ds, 6, 3, 1);
    auto model = fit_linear(windows, 1e9);
    for (const auto& v : model.weight.data) REQUIRE(std::abs(v) < 1e-3);
    // mean target per step over all (instance, channel) samples
    std::vector<double> mean_y(3, 0.0);
    int samples = 0;
    for (const auto& w : windows) {
      for (int c = 0; c < 2; ++c) {
        for (int o = 0; o < 3; ++o) mean_y[o] += w.y.at(c, o);
        ++samples;
      }
    }
    for (double& v : mean_y) v /= samples;
    auto pred = predict(model, windows[0].x);
    for (int o = 0; o < 3; ++o) REQUIRE(pred.at(0, o) == Catch::Approx(mean_y[o]).margin(1e-3));
  }
  SECTION("a single window with small ridge yields finite weights") {
    auto ds = ramp_dataset(5);
    auto windows = make_windows(ds, 3, 2, 1);
    windows.resize(1);
    auto model = fit_linear(windows, 1e-3);
    REQUIRE(model.weight.all_finite());
    REQUIRE(model.bias.all_finite());
  }
}

TEST_CASE("load_external_forecasts") {
  auto ds = ramp_dataset(30);
  auto windows = make_windows(ds, 8, 4, 1);  // 19 instances
  std::vector<ForecastRecord> recs;
  for (const auto& w : windows) recs.push_back({w.id, seasonal_naive(w.x, 4, 4), "naive"});
  const std::string path = "backbones_fx.csv";

  SECTION("full coverage loads every instance") {
    write_forecasts(recs, path);
    auto loaded = load_external_forecasts(path, windows);
    REQUIRE(loaded.size() == windows.size());
    for (const auto& w : windows) {
      REQUIRE(loaded.at(w.id).ybar.data == recs[w.id].ybar.data);  // bitwise round trip
    }
    std::remove(path.c_str());
  }
  SECTION("a missing id is reported") {
    std::vector<ForecastRecord> partial;
    for (const auto& r : recs) {
      if (r.id != 7) partial.push_back(r);
    }
    write_forecasts(partial, path);
    REQUIRE_THROWS_WITH(load_external_forecasts(path, windows),
                        Catch::Matchers::ContainsSubstring("missing ids: [7]"));
    std::remove(path.c_str());
  }
  SECTION("a shape mismatch is reported") {
    std::vector<ForecastRecord> bad = recs;
    for (auto& r : bad) r.ybar = Tensor({1, 3}, {1.0, 2.0, 3.0});
    write_forecasts(bad, path);
    REQUIRE_THROWS_WITH(load_external_forecasts(path, windows),
                        Catch::Matchers::ContainsSubstring("shape"));
    std::remove(path.c_str());
  }
}
