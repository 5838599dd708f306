#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "pir/dataio.hpp"
#include "pir/rng.hpp"

using namespace pir;

namespace {

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

TimeSeriesDataset hourly_dataset(int t, int n, std::uint64_t seed) {
  TimeSeriesDataset ds;
  const std::int64_t start = parse_timestamp("2016-07-01 00:00:00");
  Rng rng(seed);
  for (int c = 0; c < n; ++c) ds.channel_names.push_back("ch" + std::to_string(c));
  ds.values = Tensor({t, n});
  for (int i = 0; i < t; ++i) {
    ds.timestamps.push_back(start + 3600ll * i);
    for (int c = 0; c < n; ++c) ds.values.at(i, c) = rng.uniform(-5.0, 5.0);
  }
  return ds;
}

}  // namespace

TEST_CASE("load_csv parses a small file") {
  const std::string path = "dataio_small.csv";
  write_file(path,
             "date,a,b\n"
             "2020-01-01 00:00:00,1.5,2\n"
             "2020-01-01 01:00:00,-0.25,4\n"
             "2020-01-01 02:00:00,3,6\n"
             "2020-01-01 03:00:00,4,8\n");
  auto ds = load_csv(path);
  REQUIRE(ds.length() == 4);
  REQUIRE(ds.channels() == 2);
  REQUIRE(ds.channel_names == std::vector<std::string>{"a", "b"});
  REQUIRE(ds.values.at(1, 0) == -0.25);
  REQUIRE(ds.values.at(3, 1) == 8.0);
  std::remove(path.c_str());
}

TEST_CASE("load_csv rejects a timestamp gap naming the row") {
  const std::string path = "dataio_gap.csv";
  write_file(path,
             "date,a\n"
             "2020-01-01 00:00:00,1\n"
             "2020-01-01 01:00:00,2\n"
             "2020-01-01 03:00:00,3\n");
  REQUIRE_THROWS_WITH(load_csv(path), Catch::Matchers::ContainsSubstring("row 4"));
  std::remove(path.c_str());
}

TEST_CASE("load_csv rejects missing cells and bad numbers") {
  const std::string path = "dataio_missing.csv";
  write_file(path,
             "date,a,b\n"
             "2020-01-01 00:00:00,1,\n");
  REQUIRE_THROWS_WITH(load_csv(path), Catch::Matchers::ContainsSubstring("row 2"));
  write_file(path,
             "date,a,b\n"
             "2020-01-01 00:00:00,1,x2\n");
  REQUIRE_THROWS_WITH(load_csv(path), Catch::Matchers::ContainsSubstring("row 2"));
  std::remove(path.c_str());
}

TEST_CASE("ETTh1-shaped file round-trips through load-write-load") {
  auto ds = hourly_dataset(240, 7, 5);
  const std::string p1 = "dataio_rt1.csv", p2 = "dataio_rt2.csv";
  write_csv(ds, p1);
  auto loaded = load_csv(p1);
  write_csv(loaded, p2);
  auto again = load_csv(p2);
  REQUIRE(loaded.timestamps == ds.timestamps);
  REQUIRE(loaded.values.data == ds.values.data);
  REQUIRE(again.values.data == loaded.values.data);
  REQUIRE(again.channel_names == ds.channel_names);
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("split_chronological") {
  SECTION("T=100 with 6:2:2") {
    auto ds = hourly_dataset(100, 1, 1);
    auto splits = split_chronological(ds, parse_ratios("6:2:2"));
    REQUIRE(splits.train.length() == 60);
    REQUIRE(splits.val.length() == 20);
    REQUIRE(splits.test.length() == 20);
  }
  SECTION("T=10 with 7:1:2") {
    auto ds = hourly_dataset(10, 1, 2);
    auto splits = split_chronological(ds, parse_ratios("7:1:2"));
    REQUIRE(splits.train.length() == 7);
    REQUIRE(splits.val.length() == 1);
    REQUIRE(splits.test.length() == 2);
  }
  SECTION("zero ratio is rejected") {
    auto ds = hourly_dataset(10, 1, 3);
    REQUIRE_THROWS_AS(split_chronological(ds, parse_ratios("1:0:0")), std::invalid_argument);
  }
  SECTION("segments are contiguous, ordered, and cover the series") {
    auto ds = hourly_dataset(97, 2, 4);
    auto splits = split_chronological(ds, parse_ratios("7:1:2"));
    REQUIRE(splits.train.length() + splits.val.length() + splits.test.length() == 97);
    REQUIRE(splits.train.timestamps.back() < splits.val.timestamps.front());
    REQUIRE(splits.val.timestamps.back() < splits.test.timestamps.front());
    REQUIRE(splits.train.timestamps.front() == ds.timestamps.front());
    REQUIRE(splits.test.timestamps.back() == ds.timestamps.back());
  }
}

TEST_CASE("standardize") {
  SECTION("three-point channel") {
    TimeSeriesDataset ds;
    ds.channel_names = {"a"};
    ds.timestamps = {0, 3600, 7200};
    ds.values = Tensor({3, 1}, {1.0, 2.0, 3.0});
    auto [out, st] = standardize(ds);
    REQUIRE(st.mean[0] == Catch::Approx(2.0));
    REQUIRE(st.std[0] == Catch::Approx(0.816496580927726).margin(1e-12));
    REQUIRE(out.values.at(0, 0) == Catch::Approx(-1.224744871391589).margin(1e-12));
    REQUIRE(out.values.at(1, 0) == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(out.values.at(2, 0) == Catch::Approx(1.224744871391589).margin(1e-12));
  }
  SECTION("constant channel clamps std and yields zeros") {
    TimeSeriesDataset ds;
    ds.channel_names = {"flat"};
    ds.timestamps = {0, 3600};
    ds.values = Tensor({2, 1}, {4.0, 4.0});
    auto [out, st] = standardize(ds);
    REQUIRE(st.std[0] == 1.0);
    REQUIRE(out.values.at(0, 0) == 0.0);
    REQUIRE(out.values.at(1, 0) == 0.0);
  }
  SECTION("train stats applied to a test split match a hand computation") {
    TimeSeriesDataset test;
    test.channel_names = {"a"};
    test.timestamps = {0, 3600, 7200, 10800, 14400};
    test.values = Tensor({5, 1}, {10.0, 20.0, 30.0, 40.0, 50.0});
    ChannelStats train_stats;
    train_stats.mean = {25.0};
    train_stats.std = {5.0};
    auto [out, st] = standardize(test, &train_stats);
    const double expected[5] = {-3.0, -1.0, 1.0, 3.0, 5.0};
    for (int i = 0; i < 5; ++i) REQUIRE(out.values.at(i, 0) == Catch::Approx(expected[i]));
  }
  SECTION("destandardize(standardize(x)) is the identity within 1e-9") {
    auto ds = hourly_dataset(50, 3, 9);
    auto [out, st] = standardize(ds);
    auto back = destandardize(out, st);
    for (std::size_t i = 0; i < ds.values.data.size(); ++i) {
      REQUIRE(back.values.data[i] == Catch::Approx(ds.values.data[i]).margin(1e-9));
    }
  }
}

TEST_CASE("stats sidecar round trip") {
  ChannelStats st{{1.5, -2.0}, {0.4, 3.25}};
  const std::vector<std::string> names = {"a", "b"};
  const std::string path = "dataio_stats.json";
  save_stats(st, names, path);
  auto loaded = load_stats(path, names);
  REQUIRE(loaded.mean == st.mean);
  REQUIRE(loaded.std == st.std);
  std::remove(path.c_str());
}

TEST_CASE("make_windows") {
  SECTION("count formula") {
    auto ds = hourly_dataset(200, 2, 6);
    auto w = make_windows(ds, 96, 12, 1);
    REQUIRE(w.size() == 93);
    REQUIRE(w.front().id == 0);
    REQUIRE(w.back().id == 92);
  }
  SECTION("too-short series errors with the minimum") {
    auto ds = hourly_dataset(100, 1, 7);
    REQUIRE_THROWS_WITH(make_windows(ds, 96, 12), Catch::Matchers::ContainsSubstring("108"));
  }
  SECTION("every window equals a direct slice of the source matrix") {
    auto ds = hourly_dataset(40, 3, 8);
    const int l_in = 8, l_out = 4;
    auto windows = make_windows(ds, l_in, l_out, 1);
    REQUIRE(windows.size() == static_cast<std::size_t>(40 - l_in - l_out + 1));
    for (const auto& w : windows) {
      const int start = w.origin - l_in;
      for (int c = 0; c < 3; ++c) {
        for (int j = 0; j < l_in; ++j) REQUIRE(w.x.at(c, j) == ds.values.at(start + j, c));
        for (int j = 0; j < l_out; ++j) REQUIRE(w.y.at(c, j) == ds.values.at(start + l_in + j, c));
      }
      REQUIRE(w.exo.rows() == l_out);
      REQUIRE(w.exo.cols() == kCalendarFeatures);
    }
  }
  SECTION("stride 2 count") {
    auto ds = hourly_dataset(30, 1, 10);
    auto w = make_windows(ds, 8, 4, 2);
    REQUIRE(w.size() == static_cast<std::size_t>((30 - 12) / 2 + 1));
  }
}

TEST_CASE("calendar_features") {
  SECTION("hour scaling") {
    const std::int64_t noon = parse_timestamp("2020-06-15 12:00:00");
    auto f = calendar_features({noon});
    REQUIRE(f.at(0, 1) == Catch::Approx(12.0 / 23.0 - 0.5).margin(1e-12));
  }
  SECTION("midnight Monday January 1st hits the lower corner") {
    const std::int64_t t = parse_timestamp("2024-01-01 00:00:00");  // a Monday
    REQUIRE(day_of_week(t) == 0);
    auto f = calendar_features({t});
    for (int j = 0; j < kCalendarFeatures; ++j) REQUIRE(f.at(0, j) == Catch::Approx(-0.5));
  }
  SECTION("hour column strictly increases until wraparound") {
    std::vector<std::int64_t> stamps;
    const std::int64_t start = parse_timestamp("2021-03-05 00:00:00");
    for (int i = 0; i < 24; ++i) stamps.push_back(start + 3600ll * i);
    auto f = calendar_features(stamps);
    for (int i = 1; i < 24; ++i) REQUIRE(f.at(i, 1) > f.at(i - 1, 1));
    auto wrapped = calendar_features({start + 24ll * 3600});
    REQUIRE(wrapped.at(0, 1) == Catch::Approx(-0.5));
  }
  SECTION("all features lie in [-0.5, 0.5]") {
    std::vector<std::int64_t> stamps;
    const std::int64_t start = parse_timestamp("2019-12-28 22:45:00");
    for (int i = 0; i < 500; ++i) stamps.push_back(start + 900ll * i);
    auto f = calendar_features(stamps);
    for (double v : f.data) {
      REQUIRE(v >= -0.5);
      REQUIRE(v <= 0.5);
    }
  }
}

TEST_CASE("forecast exchange format") {
  SECTION("two instances with N=1, L_out=2 produce four data rows") {
    std::vector<ForecastRecord> recs;
    recs.push_back({0, Tensor({1, 2}, {1.0, 2.0}), "unit"});
    recs.push_back({1, Tensor({1, 2}, {3.0, 4.0}), "unit"});
    const std::string path = "dataio_fx1.csv";
    write_forecasts(recs, path);
    std::ifstream in(path);
    std::string line;
    int data_rows = 0;
    bool header = false;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      if (!header) {
        REQUIRE(line == "instance_id,channel,step,value");
        header = true;
        continue;
      }
      ++data_rows;
    }
    REQUIRE(data_rows == 4);
    std::remove(path.c_str());
  }
  SECTION("read(write(r)) == r exactly") {
    Rng rng(77);
    std::vector<ForecastRecord> recs;
    for (int id = 0; id < 5; ++id) {
      Tensor ybar({3, 4});
      for (double& v : ybar.data) v = rng.normal(0.0, 2.5);
      recs.push_back({id, ybar, "rt"});
    }
    const std::string path = "dataio_fx2.csv";
    write_forecasts(recs, path);
    auto loaded = read_forecasts(path);
    REQUIRE(loaded.size() == recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
      REQUIRE(loaded[i].id == recs[i].id);
      REQUIRE(loaded[i].source == "rt");
      REQUIRE(loaded[i].ybar.data == recs[i].ybar.data);
    }
    std::remove(path.c_str());
  }
  SECTION("rows out of order still assemble") {
    const std::string path = "dataio_fx3.csv";
    write_file(path,
               "instance_id,channel,step,value\n"
               "1,0,1,4\n"
               "0,0,0,1\n"
               "1,0,0,3\n"
               "0,0,1,2\n");
    auto loaded = read_forecasts(path);
    REQUIRE(loaded.size() == 2);
    REQUIRE(loaded[0].ybar.data == std::vector<double>{1.0, 2.0});
    REQUIRE(loaded[1].ybar.data == std::vector<double>{3.0, 4.0});
    std::remove(path.c_str());
  }
  SECTION("incomplete instance is rejected") {
    const std::string path = "dataio_fx4.csv";
    write_file(path,
               "instance_id,channel,step,value\n"
               "0,0,0,1\n"
               "0,0,1,2\n"
               "1,0,0,3\n");
    REQUIRE_THROWS_WITH(read_forecasts(path), Catch::Matchers::ContainsSubstring("instance 1"));
    std::remove(path.c_str());
  }
}
