#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pir/tensor.hpp"

namespace pir {

// ---------------------------------------------------------------------------
// Calendar arithmetic (proleptic Gregorian, no timezone).
// ---------------------------------------------------------------------------

struct CivilTime {
  int year = 1970;
  int month = 1;
  int day = 1;
  int hour = 0;
  int minute = 0;
  int second = 0;
};

namespace detail {

// Howard Hinnant's civil-date algorithms.
inline std::int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2u) / 5u +
                       static_cast<unsigned>(d) - 1u;
  const unsigned doe = yoe * 365u + yoe / 4u - yoe / 100u + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

inline void civil_from_days(std::int64_t z, int& y, int& m, int& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t yy = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
  m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
  y = static_cast<int>(yy + (m <= 2));
}

inline bool is_leap(int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

inline int days_in_month(int y, int m) {
  static const int table[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  return m == 2 && is_leap(y) ? 29 : table[m - 1];
}

}  // namespace detail

inline std::int64_t epoch_from_civil(const CivilTime& c) {
  return detail::days_from_civil(c.year, c.month, c.day) * 86400 + c.hour * 3600 + c.minute * 60 +
         c.second;
}

inline CivilTime civil_from_epoch(std::int64_t t) {
  std::int64_t days = t / 86400;
  std::int64_t rem = t % 86400;
  if (rem < 0) {
    rem += 86400;
    days -= 1;
  }
  CivilTime c;
  detail::civil_from_days(days, c.year, c.month, c.day);
  c.hour = static_cast<int>(rem / 3600);
  c.minute = static_cast<int>((rem % 3600) / 60);
  c.second = static_cast<int>(rem % 60);
  return c;
}

/// Day of week with Monday = 0 .. Sunday = 6.
inline int day_of_week(std::int64_t t) {
  std::int64_t days = t / 86400;
  if (t % 86400 < 0) days -= 1;
  return static_cast<int>(((days + 3) % 7 + 7) % 7);
}

inline int day_of_year(std::int64_t t) {
  const CivilTime c = civil_from_epoch(t);
  return static_cast<int>(detail::days_from_civil(c.year, c.month, c.day) -
                          detail::days_from_civil(c.year, 1, 1)) +
         1;
}

/// Accepts `YYYY-MM-DD HH:MM:SS`, the ISO-8601 'T' separator, `YYYY-MM-DD HH:MM`,
/// and bare `YYYY-MM-DD`.
inline std::int64_t parse_timestamp(std::string s) {
  for (char& c : s) {
    if (c == 'T') c = ' ';
  }
  CivilTime c;
  const int got = std::sscanf(s.c_str(), "%d-%d-%d %d:%d:%d", &c.year, &c.month, &c.day, &c.hour,
                              &c.minute, &c.second);
  if (got != 3 && got != 5 && got != 6) {
    throw std::invalid_argument("unparsable timestamp '" + s + "'");
  }
  if (c.month < 1 || c.month > 12 || c.day < 1 || c.day > detail::days_in_month(c.year, c.month) ||
      c.hour < 0 || c.hour > 23 || c.minute < 0 || c.minute > 59 || c.second < 0 ||
      c.second > 59) {
    throw std::invalid_argument("invalid timestamp '" + s + "'");
  }
  return epoch_from_civil(c);
}

inline std::string format_timestamp(std::int64_t t) {
  const CivilTime c = civil_from_epoch(t);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d %02d:%02d:%02d", c.year, c.month, c.day, c.hour,
                c.minute, c.second);
  return buf;
}

// ---------------------------------------------------------------------------
// Dataset types
// ---------------------------------------------------------------------------

/// A T-by-N value matrix with equally spaced timestamps.
struct TimeSeriesDataset {
  std::vector<std::int64_t> timestamps;
  Tensor values;  // T x N
  std::vector<std::string> channel_names;

  int length() const { return static_cast<int>(timestamps.size()); }
  int channels() const { return static_cast<int>(channel_names.size()); }
};

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> std;
};

/// One forecasting instance. `x` and `y` are adjacent slices of the source
/// series; `exo` holds one calendar-feature row per target step; `origin` is
/// the time index of the first target step within the split.
struct WindowInstance {
  int id = 0;
  Tensor x;    // N x L_in
  Tensor y;    // N x L_out
  Tensor exo;  // L_out x F
  int origin = 0;
};

struct ForecastRecord {
  int id = 0;
  Tensor ybar;  // N x L_out
  std::string source;
};

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

struct CsvLayout {
  std::string time_column = "date";
};

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s, int line_no) {
  if (s.empty()) {
    throw std::runtime_error("row " + std::to_string(line_no) + ": missing cell");
  }
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') {
    throw std::runtime_error("row " + std::to_string(line_no) + ": unparsable number '" + s + "'");
  }
  return v;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

/// Loads a dataset CSV: header row, timestamp first column, one numeric
/// column per channel. Missing cells, unparsable values, and irregular
/// timestamp strides are ingestion errors naming the offending row.
inline TimeSeriesDataset load_csv(const std::string& path, const CsvLayout& layout = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
  auto header = detail::split_fields(line);
  if (header.size() < 2) throw std::runtime_error(path + ": need a timestamp and >= 1 channel");
  if (header[0] != layout.time_column) {
    throw std::runtime_error(path + ": first column must be named '" + layout.time_column +
                             "', got '" + header[0] + "'");
  }

  TimeSeriesDataset ds;
  ds.channel_names.assign(header.begin() + 1, header.end());
  const int n = ds.channels();
  std::vector<double> cells;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = detail::split_fields(line);
    if (static_cast<int>(fields.size()) != n + 1) {
      throw std::runtime_error("row " + std::to_string(line_no) + ": expected " +
                               std::to_string(n + 1) + " fields, got " +
                               std::to_string(fields.size()));
    }
    std::int64_t ts = 0;
    try {
      ts = parse_timestamp(fields[0]);
    } catch (const std::exception& e) {
      throw std::runtime_error("row " + std::to_string(line_no) + ": " + e.what());
    }
    ds.timestamps.push_back(ts);
    for (int c = 0; c < n; ++c) cells.push_back(detail::parse_double(fields[c + 1], line_no));
  }
  const int t = static_cast<int>(ds.timestamps.size());
  if (t < 1) throw std::runtime_error(path + ": no data rows");
  // constant stride check; report the first offending row
  if (t >= 2) {
    const std::int64_t stride = ds.timestamps[1] - ds.timestamps[0];
    if (stride <= 0) throw std::runtime_error("row 3: timestamps not strictly increasing");
    for (int i = 1; i + 1 < t; ++i) {
      if (ds.timestamps[i + 1] - ds.timestamps[i] != stride) {
        throw std::runtime_error("row " + std::to_string(i + 3) +
                                 ": irregular timestamp stride (expected " +
                                 std::to_string(stride) + "s)");
      }
    }
  }
  ds.values = Tensor({t, n}, std::move(cells));
  return ds;
}

inline void write_csv(const TimeSeriesDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "date";
  for (const auto& name : ds.channel_names) out << "," << name;
  out << "\n";
  for (int i = 0; i < ds.length(); ++i) {
    out << format_timestamp(ds.timestamps[i]);
    for (int c = 0; c < ds.channels(); ++c) {
      out << "," << detail::format_double(ds.values.at(i, c));
    }
    out << "\n";
  }
}

// ---------------------------------------------------------------------------
// Splitting and standardization
// ---------------------------------------------------------------------------

struct SplitRatios {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

/// Parses "7:1:2"-style ratio strings.
inline SplitRatios parse_ratios(const std::string& s) {
  SplitRatios r;
  if (std::sscanf(s.c_str(), "%lf:%lf:%lf", &r.train, &r.val, &r.test) != 3) {
    throw std::invalid_argument("bad split ratio string '" + s + "' (expected a:b:c)");
  }
  return r;
}

struct SplitDatasets {
  TimeSeriesDataset train;
  TimeSeriesDataset val;
  TimeSeriesDataset test;
};

namespace detail {
inline TimeSeriesDataset slice_dataset(const TimeSeriesDataset& ds, int begin, int end) {
  TimeSeriesDataset out;
  out.channel_names = ds.channel_names;
  out.timestamps.assign(ds.timestamps.begin() + begin, ds.timestamps.begin() + end);
  const int n = ds.channels();
  std::vector<double> cells(ds.values.data.begin() + static_cast<std::size_t>(begin) * n,
                            ds.values.data.begin() + static_cast<std::size_t>(end) * n);
  out.values = Tensor({end - begin, n}, std::move(cells));
  return out;
}
}  // namespace detail

/// Contiguous chronological split; boundary indices are floors of the
/// cumulative ratio times T. Every split must be nonempty.
inline SplitDatasets split_chronological(const TimeSeriesDataset& ds, const SplitRatios& ratios) {
  if (ratios.train <= 0.0 || ratios.val <= 0.0 || ratios.test <= 0.0) {
    throw std::invalid_argument("split ratios must all be positive");
  }
  const double total = ratios.train + ratios.val + ratios.test;
  const int t = ds.length();
  const int e0 = static_cast<int>(t * (ratios.train / total));
  const int e1 = static_cast<int>(t * ((ratios.train + ratios.val) / total));
  if (e0 < 1 || e1 <= e0 || e1 >= t) {
    throw std::invalid_argument("split produces an empty segment (T=" + std::to_string(t) + ")");
  }
  return {detail::slice_dataset(ds, 0, e0), detail::slice_dataset(ds, e0, e1),
          detail::slice_dataset(ds, e1, t)};
}

/// Per-channel (v - mean) / std with population std. When `stats` is null the
/// statistics are computed from this dataset. Channels with std below 1e-8
/// get std clamped to 1 and a warning.
inline std::pair<TimeSeriesDataset, ChannelStats> standardize(const TimeSeriesDataset& ds,
                                                              const ChannelStats* stats = nullptr) {
  const int t = ds.length(), n = ds.channels();
  ChannelStats st;
  if (stats != nullptr) {
    if (static_cast<int>(stats->mean.size()) != n) {
      throw std::invalid_argument("standardize: stats have " + std::to_string(stats->mean.size()) +
                                  " channels, dataset has " + std::to_string(n));
    }
    st = *stats;
  } else {
    st.mean.assign(n, 0.0);
    st.std.assign(n, 0.0);
    for (int c = 0; c < n; ++c) {
      double m = 0.0;
      for (int i = 0; i < t; ++i) m += ds.values.at(i, c);
      m /= t;
      double v = 0.0;
      for (int i = 0; i < t; ++i) v += (ds.values.at(i, c) - m) * (ds.values.at(i, c) - m);
      st.mean[c] = m;
      st.std[c] = std::sqrt(v / t);
      if (st.std[c] < 1e-8) {
        std::cerr << "warning: channel '" << ds.channel_names[c]
                  << "' has near-zero variance; std clamped to 1\n";
        st.std[c] = 1.0;
      }
    }
  }
  TimeSeriesDataset out = ds;
  for (int i = 0; i < t; ++i) {
    for (int c = 0; c < n; ++c) out.values.at(i, c) = (ds.values.at(i, c) - st.mean[c]) / st.std[c];
  }
  return {std::move(out), std::move(st)};
}

inline TimeSeriesDataset destandardize(const TimeSeriesDataset& ds, const ChannelStats& st) {
  TimeSeriesDataset out = ds;
  for (int i = 0; i < ds.length(); ++i) {
    for (int c = 0; c < ds.channels(); ++c) {
      out.values.at(i, c) = ds.values.at(i, c) * st.std[c] + st.mean[c];
    }
  }
  return out;
}

inline void save_stats(const ChannelStats& st, const std::vector<std::string>& channel_names,
                       const std::string& path) {
  nlohmann::json doc = nlohmann::json::object();
  for (std::size_t c = 0; c < channel_names.size(); ++c) {
    doc[channel_names[c]] = {{"mean", st.mean[c]}, {"std", st.std[c]}};
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << doc.dump(2) << "\n";
}

inline ChannelStats load_stats(const std::string& path,
                               const std::vector<std::string>& channel_names) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open stats file '" + path + "'");
  nlohmann::json doc;
  in >> doc;
  ChannelStats st;
  for (const auto& name : channel_names) {
    if (!doc.contains(name)) throw std::runtime_error("stats file missing channel '" + name + "'");
    st.mean.push_back(doc.at(name).at("mean").get<double>());
    st.std.push_back(doc.at(name).at("std").get<double>());
  }
  return st;
}

// ---------------------------------------------------------------------------
// Calendar exogenous features
// ---------------------------------------------------------------------------

inline constexpr int kCalendarFeatures = 5;

/// One row per timestamp: minute-of-hour, hour-of-day, day-of-week (Monday 0),
/// day-of-month, day-of-year, each scaled to [-0.5, 0.5] by value/(max-1)-0.5.
inline Tensor calendar_features(const std::vector<std::int64_t>& stamps) {
  Tensor out({static_cast<int>(stamps.size()), kCalendarFeatures});
  for (std::size_t i = 0; i < stamps.size(); ++i) {
    const CivilTime c = civil_from_epoch(stamps[i]);
    out.at(static_cast<int>(i), 0) = c.minute / 59.0 - 0.5;
    out.at(static_cast<int>(i), 1) = c.hour / 23.0 - 0.5;
    out.at(static_cast<int>(i), 2) = day_of_week(stamps[i]) / 6.0 - 0.5;
    out.at(static_cast<int>(i), 3) = (c.day - 1) / 30.0 - 0.5;
    out.at(static_cast<int>(i), 4) = (day_of_year(stamps[i]) - 1) / 365.0 - 0.5;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sliding windows
// ---------------------------------------------------------------------------

/// Cuts floor((T - L_in - L_out)/stride) + 1 instances with consecutive ids
/// starting at 0. Targets never cross the end of the dataset.
inline std::vector<WindowInstance> make_windows(const TimeSeriesDataset& ds, int l_in, int l_out,
                                                int stride = 1) {
  if (l_in < 1 || l_out < 1 || stride < 1) {
    throw std::invalid_argument("make_windows: l_in, l_out and stride must be positive");
  }
  const int t = ds.length(), n = ds.channels();
  if (t < l_in + l_out) {
    throw std::invalid_argument("make_windows: series length " + std::to_string(t) +
                                " is below the required minimum " + std::to_string(l_in + l_out));
  }
  const int count = (t - l_in - l_out) / stride + 1;
  std::vector<WindowInstance> out;
  out.reserve(count);
  for (int w = 0; w < count; ++w) {
    const int start = w * stride;
    WindowInstance inst;
    inst.id = w;
    inst.origin = start + l_in;
    inst.x = Tensor({n, l_in});
    inst.y = Tensor({n, l_out});
    for (int c = 0; c < n; ++c) {
      for (int j = 0; j < l_in; ++j) inst.x.at(c, j) = ds.values.at(start + j, c);
      for (int j = 0; j < l_out; ++j) inst.y.at(c, j) = ds.values.at(start + l_in + j, c);
    }
    std::vector<std::int64_t> horizon(ds.timestamps.begin() + inst.origin,
                                      ds.timestamps.begin() + inst.origin + l_out);
    inst.exo = calendar_features(horizon);
    out.push_back(std::move(inst));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forecast-exchange format: long CSV `instance_id,channel,step,value`
// ---------------------------------------------------------------------------

inline void write_forecasts(const std::vector<ForecastRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  if (!records.empty() && !records[0].source.empty()) {
    out << "# source=" << records[0].source << "\n";
  }
  out << "instance_id,channel,step,value\n";
  for (const auto& r : records) {
    for (int c = 0; c < r.ybar.rows(); ++c) {
      for (int s = 0; s < r.ybar.cols(); ++s) {
        out << r.id << "," << c << "," << s << "," << detail::format_double(r.ybar.at(c, s))
            << "\n";
      }
    }
  }
}

/// Reads a forecast-exchange file. Rows may arrive in any order; every
/// instance must form a complete channel-by-step rectangle.
inline std::vector<ForecastRecord> read_forecasts(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open forecast file '" + path + "'");
  std::string line;
  std::string source;
  int line_no = 0;
  bool header_seen = false;
  std::map<int, std::map<std::pair<int, int>, double>> by_id;
  int max_channel = -1, max_step = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find("source=");
      if (eq != std::string::npos) source = line.substr(eq + 7);
      continue;
    }
    if (!header_seen) {
      header_seen = true;
      continue;  // header row
    }
    const auto fields = detail::split_fields(line);
    if (fields.size() != 4) {
      throw std::runtime_error("row " + std::to_string(line_no) +
                               ": expected instance_id,channel,step,value");
    }
    const int id = static_cast<int>(detail::parse_double(fields[0], line_no));
    const int c = static_cast<int>(detail::parse_double(fields[1], line_no));
    const int s = static_cast<int>(detail::parse_double(fields[2], line_no));
    const double v = detail::parse_double(fields[3], line_no);
    auto& cell = by_id[id];
    if (!cell.emplace(std::make_pair(c, s), v).second) {
      throw std::runtime_error("row " + std::to_string(line_no) + ": duplicate cell (id=" +
                               std::to_string(id) + ",c=" + std::to_string(c) + ",s=" +
                               std::to_string(s) + ")");
    }
    max_channel = std::max(max_channel, c);
    max_step = std::max(max_step, s);
  }
  std::vector<ForecastRecord> out;
  out.reserve(by_id.size());
  for (auto& [id, cells] : by_id) {
    const int n = max_channel + 1, l = max_step + 1;
    if (static_cast<int>(cells.size()) != n * l) {
      throw std::runtime_error("forecast file '" + path + "': instance " + std::to_string(id) +
                               " has " + std::to_string(cells.size()) + " cells, expected " +
                               std::to_string(n * l));
    }
    ForecastRecord r;
    r.id = id;
    r.source = source;
    r.ybar = Tensor({n, l});
    for (const auto& [key, v] : cells) r.ybar.at(key.first, key.second) = v;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace pir
