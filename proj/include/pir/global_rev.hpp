#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pir/dataio.hpp"
#include "pir/tensor.hpp"

namespace pir {

inline constexpr const char* kDatabaseVersion = "pir-db-1";

/// Instance normalization: subtract the window mean, divide by the population
/// std (clamped below at 1e-8), then scale to unit L2 norm so that cosine
/// similarity becomes a plain inner product. Constant windows map to the zero
/// vector.
inline std::vector<double> encode_window(const double* w, int len) {
  double mean = 0.0;
  for (int i = 0; i < len; ++i) mean += w[i];
  mean /= len;
  double var = 0.0;
  for (int i = 0; i < len; ++i) var += (w[i] - mean) * (w[i] - mean);
  const double sd = std::max(std::sqrt(var / len), 1e-8);
  std::vector<double> out(len);
  double norm_sq = 0.0;
  for (int i = 0; i < len; ++i) {
    out[i] = (w[i] - mean) / sd;
    norm_sq += out[i] * out[i];
  }
  const double norm = std::sqrt(norm_sq);
  if (norm < 1e-12) {
    std::fill(out.begin(), out.end(), 0.0);
    return out;
  }
  for (double& v : out) v /= norm;
  return out;
}

inline std::vector<double> encode_window(const std::vector<double>& w) {
  if (w.size() < 2) throw std::invalid_argument("encode_window: need at least 2 samples");
  return encode_window(w.data(), static_cast<int>(w.size()));
}

enum class RetrievalGranularity { kChannel, kInstance };

inline std::string to_string(RetrievalGranularity g) {
  return g == RetrievalGranularity::kChannel ? "channel" : "instance";
}

inline RetrievalGranularity granularity_from_string(const std::string& s) {
  if (s == "channel") return RetrievalGranularity::kChannel;
  if (s == "instance") return RetrievalGranularity::kInstance;
  throw std::invalid_argument("unknown retrieval granularity '" + s + "'");
}

struct RetrievalEntryMeta {
  int instance_id = 0;
  int channel = 0;
  int origin = 0;
};

struct RetrievalResult {
  std::vector<int> indices;          // database rows, by descending similarity
  std::vector<double> similarities;  // cosine values in [-1, 1]
  Tensor retrieved;                  // K x value_len target windows
};

/// Identifies the query's own source region so training queries never
/// retrieve overlapping windows of the same channel.
struct ExclusionWindow {
  int channel = 0;
  int origin = 0;
};

/// Exact top-K retrieval over instance-normalized training windows.
/// Immutable after build; concurrent retrieval is safe.
class RetrievalDatabase {
 public:
  static RetrievalDatabase build(const std::vector<WindowInstance>& train,
                                 RetrievalGranularity granularity = RetrievalGranularity::kChannel) {
    if (train.empty()) throw std::invalid_argument("retrieval database: empty training set");
    RetrievalDatabase db;
    db.granularity_ = granularity;
    const int n = train[0].x.rows();
    db.l_in_ = train[0].x.cols();
    db.l_out_ = train[0].y.cols();
    if (granularity == RetrievalGranularity::kChannel) {
      db.key_len_ = db.l_in_;
      db.value_len_ = db.l_out_;
      for (const auto& w : train) {
        for (int c = 0; c < n; ++c) {
          auto key = encode_window(&w.x.data[static_cast<std::size_t>(c) * db.l_in_], db.l_in_);
          db.keys_.insert(db.keys_.end(), key.begin(), key.end());
          db.values_.insert(db.values_.end(),
                            w.y.data.begin() + static_cast<std::size_t>(c) * db.l_out_,
                            w.y.data.begin() + static_cast<std::size_t>(c + 1) * db.l_out_);
          db.meta_.push_back({w.id, c, w.origin});
        }
      }
    } else {
      db.key_len_ = n * db.l_in_;
      db.value_len_ = n * db.l_out_;
      for (const auto& w : train) {
        auto key = encode_window(w.x.data.data(), db.key_len_);
        db.keys_.insert(db.keys_.end(), key.begin(), key.end());
        db.values_.insert(db.values_.end(), w.y.data.begin(), w.y.data.end());
        db.meta_.push_back({w.id, -1, w.origin});
      }
    }
    return db;
  }

  int entries() const { return static_cast<int>(meta_.size()); }
  int key_len() const { return key_len_; }
  int value_len() const { return value_len_; }
  int l_in() const { return l_in_; }
  int l_out() const { return l_out_; }
  RetrievalGranularity granularity() const { return granularity_; }
  const RetrievalEntryMeta& meta(int i) const { return meta_[i]; }

  bool excluded(int entry, const ExclusionWindow& ex) const {
    const RetrievalEntryMeta& m = meta_[entry];
    if (granularity_ == RetrievalGranularity::kChannel && m.channel != ex.channel) return false;
    return std::abs(m.origin - ex.origin) < l_in_ + l_out_;
  }

  /// Exact top-k by cosine similarity, descending, ties broken by lower
  /// database index. `raw_query` is an un-normalized window of key length.
  RetrievalResult retrieve(const std::vector<double>& raw_query, int k,
                           const ExclusionWindow* exclude = nullptr) const {
    if (static_cast<int>(raw_query.size()) != key_len_) {
      throw std::invalid_argument("retrieve: query length " + std::to_string(raw_query.size()) +
                                  " does not match key length " + std::to_string(key_len_));
    }
    const std::vector<double> q = encode_window(raw_query.data(), key_len_);

    std::vector<int> eligible;
    eligible.reserve(meta_.size());
    for (int i = 0; i < entries(); ++i) {
      if (exclude != nullptr && excluded(i, *exclude)) continue;
      eligible.push_back(i);
    }
    if (k < 1 || k > static_cast<int>(eligible.size())) {
      throw std::invalid_argument("retrieve: k=" + std::to_string(k) + " but only " +
                                  std::to_string(eligible.size()) + " eligible entries");
    }

    std::vector<double> sims(eligible.size());
    for (std::size_t e = 0; e < eligible.size(); ++e) {
      const double* key = &keys_[static_cast<std::size_t>(eligible[e]) * key_len_];
      double s = 0.0;
      for (int j = 0; j < key_len_; ++j) s += key[j] * q[j];
      sims[e] = s;
    }
    std::vector<int> order(eligible.size());
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
      if (sims[a] != sims[b]) return sims[a] > sims[b];
      return eligible[a] < eligible[b];
    });

    RetrievalResult out;
    out.indices.reserve(k);
    out.similarities.reserve(k);
    out.retrieved = Tensor({k, value_len_});
    for (int r = 0; r < k; ++r) {
      const int row = eligible[order[r]];
      out.indices.push_back(row);
      out.similarities.push_back(sims[order[r]]);
      std::copy(values_.begin() + static_cast<std::size_t>(row) * value_len_,
                values_.begin() + static_cast<std::size_t>(row + 1) * value_len_,
                &out.retrieved.at(r, 0));
    }
    return out;
  }

  std::uint64_t fingerprint() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix_bytes = [&h](const void* p, std::size_t n) {
      const unsigned char* b = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 1099511628211ull;
      }
    };
    const int g = granularity_ == RetrievalGranularity::kChannel ? 0 : 1;
    mix_bytes(&g, sizeof(g));
    mix_bytes(&l_in_, sizeof(l_in_));
    mix_bytes(&l_out_, sizeof(l_out_));
    if (!keys_.empty()) mix_bytes(keys_.data(), keys_.size() * sizeof(double));
    if (!values_.empty()) mix_bytes(values_.data(), values_.size() * sizeof(double));
    for (const auto& m : meta_) mix_bytes(&m, sizeof(m));
    return h;
  }

  void save(const std::string& dir) const {
    auto write_matrix = [](const std::string& path, const std::vector<double>& data, int cols) {
      std::ofstream out(path);
      if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
      const int rows = cols == 0 ? 0 : static_cast<int>(data.size()) / cols;
      for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
          if (j) out << ",";
          out << detail::format_double(data[static_cast<std::size_t>(i) * cols + j]);
        }
        out << "\n";
      }
    };
    write_matrix(dir + "/keys.csv", keys_, key_len_);
    write_matrix(dir + "/values.csv", values_, value_len_);
    nlohmann::json meta;
    meta["version"] = kDatabaseVersion;
    meta["granularity"] = to_string(granularity_);
    meta["l_in"] = l_in_;
    meta["l_out"] = l_out_;
    meta["key_len"] = key_len_;
    meta["value_len"] = value_len_;
    auto entries = nlohmann::json::array();
    for (const auto& m : meta_) entries.push_back({m.instance_id, m.channel, m.origin});
    meta["entries"] = std::move(entries);
    std::ofstream out(dir + "/meta.json");
    if (!out) throw std::runtime_error("cannot open '" + dir + "/meta.json' for writing");
    out << meta.dump(2) << "\n";
  }

  static RetrievalDatabase load(const std::string& dir) {
    std::ifstream meta_in(dir + "/meta.json");
    if (!meta_in) throw std::runtime_error("cannot open '" + dir + "/meta.json'");
    nlohmann::json meta;
    meta_in >> meta;
    if (meta.value("version", "") != kDatabaseVersion) {
      throw std::runtime_error("database at '" + dir + "' has unsupported version");
    }
    RetrievalDatabase db;
    db.granularity_ = granularity_from_string(meta.at("granularity").get<std::string>());
    db.l_in_ = meta.at("l_in").get<int>();
    db.l_out_ = meta.at("l_out").get<int>();
    db.key_len_ = meta.at("key_len").get<int>();
    db.value_len_ = meta.at("value_len").get<int>();
    for (const auto& e : meta.at("entries")) {
      db.meta_.push_back({e.at(0).get<int>(), e.at(1).get<int>(), e.at(2).get<int>()});
    }
    auto read_matrix = [](const std::string& path, int cols, std::vector<double>& out) {
      std::ifstream in(path);
      if (!in) throw std::runtime_error("cannot open '" + path + "'");
      std::string line;
      int line_no = 0;
      while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = detail::split_fields(line);
        if (static_cast<int>(fields.size()) != cols) {
          throw std::runtime_error(path + ": row " + std::to_string(line_no) + " has " +
                                   std::to_string(fields.size()) + " fields, expected " +
                                   std::to_string(cols));
        }
        for (const auto& f : fields) out.push_back(detail::parse_double(f, line_no));
      }
    };
    read_matrix(dir + "/keys.csv", db.key_len_, db.keys_);
    read_matrix(dir + "/values.csv", db.value_len_, db.values_);
    if (db.keys_.size() != db.meta_.size() * static_cast<std::size_t>(db.key_len_) ||
        db.values_.size() != db.meta_.size() * static_cast<std::size_t>(db.value_len_)) {
      throw std::runtime_error("database at '" + dir + "': keys/values do not match meta");
    }
    return db;
  }

 private:
  RetrievalGranularity granularity_ = RetrievalGranularity::kChannel;
  int l_in_ = 0, l_out_ = 0;
  int key_len_ = 0, value_len_ = 0;
  std::vector<double> keys_;    // entries x key_len, unit-norm rows
  std::vector<double> values_;  // entries x value_len, standardized space
  std::vector<RetrievalEntryMeta> meta_;
};

struct GlobalRevision {
  std::vector<double> weights;   // softmax of similarities, sums to 1
  std::vector<double> y_global;  // convex combination of retrieved targets
};

/// p = softmax(similarities / temperature); y_global = sum_k p_k retrieved_k.
inline GlobalRevision global_revise(const RetrievalResult& result, double temperature = 1.0) {
  const int k = static_cast<int>(result.similarities.size());
  if (k < 1) throw std::invalid_argument("global_revise: empty retrieval result");
  if (temperature <= 0.0) throw std::invalid_argument("global_revise: temperature must be > 0");
  GlobalRevision out;
  out.weights.resize(k);
  double mx = result.similarities[0];
  for (double s : result.similarities) mx = std::max(mx, s);
  double sum = 0.0;
  for (int i = 0; i < k; ++i) {
    out.weights[i] = std::exp((result.similarities[i] - mx) / temperature);
    sum += out.weights[i];
  }
  for (double& w : out.weights) w /= sum;
  const int len = result.retrieved.cols();
  out.y_global.assign(len, 0.0);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < len; ++j) out.y_global[j] += out.weights[i] * result.retrieved.at(i, j);
  }
  return out;
}

}  // namespace pir
