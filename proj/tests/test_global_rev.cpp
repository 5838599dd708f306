#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

#include "pir/dataio.hpp"
#include "pir/global_rev.hpp"
#include "pir/rng.hpp"

using namespace pir;

namespace {

std::vector<WindowInstance> random_windows(int count, int n, int l_in, int l_out,
                                           std::uint64_t seed) {
  Rng rng(seed);
  std::vector<WindowInstance> out;
  for (int id = 0; id < count; ++id) {
    WindowInstance w;
    w.id = id;
    w.origin = id + l_in;
    w.x = Tensor({n, l_in});
    w.y = Tensor({n, l_out});
    for (double& v : w.x.data) v = rng.normal(0.0, 1.0);
    for (double& v : w.y.data) v = rng.normal(0.0, 1.0);
    w.exo = Tensor({l_out, kCalendarFeatures});
    out.push_back(std::move(w));
  }
  return out;
}

// Exhaustive-scan oracle: cosine of mean-centered raw windows, full sort by
// (similarity desc, index asc). Completely independent of the database path.
struct OracleHit {
  int index;
  double sim;
};

std::vector<OracleHit> brute_force_topk(const std::vector<std::vector<double>>& raw_keys,
                                        const std::vector<double>& raw_query, int k,
                                        const std::vector<bool>* excluded = nullptr) {
  auto center = [](std::vector<double> v) {
    double m = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    for (double& x : v) x -= m;
    return v;
  };
  auto cq = center(raw_query);
  double qn = std::sqrt(std::inner_product(cq.begin(), cq.end(), cq.begin(), 0.0));
  std::vector<OracleHit> hits;
  for (std::size_t i = 0; i < raw_keys.size(); ++i) {
    if (excluded != nullptr && (*excluded)[i]) continue;
    auto ck = center(raw_keys[i]);
    double kn = std::sqrt(std::inner_product(ck.begin(), ck.end(), ck.begin(), 0.0));
    double dot = std::inner_product(ck.begin(), ck.end(), cq.begin(), 0.0);
    double sim = (qn < 1e-12 || kn < 1e-12) ? 0.0 : dot / (qn * kn);
    hits.push_back({static_cast<int>(i), sim});
  }
  std::sort(hits.begin(), hits.end(), [](const OracleHit& a, const OracleHit& b) {
    if (a.sim != b.sim) return a.sim > b.sim;
    return a.index < b.index;
  });
  hits.resize(k);
  return hits;
}

}  // namespace

TEST_CASE("encode_window") {
  SECTION("three-point window") {
    auto e = encode_window({1.0, 2.0, 3.0});
    REQUIRE(e[0] == Catch::Approx(-1.0 / std::sqrt(2.0)).margin(1e-12));
    REQUIRE(e[1] == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(e[2] == Catch::Approx(1.0 / std::sqrt(2.0)).margin(1e-12));
  }
  SECTION("constant window maps to the zero vector") {
    auto e = encode_window({5.0, 5.0, 5.0, 5.0});
    for (double v : e) REQUIRE(v == 0.0);
  }
  SECTION("affine invariance for positive scale") {
    Rng rng(2);
    std::vector<double> x(16);
    for (double& v : x) v = rng.normal(0.0, 3.0);
    std::vector<double> t(16);
    for (std::size_t i = 0; i < x.size(); ++i) t[i] = 2.5 * x[i] - 7.0;
    auto ex = encode_window(x);
    auto et = encode_window(t);
    for (std::size_t i = 0; i < x.size(); ++i) REQUIRE(et[i] == Catch::Approx(ex[i]).margin(1e-12));
  }
}

TEST_CASE("build_database") {
  auto train = random_windows(93, 7, 12, 4, 3);
  auto db = RetrievalDatabase::build(train);
  SECTION("one entry per (instance, channel)") {
    REQUIRE(db.entries() == 93 * 7);
    REQUIRE(db.key_len() == 12);
    REQUIRE(db.value_len() == 4);
  }
  SECTION("meta references only training instances") {
    for (int i = 0; i < db.entries(); ++i) {
      REQUIRE(db.meta(i).instance_id >= 0);
      REQUIRE(db.meta(i).instance_id < 93);
    }
  }
  SECTION("rebuild is bitwise identical") {
    auto db2 = RetrievalDatabase::build(train);
    REQUIRE(db2.fingerprint() == db.fingerprint());
    for (int i = 0; i < 5; ++i) {
      std::vector<double> q(train[i].x.data.begin(), train[i].x.data.begin() + 12);
      auto a = db.retrieve(q, 3);
      auto b = db2.retrieve(q, 3);
      REQUIRE(a.indices == b.indices);
      REQUIRE(a.similarities == b.similarities);
    }
  }
  SECTION("empty training set is rejected") {
    REQUIRE_THROWS_AS(RetrievalDatabase::build({}), std::invalid_argument);
  }
}

TEST_CASE("retrieve") {
  SECTION("identical window with exclusion off scores 1") {
    auto train = random_windows(20, 2, 8, 3, 7);
    auto db = RetrievalDatabase::build(train);
    std::vector<double> q(train[4].x.data.begin(), train[4].x.data.begin() + 8);  // channel 0
    auto r = db.retrieve(q, 1);
    REQUIRE(r.similarities[0] == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(db.meta(r.indices[0]).instance_id == 4);
    REQUIRE(db.meta(r.indices[0]).channel == 0);
    for (int j = 0; j < 3; ++j) REQUIRE(r.retrieved.at(0, j) == train[4].y.at(0, j));
  }
  SECTION("orthogonal query scores 0 against a single-entry database") {
    std::vector<WindowInstance> train(1);
    train[0].id = 0;
    train[0].origin = 3;
    train[0].x = Tensor({1, 3}, {1.0, 2.0, 3.0});
    train[0].y = Tensor({1, 2}, {9.0, 9.0});
    train[0].exo = Tensor({2, kCalendarFeatures});
    auto db = RetrievalDatabase::build(train);
    auto r = db.retrieve({1.0, -2.0, 1.0}, 1);
    REQUIRE(r.similarities[0] == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("k above the eligible count states the count") {
    auto train = random_windows(3, 1, 6, 2, 9);
    auto db = RetrievalDatabase::build(train);
    std::vector<double> q(6, 1.0);
    REQUIRE_THROWS_WITH(db.retrieve(q, 4), Catch::Matchers::ContainsSubstring("3 eligible"));
  }
  SECTION("1000-entry random database matches the exhaustive-scan oracle") {
    auto train = random_windows(500, 2, 16, 4, 11);
    auto db = RetrievalDatabase::build(train);  // 1000 entries
    REQUIRE(db.entries() == 1000);
    std::vector<std::vector<double>> raw_keys;
    for (const auto& w : train) {
      for (int c = 0; c < 2; ++c) {
        raw_keys.emplace_back(w.x.data.begin() + static_cast<std::size_t>(c) * 16,
                              w.x.data.begin() + static_cast<std::size_t>(c + 1) * 16);
      }
    }
    Rng rng(123);
    for (int trial = 0; trial < 25; ++trial) {
      std::vector<double> q(16);
      for (double& v : q) v = rng.normal(0.0, 1.0);
      const int k = 1 + rng.below(10);
      auto got = db.retrieve(q, k);
      auto want = brute_force_topk(raw_keys, q, k);
      for (int i = 0; i < k; ++i) {
        REQUIRE(got.indices[i] == want[i].index);
        REQUIRE(got.similarities[i] == Catch::Approx(want[i].sim).margin(1e-12));
      }
    }
  }
  SECTION("similarities are sorted descending and lie in [-1, 1]") {
    auto train = random_windows(50, 1, 10, 2, 13);
    auto db = RetrievalDatabase::build(train);
    std::vector<double> q(10);
    Rng rng(5);
    for (double& v : q) v = rng.normal(0.0, 1.0);
    auto r = db.retrieve(q, 20);
    for (std::size_t i = 0; i < r.similarities.size(); ++i) {
      REQUIRE(r.similarities[i] >= -1.0 - 1e-12);
      REQUIRE(r.similarities[i] <= 1.0 + 1e-12);
      if (i) REQUIRE(r.similarities[i] <= r.similarities[i - 1]);
    }
  }
  SECTION("self-exclusion removes the query's own and overlapping windows") {
    auto train = random_windows(40, 1, 8, 2, 17);
    auto db = RetrievalDatabase::build(train);
    for (int id = 0; id < 40; id += 7) {
      std::vector<double> q(train[id].x.data.begin(), train[id].x.data.end());
      ExclusionWindow ex{0, train[id].origin};
      auto r = db.retrieve(q, 5, &ex);
      for (int idx : r.indices) {
        REQUIRE(std::abs(db.meta(idx).origin - train[id].origin) >= 8 + 2);
      }
    }
  }
  SECTION("exclusion matches the oracle with the same mask") {
    auto train = random_windows(60, 1, 8, 2, 19);
    auto db = RetrievalDatabase::build(train);
    std::vector<std::vector<double>> raw_keys;
    for (const auto& w : train) raw_keys.emplace_back(w.x.data.begin(), w.x.data.end());
    const int id = 30;
    std::vector<double> q = raw_keys[id];
    ExclusionWindow ex{0, train[id].origin};
    std::vector<bool> mask(60, false);
    for (int i = 0; i < 60; ++i) {
      mask[i] = std::abs(train[i].origin - train[id].origin) < 8 + 2;
    }
    auto got = db.retrieve(q, 6, &ex);
    auto want = brute_force_topk(raw_keys, q, 6, &mask);
    for (int i = 0; i < 6; ++i) {
      REQUIRE(got.indices[i] == want[i].index);
      REQUIRE(got.similarities[i] == Catch::Approx(want[i].sim).margin(1e-12));
    }
  }
  SECTION("affine rescaling of the query changes nothing") {
    auto train = random_windows(30, 1, 12, 3, 23);
    auto db = RetrievalDatabase::build(train);
    Rng rng(6);
    std::vector<double> q(12);
    for (double& v : q) v = rng.normal(0.0, 1.0);
    std::vector<double> q2(12);
    for (std::size_t i = 0; i < q.size(); ++i) q2[i] = 3.7 * q[i] + 42.0;
    auto a = db.retrieve(q, 8);
    auto b = db.retrieve(q2, 8);
    REQUIRE(a.indices == b.indices);
    for (int i = 0; i < 8; ++i) {
      REQUIRE(a.similarities[i] == Catch::Approx(b.similarities[i]).margin(1e-12));
    }
  }
}

TEST_CASE("global_revise") {
  SECTION("a single retrieved target is returned as-is") {
    RetrievalResult r;
    r.indices = {3};
    r.similarities = {0.7};
    r.retrieved = Tensor({1, 4}, {1.0, -2.0, 0.5, 3.0});
    auto rev = global_revise(r);
    REQUIRE(rev.weights == std::vector<double>{1.0});
    REQUIRE(rev.y_global == std::vector<double>{1.0, -2.0, 0.5, 3.0});
  }
  SECTION("equal similarities give the plain mean") {
    RetrievalResult r;
    r.indices = {0, 1, 2};
    r.similarities = {0.4, 0.4, 0.4};
    r.retrieved = Tensor({3, 2}, {0.0, 3.0, 3.0, 3.0, 6.0, 3.0});
    auto rev = global_revise(r);
    for (double w : rev.weights) REQUIRE(w == Catch::Approx(1.0 / 3.0).margin(1e-15));
    REQUIRE(rev.y_global[0] == Catch::Approx(3.0).margin(1e-12));
    REQUIRE(rev.y_global[1] == Catch::Approx(3.0).margin(1e-12));
  }
  SECTION("random result matches an independent scalar loop within 1e-12") {
    Rng rng(31);
    RetrievalResult r;
    const int k = 7, len = 5;
    r.retrieved = Tensor({k, len});
    for (int i = 0; i < k; ++i) {
      r.indices.push_back(i);
      r.similarities.push_back(rng.uniform(-1.0, 1.0));
      for (int j = 0; j < len; ++j) r.retrieved.at(i, j) = rng.normal(0.0, 2.0);
    }
    std::sort(r.similarities.rbegin(), r.similarities.rend());
    auto rev = global_revise(r);
    // independent softmax + weighted sum
    double denom = 0.0;
    for (int i = 0; i < k; ++i) denom += std::exp(r.similarities[i]);
    for (int j = 0; j < len; ++j) {
      double want = 0.0;
      for (int i = 0; i < k; ++i) {
        want += std::exp(r.similarities[i]) / denom * r.retrieved.at(i, j);
      }
      REQUIRE(rev.y_global[j] == Catch::Approx(want).margin(1e-12));
    }
  }
  SECTION("weights form a probability vector and the sum stays in the hull") {
    Rng rng(37);
    for (int trial = 0; trial < 50; ++trial) {
      const int k = 1 + rng.below(12), len = 3;
      RetrievalResult r;
      r.retrieved = Tensor({k, len});
      for (int i = 0; i < k; ++i) {
        r.indices.push_back(i);
        r.similarities.push_back(rng.uniform(-1.0, 1.0));
        for (int j = 0; j < len; ++j) r.retrieved.at(i, j) = rng.normal(0.0, 1.0);
      }
      auto rev = global_revise(r);
      double sum = 0.0;
      for (double w : rev.weights) {
        REQUIRE(w >= 0.0);
        sum += w;
      }
      REQUIRE(std::abs(sum - 1.0) < 1e-9);
      for (int j = 0; j < len; ++j) {
        double lo = r.retrieved.at(0, j), hi = r.retrieved.at(0, j);
        for (int i = 1; i < k; ++i) {
          lo = std::min(lo, r.retrieved.at(i, j));
          hi = std::max(hi, r.retrieved.at(i, j));
        }
        REQUIRE(rev.y_global[j] >= lo - 1e-12);
        REQUIRE(rev.y_global[j] <= hi + 1e-12);
      }
    }
  }
}

TEST_CASE("database save/load round trip") {
  auto train = random_windows(25, 2, 10, 3, 41);
  auto db = RetrievalDatabase::build(train);
  const std::string dir = "global_rev_db_test";
  std::filesystem::create_directories(dir);
  db.save(dir);
  auto loaded = RetrievalDatabase::load(dir);
  REQUIRE(loaded.entries() == db.entries());
  REQUIRE(loaded.fingerprint() == db.fingerprint());
  std::vector<double> q(train[3].x.data.begin(), train[3].x.data.begin() + 10);
  auto a = db.retrieve(q, 4);
  auto b = loaded.retrieve(q, 4);
  REQUIRE(a.indices == b.indices);
  REQUIRE(a.similarities == b.similarities);
  std::filesystem::remove_all(dir);
}

TEST_CASE("instance granularity flattens channels") {
  auto train = random_windows(12, 3, 6, 2, 47);
  auto db = RetrievalDatabase::build(train, RetrievalGranularity::kInstance);
  REQUIRE(db.entries() == 12);
  REQUIRE(db.key_len() == 18);
  REQUIRE(db.value_len() == 6);
  std::vector<double> q(train[5].x.data.begin(), train[5].x.data.end());
  auto r = db.retrieve(q, 1);
  REQUIRE(db.meta(r.indices[0]).instance_id == 5);
  REQUIRE(r.similarities[0] == Catch::Approx(1.0).margin(1e-12));
}
