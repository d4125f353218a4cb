#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <thread>
#include <vector>

#include "streamweave/cloud.hpp"

namespace sw = streamweave;
using sw::cloud::Aggregate;
using sw::cloud::Origin;
using sw::wire::WindowPayload;

namespace {

std::filesystem::path temp_log(const char* name) {
  auto p = std::filesystem::temp_directory_path() / ("streamweave_" + std::string(name) + "_" +
                                                     std::to_string(::getpid()) + ".log");
  std::filesystem::remove(p);
  return p;
}

WindowPayload two_stream_payload(std::uint64_t window_id) {
  WindowPayload p;
  p.window_id = window_id;
  p.streams.push_back({0, {5.0, 7.0}, std::nullopt});
  p.streams.push_back({1, {1.0}, sw::wire::ModelBlock{sw::models::ModelKind::Linear, {0, 1}, 0, 2}});
  return p;
}

}  // namespace

TEST(Impute, Examples) {
  WindowPayload plain;
  plain.streams.push_back({3, {1.5, 2.5}, std::nullopt});
  const auto w = sw::cloud::impute(plain);
  ASSERT_EQ(w.streams.size(), 1u);
  EXPECT_EQ(w.streams[0].values, (std::vector<sw::cloud::Value>{{1.5, Origin::Real}, {2.5, Origin::Real}}));

  WindowPayload mean;
  mean.streams.push_back({0, {1, 2, 3}, std::nullopt});
  mean.streams.push_back({1, {9}, sw::wire::ModelBlock{sw::models::ModelKind::MeanOnly, {4.0}, 0, 3}});
  const auto m = sw::cloud::impute(mean);
  EXPECT_EQ(m.streams[1].values.size(), 4u);
  EXPECT_EQ(m.streams[1].imputed_count(), 3u);
  for (std::size_t j = 1; j < 4; ++j) EXPECT_EQ(m.streams[1].values[j], (sw::cloud::Value{4.0, Origin::Imputed}));

  const auto lin = sw::cloud::impute(two_stream_payload(0));
  EXPECT_EQ(lin.streams[1].values[1].value, 5.0);
  EXPECT_EQ(lin.streams[1].values[2].value, 7.0);
  EXPECT_EQ(lin.streams[0].values[0].value, 5.0);
}

TEST(Impute, RejectsBadDirectives) {
  auto missing = two_stream_payload(0);
  missing.streams[1].model->predictor_id = 9;
  EXPECT_THROW((void)sw::cloud::impute(missing), sw::Error);
  auto too_many = two_stream_payload(0);
  too_many.streams[1].model->n_imputed = 3;
  try {
    (void)sw::cloud::impute(too_many);
    FAIL();
  } catch (const sw::Error& e) {
    EXPECT_EQ(e.code(), sw::Errc::MalformedPayload);
  }
}

TEST(Query, Examples) {
  sw::cloud::StreamValues s{0, {{1, Origin::Real}, {2, Origin::Real}, {3, Origin::Real}}};
  EXPECT_EQ(sw::cloud::aggregate(s, 0, Aggregate::Avg).value, 2.0);
  EXPECT_EQ(sw::cloud::aggregate(s, 0, Aggregate::Var).value, 1.0);
  EXPECT_EQ(sw::cloud::aggregate(s, 0, Aggregate::Min).value, 1.0);
  EXPECT_EQ(sw::cloud::aggregate(s, 0, Aggregate::Max).value, 3.0);

  sw::cloud::StreamValues c{0, {{4.5, Origin::Imputed}, {4.5, Origin::Imputed}, {4.5, Origin::Imputed}}};
  EXPECT_EQ(sw::cloud::aggregate(c, 0, Aggregate::Avg).value, 4.5);
  EXPECT_EQ(sw::cloud::aggregate(c, 0, Aggregate::Var).value, 0.0);
  EXPECT_EQ(sw::cloud::aggregate(c, 0, Aggregate::Var).imputed_count, 3u);

  sw::cloud::StreamValues one{0, {{1, Origin::Real}}};
  EXPECT_THROW((void)sw::cloud::aggregate(one, 0, Aggregate::Var), sw::Error);
  EXPECT_EQ(sw::cloud::aggregate(one, 0, Aggregate::Max).value, 1.0);
}

TEST(Query, MeanCopiesPreserveAverage) {
  for (std::uint32_t n = 1; n < 6; ++n) {
    WindowPayload p;
    p.streams.push_back({0, {1, 2, 3, 4, 5, 6}, std::nullopt});
    p.streams.push_back({1, {2, 4, 9}, sw::wire::ModelBlock{sw::models::ModelKind::MeanOnly, {5.0}, 0, n}});
    const auto w = sw::cloud::impute(p);
    EXPECT_DOUBLE_EQ(sw::cloud::aggregate(w.streams[1], 0, Aggregate::Avg).value, 5.0);
  }
}

TEST(PooledVariance, DropsBetweenGroupTerm) {
  const std::vector<double> a{1, 3}, b{11, 13};
  EXPECT_DOUBLE_EQ(sw::cloud::pooled_variance(a, b), 4.0 / 3.0);
  EXPECT_DOUBLE_EQ(sw::cloud::pooled_variance(a, {}), 2.0);
}

TEST(Store, RoundTripAndDuplicates) {
  sw::cloud::Store store;
  const auto w = sw::cloud::impute(two_stream_payload(4));
  store.store(w);
  EXPECT_EQ(store.query(1, 4, Aggregate::Avg).value, 13.0 / 3.0);
  EXPECT_EQ(store.values(0, 4)->values, w.streams[0].values);
  try {
    store.store(w);
    FAIL();
  } catch (const sw::Error& e) {
    EXPECT_EQ(e.code(), sw::Errc::DuplicateWindow);
  }
  try {
    (void)store.query(0, 5, Aggregate::Avg);
    FAIL();
  } catch (const sw::Error& e) {
    EXPECT_EQ(e.code(), sw::Errc::NotFound);
  }
  // same window id, different device
  WindowPayload other;
  other.window_id = 4;
  other.streams.push_back({2, {8, 9}, std::nullopt});
  store.store(sw::cloud::impute(other));
  EXPECT_EQ(store.query(2, 4, Aggregate::Max).value, 9.0);
  EXPECT_EQ(store.query(0, 4, Aggregate::Max).value, 7.0);
}

TEST(Store, ReloadReproducesAnswers) {
  const auto path = temp_log("reload");
  std::mt19937_64 rng(1);
  std::normal_distribution<double> d(30, 4);
  std::vector<sw::cloud::QueryResult> before;
  {
    sw::cloud::Store store(path);
    for (std::uint64_t w = 0; w < 20; ++w) {
      WindowPayload p;
      p.window_id = w;
      p.streams.push_back({0, {d(rng), d(rng), d(rng)}, std::nullopt});
      p.streams.push_back({1, {d(rng)}, sw::wire::ModelBlock{sw::models::ModelKind::Cubic, {1, 0.5, 0.01, 0.0001}, 0, 3}});
      store.store(sw::cloud::impute(p));
    }
    for (std::uint64_t w = 0; w < 20; ++w) {
      for (auto agg : sw::cloud::kAllAggregates) before.push_back(store.query(static_cast<std::uint32_t>(w % 2), w, agg));
    }
  }
  sw::cloud::Store reloaded(path);
  EXPECT_EQ(reloaded.size(), 40u);
  std::size_t i = 0;
  for (std::uint64_t w = 0; w < 20; ++w) {
    for (auto agg : sw::cloud::kAllAggregates) {
      const auto r = reloaded.query(static_cast<std::uint32_t>(w % 2), w, agg);
      EXPECT_EQ(r.value, before[i].value);
      EXPECT_EQ(r.imputed_count, before[i].imputed_count);
      ++i;
    }
  }
  std::filesystem::remove(path);
}

TEST(Store, TornTailIsDroppedAndCorruptionDetected) {
  const auto path = temp_log("torn");
  {
    sw::cloud::Store store(path);
    store.store(sw::cloud::impute(two_stream_payload(0)));
    store.store(sw::cloud::impute(two_stream_payload(1)));
  }
  const auto full = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, full - 3);
  {
    sw::cloud::Store store(path);
    EXPECT_EQ(store.size(), 2u);  // window 0 only, two devices
    EXPECT_THROW((void)store.query(0, 1, Aggregate::Avg), sw::Error);
    store.store(sw::cloud::impute(two_stream_payload(1)));
  }
  {
    sw::cloud::Store store(path);
    EXPECT_EQ(store.size(), 4u);
  }
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(10);
    f.put('\x55');
  }
  try {
    sw::cloud::Store store(path);
    FAIL();
  } catch (const sw::Error& e) {
    EXPECT_EQ(e.code(), sw::Errc::CorruptLog);
  }
  std::filesystem::remove(path);
}

TEST(Store, ConcurrentReaders) {
  sw::cloud::Store store;
  for (std::uint64_t w = 0; w < 50; ++w) store.store(sw::cloud::impute(two_stream_payload(w)));
  std::vector<std::thread> readers;
  std::atomic<int> bad{0};
  for (int t = 0; t < 4; ++t) {
    readers.emplace_back([&] {
      for (std::uint64_t w = 0; w < 50; ++w) {
        if (store.query(0, w, Aggregate::Avg).value != 6.0) ++bad;
      }
    });
  }
  for (std::uint64_t w = 50; w < 100; ++w) store.store(sw::cloud::impute(two_stream_payload(w)));
  for (auto& r : readers) r.join();
  EXPECT_EQ(bad.load(), 0);
  EXPECT_EQ(store.size(), 200u);
}

TEST(Csv, Row) {
  sw::cloud::QueryResult r{3, 9, Aggregate::Var, 0.5, 4, 1};
  EXPECT_EQ(sw::cloud::csv_row(r), "3,9,VAR,0.5,4,1");
}
