#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "streamweave/stats.hpp"

namespace sw = streamweave;
using sw::stats::compute_stats;

namespace {

std::vector<double> normal_draws(std::size_t n, double mean, double sd, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(mean, sd);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

std::vector<double> ar1(std::size_t n, double phi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(n);
  double prev = d(rng);
  for (auto& x : v) {
    prev = phi * prev + d(rng);
    x = prev;
  }
  return v;
}

template <typename F>
sw::Errc error_of(F&& f) {
  try {
    f();
  } catch (const sw::Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return sw::Errc::IoError;
}

}  // namespace

TEST(ComputeStats, ConstantStream) {
  const std::vector<double> v{1, 1, 1, 1};
  const auto s = compute_stats(v);
  EXPECT_EQ(s.count, 4u);
  EXPECT_DOUBLE_EQ(s.mean, 1.0);
  EXPECT_DOUBLE_EQ(s.variance, 0.0);
  EXPECT_DOUBLE_EQ(s.fourth_central_moment, 0.0);
}

TEST(ComputeStats, TwoPoints) {
  const std::vector<double> v{0, 2};
  const auto s = compute_stats(v);
  EXPECT_DOUBLE_EQ(s.mean, 1.0);
  EXPECT_DOUBLE_EQ(s.variance, 2.0);
  EXPECT_DOUBLE_EQ(s.fourth_central_moment, 1.0);
  EXPECT_DOUBLE_EQ(s.min, 0.0);
  EXPECT_DOUBLE_EQ(s.max, 2.0);
}

TEST(ComputeStats, MonteCarloGaussian) {
  const auto v = normal_draws(1'000'000, 30.0, 4.0, 7);
  const auto s = compute_stats(v);
  EXPECT_NEAR(s.mean, 30.0, 0.02);
  EXPECT_NEAR(s.variance, 16.0, 0.1);
}

TEST(ComputeStats, Errors) {
  EXPECT_EQ(error_of([] { (void)compute_stats(std::vector<double>{}); }), sw::Errc::EmptyWindow);
  const auto s = compute_stats(std::vector<double>{3.0});
  EXPECT_EQ(error_of([&] { (void)s.require_variance(); }), sw::Errc::InsufficientSamples);
  EXPECT_EQ(error_of([&] { (void)sw::stats::variance_of_variance(s); }), sw::Errc::InsufficientSamples);
}

TEST(ComputeStats, PermutationInvariant) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    auto v = normal_draws(1 + trial * 3, 5.0, 2.0, 100 + trial);
    const auto a = compute_stats(v);
    std::shuffle(v.begin(), v.end(), rng);
    const auto b = compute_stats(v);
    EXPECT_NEAR(a.mean, b.mean, 1e-12 * (1 + std::abs(a.mean)));
    EXPECT_NEAR(a.variance, b.variance, 1e-10 * (1 + a.variance));
    EXPECT_NEAR(a.fourth_central_moment, b.fourth_central_moment, 1e-10 * (1 + a.fourth_central_moment));
    EXPECT_EQ(a.min, b.min);
    EXPECT_EQ(a.max, b.max);
  }
}

TEST(Pearson, Examples) {
  const std::vector<double> x{1, 2, 3};
  const std::vector<double> rev{3, 2, 1};
  EXPECT_DOUBLE_EQ(sw::stats::pearson(x, x), 1.0);
  EXPECT_DOUBLE_EQ(sw::stats::pearson(x, rev), -1.0);
  // numpy.corrcoef: 0.9843740386976972
  EXPECT_NEAR(sw::stats::pearson(std::vector<double>{1, 2, 3, 4}, std::vector<double>{1, 4, 9, 16}), 0.9844, 1e-3);
  EXPECT_EQ(error_of([] { (void)sw::stats::pearson(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}); }),
            sw::Errc::UndefinedCorrelation);
}

TEST(Spearman, Examples) {
  EXPECT_DOUBLE_EQ(sw::stats::spearman(std::vector<double>{1, 2, 3, 4}, std::vector<double>{1, 4, 9, 16}), 1.0);
  EXPECT_DOUBLE_EQ(sw::stats::spearman(std::vector<double>{1, 2, 3}, std::vector<double>{6, 5, 4}), -1.0);
  const std::vector<double> x{1, 2, 3, 3};
  const std::vector<double> y{1, 2, 3, 4};
  const std::vector<double> rx{1, 2, 3.5, 3.5};  // average ranks by hand
  const std::vector<double> ry{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(sw::stats::spearman(x, y), sw::stats::pearson(rx, ry));
  // scipy.stats.spearmanr: 0.9486832980505139
  EXPECT_NEAR(sw::stats::spearman(x, y), 0.9486832980505139, 1e-12);
  EXPECT_EQ(error_of([] { (void)sw::stats::spearman(std::vector<double>{2, 2}, std::vector<double>{1, 2}); }),
            sw::Errc::UndefinedCorrelation);
}

TEST(Correlation, BoundedAndRankIdentity) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> len(2, 40);
  std::uniform_int_distribution<int> small(0, 4);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = len(rng);
    std::vector<double> x(n), y(n);
    for (int i = 0; i < n; ++i) {
      x[i] = small(rng) * 1.5;  // plenty of ties
      y[i] = x[i] * 0.3 + small(rng);
    }
    try {
      const double p = sw::stats::pearson(x, y);
      EXPECT_LE(std::abs(p), 1.0 + 1e-12);
    } catch (const sw::Error&) {
    }
    try {
      const double s = sw::stats::spearman(x, y);
      EXPECT_LE(std::abs(s), 1.0 + 1e-12);
      EXPECT_EQ(s, sw::stats::pearson(sw::stats::ranks(x), sw::stats::ranks(y)));
    } catch (const sw::Error&) {
    }
  }
}

TEST(VarianceOfVariance, GaussianExactMoments) {
  sw::stats::StreamStats s;
  s.count = 11;
  s.variance = 1.0;
  s.fourth_central_moment = 3.0;
  EXPECT_NEAR(sw::stats::variance_of_variance(s), 0.2, 1e-15);
  EXPECT_NEAR(sw::stats::variance_of_variance(s), 2.0 / 10.0, 1e-15);  // 2 sigma^4 / (N - 1)
}

TEST(VarianceOfVariance, ConstantAndClamped) {
  EXPECT_EQ(sw::stats::variance_of_variance(compute_stats(std::vector<double>{4, 4, 4})), 0.0);
  sw::stats::StreamStats s;
  s.count = 10;
  s.variance = 2.0;
  s.fourth_central_moment = 0.1;  // too small: raw formula is negative
  EXPECT_EQ(sw::stats::variance_of_variance(s), 0.0);
}

TEST(VarianceOfVariance, MonteCarlo) {
  // 1e5 windows of 100 draws from N(30, 16).
  std::mt19937_64 rng(99);
  std::normal_distribution<double> d(30.0, 4.0);
  constexpr int windows = 100000;
  std::vector<double> w(100);
  double sum = 0.0, sum2 = 0.0, sum4 = 0.0;
  std::vector<double> vars(windows);
  for (int t = 0; t < windows; ++t) {
    for (auto& x : w) x = d(rng);
    const auto s = compute_stats(w);
    vars[t] = s.variance;
    sum += s.variance;
  }
  const double mean = sum / windows;
  for (double v : vars) {
    sum2 += (v - mean) * (v - mean);
    sum4 += std::pow(v - mean, 4);
  }
  const double emp = sum2 / (windows - 1);
  // standard error of a sample variance: sqrt((m4 - var^2 (n-3)/(n-1)) / n)
  const double m4 = sum4 / windows;
  const double se = std::sqrt((m4 - emp * emp * (windows - 3.0) / (windows - 1.0)) / windows);
  sw::stats::StreamStats exact;
  exact.count = 100;
  exact.variance = 16.0;
  exact.fourth_central_moment = 3.0 * 256.0;
  const double formula = sw::stats::variance_of_variance(exact);
  EXPECT_NEAR(emp, formula, 3.0 * se);
}

TEST(Autocovariance, Examples) {
  EXPECT_EQ(sw::stats::autocovariance(std::vector<double>(20, 3.0), 4), 0.0);
  std::vector<double> alt(100);
  for (std::size_t i = 0; i < alt.size(); ++i) alt[i] = i % 2 == 0 ? 1.0 : -1.0;
  EXPECT_NEAR(sw::stats::autocovariance(alt, 1), -1.0, 0.05);
  EXPECT_NEAR(sw::stats::autocovariance(normal_draws(10000, 0, 1, 3), 1), 0.0, 0.05);
  EXPECT_EQ(error_of([] { (void)sw::stats::autocovariance(std::vector<double>{1, 2, 3}, 3); }), sw::Errc::InvalidLag);
}

TEST(Pacf, WhiteNoise) {
  const auto v = normal_draws(4000, 0, 1, 21);
  const auto p = sw::stats::pacf(v, 10);
  ASSERT_EQ(p.size(), 10u);
  const double band = 2.0 / std::sqrt(4000.0);
  int outside = 0;
  for (double x : p) outside += std::abs(x) > band;
  EXPECT_LE(outside, 1);  // ~5% of lags may exceed the 95% band
}

TEST(Pacf, Ar1) {
  const auto v = ar1(10000, 0.8, 8);
  const auto p = sw::stats::pacf(v, 5);
  EXPECT_NEAR(p[0], 0.8, 0.05);
  EXPECT_NEAR(p[1], 0.0, 0.05);
}

TEST(Pacf, LagOneIsAutocorrelation) {
  const auto v = ar1(500, 0.3, 2);
  EXPECT_EQ(sw::stats::pacf(v, 3)[0], sw::stats::autocorrelations(v, 1)[1]);
}

TEST(Pacf, CutsOffAfterOrderAcrossSeeds) {
  // AR(2): x_t = 0.5 x_{t-1} - 0.3 x_{t-2} + e_t
  int violations = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d;
    std::vector<double> x(10000);
    double a = 0, b = 0;
    for (auto& v : x) {
      v = 0.5 * a - 0.3 * b + d(rng);
      b = a;
      a = v;
    }
    const auto p = sw::stats::pacf(x, 8);
    for (std::size_t j = 2; j < p.size(); ++j) violations += std::abs(p[j]) > 3.0 / std::sqrt(10000.0);
  }
  EXPECT_LE(violations, 1);
}

TEST(Pacf, Errors) {
  EXPECT_EQ(error_of([] { (void)sw::stats::pacf(std::vector<double>(10, 1.0), 2); }), sw::Errc::UndefinedCorrelation);
  EXPECT_EQ(error_of([] { (void)sw::stats::pacf(std::vector<double>{1, 2, 3, 4}, 2); }), sw::Errc::InvalidLag);
}

TEST(DependenceMatrix, Examples) {
  const auto a = normal_draws(10000, 0, 1, 1);
  const auto b = normal_draws(10000, 0, 1, 2);
  std::vector<double> neg(a.size());
  std::transform(a.begin(), a.end(), neg.begin(), [](double v) { return -v; });

  auto same = sw::stats::dependence_matrix({a, a}, sw::stats::DependenceMethod::Pearson);
  EXPECT_NEAR(same(0, 1), 1.0, 1e-12);

  auto indep = sw::stats::dependence_matrix({a, b}, sw::stats::DependenceMethod::Spearman);
  EXPECT_NEAR(indep(0, 1), 0.0, 0.05);

  auto three = sw::stats::dependence_matrix({a, b, neg}, sw::stats::DependenceMethod::Pearson);
  EXPECT_NEAR(three(0, 2), -1.0, 1e-12);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(three(i, i), 1.0);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(three(i, j), three(j, i));
  }
}

TEST(DependenceMatrix, ConstantAndUnequalStreams) {
  const std::vector<double> c(10, 2.0);
  const std::vector<double> x{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  const std::vector<double> shorter{2, 4, 6};
  auto m = sw::stats::dependence_matrix({c, x, shorter}, sw::stats::DependenceMethod::Pearson);
  EXPECT_EQ(m(0, 1), 0.0);
  EXPECT_EQ(m(0, 0), 0.0);
  EXPECT_NEAR(m(1, 2), 1.0, 1e-12);  // aligned prefix of length 3
  EXPECT_EQ(error_of([&] { (void)sw::stats::dependence_matrix({x}, sw::stats::DependenceMethod::Pearson); }),
            sw::Errc::NeedTwoStreams);
}
