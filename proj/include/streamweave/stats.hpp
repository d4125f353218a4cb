#pragma once

// Per-window moment estimators, dependence measures and autocorrelation
// diagnostics. Everything here is a pure function over immutable input.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "streamweave/error.hpp"

namespace streamweave::stats {

struct StreamStats {
  std::size_t count = 0;
  double mean = 0.0;
  double variance = 0.0;  // unbiased, n-1 divisor
  double fourth_central_moment = 0.0;  // 1/n divisor
  double min = 0.0;
  double max = 0.0;

  [[nodiscard]] double require_variance() const {
    if (count < 2) {
      throw Error(Errc::InsufficientSamples,
                  "variance needs at least 2 samples, have " + std::to_string(count));
    }
    return variance;
  }
};

enum class DependenceMethod { Pearson, Spearman };

struct DependenceMatrix {
  std::size_t k = 0;
  DependenceMethod method = DependenceMethod::Pearson;
  std::vector<double> values;  // row-major k*k

  [[nodiscard]] double operator()(std::size_t i, std::size_t j) const { return values[i * k + j]; }
  double& operator()(std::size_t i, std::size_t j) { return values[i * k + j]; }
};

/// Two-pass moments: mean first, then central moments.
[[nodiscard]] inline StreamStats compute_stats(std::span<const double> samples) {
  if (samples.empty()) throw Error(Errc::EmptyWindow, "compute_stats on an empty window");
  StreamStats s;
  s.count = samples.size();
  const double n = static_cast<double>(s.count);
  s.mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
  const auto [lo, hi] = std::minmax_element(samples.begin(), samples.end());
  s.min = *lo;
  s.max = *hi;
  double m2 = 0.0;
  double m4 = 0.0;
  for (double x : samples) {
    const double d = x - s.mean;
    const double d2 = d * d;
    m2 += d2;
    m4 += d2 * d2;
  }
  s.variance = s.count > 1 ? m2 / (n - 1.0) : 0.0;
  s.fourth_central_moment = m4 / n;
  return s;
}

/// Average ranks (1-based); ties share the mean of the ranks they span.
[[nodiscard]] inline std::vector<double> ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i + 1;
    while (j < order.size() && x[order[j]] == x[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t) r[order[t]] = avg;
    i = j;
  }
  return r;
}

[[nodiscard]] inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw Error(Errc::InsufficientSamples, "pearson needs two equal-length inputs of length >= 2");
  }
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(Errc::UndefinedCorrelation, "constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

[[nodiscard]] inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw Error(Errc::InsufficientSamples, "spearman needs two equal-length inputs of length >= 2");
  }
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  return pearson(rx, ry);
}

/// (1/N)(mu4 - (N-3)/(N-1) sigma^4) with sample moments plugged in, clamped at 0.
[[nodiscard]] inline double variance_of_variance(const StreamStats& s) {
  const double var = s.require_variance();
  const double n = static_cast<double>(s.count);
  const double v = (s.fourth_central_moment - (n - 3.0) / (n - 1.0) * var * var) / n;
  return std::max(v, 0.0);
}

/// Sample autocovariance with 1/(n-lag) normalization.
[[nodiscard]] inline double autocovariance(std::span<const double> x, std::size_t lag) {
  if (lag == 0 || lag >= x.size()) {
    throw Error(Errc::InvalidLag, "lag " + std::to_string(lag) + " for length " + std::to_string(x.size()));
  }
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double acc = 0.0;
  for (std::size_t t = 0; t + lag < x.size(); ++t) acc += (x[t] - mean) * (x[t + lag] - mean);
  return acc / static_cast<double>(x.size() - lag);
}

/// Standard ACF (1/n normalized autocovariances over the lag-0 value), lags 0..max_lag.
[[nodiscard]] inline std::vector<double> autocorrelations(std::span<const double> x, std::size_t max_lag) {
  if (max_lag >= x.size()) throw Error(Errc::InvalidLag, "max_lag must be below the series length");
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  std::vector<double> c(max_lag + 1, 0.0);
  for (std::size_t lag = 0; lag <= max_lag; ++lag) {
    double acc = 0.0;
    for (std::size_t t = 0; t + lag < x.size(); ++t) acc += (x[t] - mean) * (x[t + lag] - mean);
    c[lag] = acc / n;
  }
  if (c[0] == 0.0) throw Error(Errc::UndefinedCorrelation, "constant series has no autocorrelation");
  const double c0 = c[0];
  for (double& v : c) v /= c0;
  return c;
}

/// Partial autocorrelations for lags 1..max_lag via Durbin-Levinson.
[[nodiscard]] inline std::vector<double> pacf(std::span<const double> x, std::size_t max_lag) {
  if (max_lag == 0 || 2 * max_lag >= x.size()) {
    throw Error(Errc::InvalidLag, "pacf needs 0 < max_lag < length/2");
  }
  const auto r = autocorrelations(x, max_lag);
  std::vector<double> out(max_lag);
  std::vector<double> phi(max_lag + 1, 0.0);
  std::vector<double> prev(max_lag + 1, 0.0);
  double v = 1.0;
  for (std::size_t k = 1; k <= max_lag; ++k) {
    double num = r[k];
    for (std::size_t j = 1; j < k; ++j) num -= prev[j] * r[k - j];
    const double a = v > 0.0 ? num / v : 0.0;
    phi[k] = a;
    for (std::size_t j = 1; j < k; ++j) phi[j] = prev[j] - a * prev[k - j];
    v *= (1.0 - a * a);
    out[k - 1] = a;
    prev = phi;
  }
  return out;
}

namespace detail {
inline double dependence(std::span<const double> a, std::span<const double> b, DependenceMethod m) {
  const std::size_t n = std::min(a.size(), b.size());
  if (n < 2) return 0.0;
  try {
    return m == DependenceMethod::Pearson ? pearson(a.first(n), b.first(n)) : spearman(a.first(n), b.first(n));
  } catch (const Error& e) {
    if (e.code() == Errc::UndefinedCorrelation) return 0.0;
    throw;
  }
}
}  // namespace detail

/// Pairwise dependence over index-aligned prefixes. Undefined pairs are stored as 0;
/// the diagonal is 1 for streams with at least two distinct values and 0 otherwise.
[[nodiscard]] inline DependenceMatrix dependence_matrix(const std::vector<std::vector<double>>& windows,
                                                        DependenceMethod method) {
  const std::size_t k = windows.size();
  if (k < 2) throw Error(Errc::NeedTwoStreams, "dependence matrix needs at least two streams");
  DependenceMatrix dep{k, method, std::vector<double>(k * k, 0.0)};
  for (std::size_t i = 0; i < k; ++i) {
    const auto& w = windows[i];
    const bool varied = w.size() >= 2 && std::any_of(w.begin(), w.end(), [&](double v) { return v != w.front(); });
    dep(i, i) = varied ? 1.0 : 0.0;
    for (std::size_t j = i + 1; j < k; ++j) {
      const double d = detail::dependence(windows[i], windows[j], method);
      dep(i, j) = d;
      dep(j, i) = d;
    }
  }
  return dep;
}

}  // namespace streamweave::stats
