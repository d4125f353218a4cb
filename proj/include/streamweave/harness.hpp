#pragma once

// Experiment driver: datasets, baseline samplers, error metrics and the
// method x rate x epsilon x seed sweep through edge, wire and cloud.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "streamweave/allocator.hpp"
#include "streamweave/cloud.hpp"
#include "streamweave/edge.hpp"
#include "streamweave/error.hpp"
#include "streamweave/log.hpp"
#include "streamweave/stats.hpp"
#include "streamweave/transport.hpp"
#include "streamweave/wire.hpp"

namespace streamweave::harness {

/// window -> stream -> samples
using Window = std::vector<std::vector<double>>;

struct Dataset {
  std::vector<std::string> devices;
  std::vector<Window> windows;

  [[nodiscard]] std::size_t k() const noexcept { return devices.size(); }
};

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticSpec {
  std::size_t k = 2;
  std::vector<double> means;
  std::vector<std::vector<double>> covariance;
  std::size_t samples_per_window = 50;
  std::size_t windows = 10;
  std::vector<double> ar;  // optional, one coefficient per stream

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(Errc::InvalidSpec, m); };
    if (k == 0) fail("k must be positive");
    if (means.size() != k) fail("means must have k entries");
    if (covariance.size() != k) fail("covariance must be k x k");
    for (const auto& row : covariance) {
      if (row.size() != k) fail("covariance must be k x k");
    }
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        if (std::abs(covariance[i][j] - covariance[j][i]) > 1e-9 * (1 + std::abs(covariance[i][j]))) {
          fail("covariance must be symmetric");
        }
      }
    }
    if (!ar.empty() && ar.size() != k) fail("ar must be empty or have k entries");
    for (double phi : ar) {
      if (!(phi > -1.0 && phi < 1.0)) fail("AR coefficients must lie in (-1, 1)");
    }
    if (samples_per_window == 0 || windows == 0) fail("samples_per_window and windows must be positive");
  }

  /// Equal means and variances with one common off-diagonal correlation.
  static SyntheticSpec equicorrelated(std::size_t k, double mean, double variance, double rho, std::size_t per_window,
                                      std::size_t windows) {
    SyntheticSpec s;
    s.k = k;
    s.means.assign(k, mean);
    s.covariance.assign(k, std::vector<double>(k, rho * variance));
    for (std::size_t i = 0; i < k; ++i) s.covariance[i][i] = variance;
    s.samples_per_window = per_window;
    s.windows = windows;
    return s;
  }
};

/// Square-root factor L with L L^T = covariance; accepts singular PSD input.
[[nodiscard]] inline Eigen::MatrixXd covariance_factor(const SyntheticSpec& spec) {
  Eigen::MatrixXd c(spec.k, spec.k);
  for (std::size_t i = 0; i < spec.k; ++i) {
    for (std::size_t j = 0; j < spec.k; ++j) c(i, j) = spec.covariance[i][j];
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c);
  if (es.info() != Eigen::Success) throw Error(Errc::InvalidSpec, "covariance factorization failed");
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  Eigen::VectorXd ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < -1e-10 * scale) throw Error(Errc::InvalidSpec, "covariance is not positive semidefinite");
    ev(i) = std::sqrt(std::max(ev(i), 0.0));
  }
  return es.eigenvectors() * ev.asDiagonal();
}

[[nodiscard]] inline Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  const Eigen::MatrixXd factor = covariance_factor(spec);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Dataset d;
  for (std::size_t i = 0; i < spec.k; ++i) {
    char name[16];
    std::snprintf(name, sizeof name, "dev%02zu", i);
    d.devices.emplace_back(name);
  }
  Eigen::VectorXd z(spec.k);
  Eigen::VectorXd dev = Eigen::VectorXd::Zero(spec.k);
  bool first = true;
  d.windows.resize(spec.windows, Window(spec.k));
  for (std::size_t w = 0; w < spec.windows; ++w) {
    for (auto& s : d.windows[w]) s.reserve(spec.samples_per_window);
    for (std::size_t t = 0; t < spec.samples_per_window; ++t) {
      for (std::size_t i = 0; i < spec.k; ++i) z(i) = normal(rng);
      const Eigen::VectorXd e = factor * z;
      for (std::size_t i = 0; i < spec.k; ++i) {
        const double phi = spec.ar.empty() ? 0.0 : spec.ar[i];
        // Stationary AR(1) with the target marginal variance.
        dev(i) = first ? e(i) : phi * dev(i) + std::sqrt(1.0 - phi * phi) * e(i);
        d.windows[w][i].push_back(spec.means[i] + dev(i));
      }
      first = false;
    }
  }
  return d;
}

inline constexpr std::string_view kCsvHeader = "timestamp,device_id,value";

/// Rows are emitted window by window with a global time index.
inline void write_csv(const Dataset& d, std::ostream& out) {
  out << kCsvHeader << '\n';
  std::size_t t0 = 0;
  char buf[64];
  for (const auto& w : d.windows) {
    std::size_t len = 0;
    for (const auto& s : w) len = std::max(len, s.size());
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (t >= w[i].size()) continue;
        std::snprintf(buf, sizeof buf, "%.17g", w[i][t]);
        out << (t0 + t) << ',' << d.devices[i] << ',' << buf << '\n';
      }
    }
    t0 += len;
  }
}

// ---------------------------------------------------------------------------
// CSV input

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace detail

/// Per-device series from a `timestamp,device_id,value` file, ordered by
/// (timestamp, device) with ties kept in file order.
[[nodiscard]] inline std::map<std::string, std::vector<double>> read_series(std::istream& in,
                                                                           const std::string& name = "<csv>") {
  std::string line;
  if (!std::getline(in, line)) throw Error(Errc::SchemaError, name + ": empty file, expected header " + std::string(kCsvHeader));
  const auto header = detail::split(line);
  if (header.size() != 3 || header[0] != "timestamp" || header[1] != "device_id" || header[2] != "value") {
    throw Error(Errc::SchemaError, name + ": header must be " + std::string(kCsvHeader));
  }
  struct Row {
    double ts;
    std::string device;
    double value;
  };
  std::vector<Row> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split(line);
    if (f.size() != 3) throw Error(Errc::ParseError, name + ":" + std::to_string(lineno) + ": expected 3 fields");
    const auto ts = detail::parse_double(f[0]);
    if (!ts) throw Error(Errc::ParseError, name + ":" + std::to_string(lineno) + ": bad timestamp");
    if (f[1].empty()) throw Error(Errc::ParseError, name + ":" + std::to_string(lineno) + ": empty device_id");
    const auto v = detail::parse_double(f[2]);
    if (!v) throw Error(Errc::ParseError, name + ":" + std::to_string(lineno) + ": non-numeric value");
    rows.push_back({*ts, std::string(f[1]), *v});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return std::tie(a.ts, a.device) < std::tie(b.ts, b.device);
  });
  std::map<std::string, std::vector<double>> series;
  for (auto& r : rows) series[r.device].push_back(r.value);
  return series;
}

/// Count-based windows of `window_size` samples per device. The last window
/// may be partial.
[[nodiscard]] inline Dataset window_series(const std::map<std::string, std::vector<double>>& series,
                                           std::size_t window_size) {
  if (window_size == 0) throw Error(Errc::ConfigError, "window size must be positive");
  Dataset d;
  std::size_t longest = 0;
  for (const auto& [dev, values] : series) {
    d.devices.push_back(dev);
    longest = std::max(longest, values.size());
  }
  const std::size_t n_windows = (longest + window_size - 1) / window_size;
  d.windows.assign(n_windows, Window(d.devices.size()));
  std::size_t i = 0;
  for (const auto& [dev, values] : series) {
    for (std::size_t w = 0; w < n_windows; ++w) {
      const std::size_t a = std::min(values.size(), w * window_size);
      const std::size_t b = std::min(values.size(), a + window_size);
      d.windows[w][i].assign(values.begin() + static_cast<std::ptrdiff_t>(a),
                             values.begin() + static_cast<std::ptrdiff_t>(b));
    }
    ++i;
  }
  return d;
}

[[nodiscard]] inline Dataset ingest_csv(const std::filesystem::path& path, std::size_t window_size) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  return window_series(read_series(in, path.string()), window_size);
}

// ---------------------------------------------------------------------------
// Baselines

enum class Method { ModelImputation, MeanImputation, NoImputation, SRS, Proportional, Neyman, CostNeyman };

inline constexpr Method kAllMethods[] = {Method::ModelImputation, Method::MeanImputation, Method::NoImputation,
                                         Method::SRS,             Method::Proportional,   Method::Neyman,
                                         Method::CostNeyman};

constexpr std::string_view to_string(Method m) noexcept {
  switch (m) {
    case Method::ModelImputation: return "ModelImputation";
    case Method::MeanImputation: return "MeanImputation";
    case Method::NoImputation: return "NoImputation";
    case Method::SRS: return "SRS";
    case Method::Proportional: return "Proportional";
    case Method::Neyman: return "Neyman";
    case Method::CostNeyman: return "CostNeyman";
  }
  return "?";
}

[[nodiscard]] inline std::optional<Method> parse_method(std::string_view s) {
  for (auto m : kAllMethods) {
    if (to_string(m) == s) return m;
  }
  return std::nullopt;
}

[[nodiscard]] constexpr bool uses_epsilon(Method m) noexcept {
  return m == Method::ModelImputation || m == Method::MeanImputation;
}

/// Minimum real samples per stream for the stratified baselines (VAR needs two).
inline constexpr std::size_t kBaselineMinimum = 2;

/// Stratified allocation n_i proportional to a method-specific weight, scaled
/// to the budget, clamped to [min(2, N_i), N_i] with redistribution, then
/// rounded by largest remainder and topped up with leftover budget.
[[nodiscard]] inline std::vector<std::size_t> baseline_allocate(Method method,
                                                                std::span<const stats::StreamStats> st,
                                                                const alloc::CostModel& cost, double budget) {
  const std::size_t k = st.size();
  std::vector<double> weight(k), lo(k), hi(k), c(k);
  double min_cost = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double n = static_cast<double>(st[i].count);
    const double sd = st[i].count >= 2 ? std::sqrt(std::max(st[i].variance, 0.0)) : 0.0;
    c[i] = cost.per_sample_cost[i];
    switch (method) {
      case Method::Proportional: weight[i] = n; break;
      case Method::Neyman: weight[i] = n * sd; break;
      case Method::CostNeyman: weight[i] = c[i] > 0.0 ? n * sd / std::sqrt(c[i]) : n * sd; break;
      default: throw Error(Errc::ConfigError, std::string(to_string(method)) + " is not a stratified baseline");
    }
    hi[i] = n;
    lo[i] = std::min<double>(kBaselineMinimum, n);
    min_cost += lo[i] * c[i];
  }
  if (min_cost > budget + 1e-9 * std::max(1.0, budget)) {
    throw Error(Errc::Infeasible, "budget below the minimum stratified allocation");
  }
  if (std::all_of(weight.begin(), weight.end(), [](double w) { return w <= 0.0; })) {
    for (std::size_t i = 0; i < k; ++i) weight[i] = hi[i];
  }

  // Continuous allocation with clamping: fixed streams take a bound, the
  // rest share the remaining budget in proportion to their weights.
  std::vector<double> x(k, 0.0);
  std::vector<char> fixed(k, 0);
  for (int round = 0; round < static_cast<int>(2 * k + 2); ++round) {
    double rest = budget, denom = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      if (fixed[i]) rest -= x[i] * c[i];
      else denom += weight[i] * c[i];
    }
    bool changed = false;
    for (std::size_t i = 0; i < k; ++i) {
      if (fixed[i]) continue;
      x[i] = denom > 0.0 ? std::max(rest, 0.0) * weight[i] / denom : (c[i] > 0.0 ? hi[i] : hi[i]);
    }
    for (std::size_t i = 0; i < k; ++i) {
      if (fixed[i]) continue;
      if (x[i] > hi[i]) {
        x[i] = hi[i];
        fixed[i] = 1;
        changed = true;
      } else if (x[i] < lo[i]) {
        x[i] = lo[i];
        fixed[i] = 1;
        changed = true;
      }
    }
    if (!changed) break;
  }

  std::vector<std::size_t> n(k);
  double spent = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    n[i] = static_cast<std::size_t>(std::clamp(std::floor(x[i] + 1e-9), lo[i], hi[i]));
    spent += static_cast<double>(n[i]) * c[i];
  }
  auto affordable = [&](std::size_t i) {
    return static_cast<double>(n[i]) < hi[i] && spent + c[i] <= budget + 1e-9 * std::max(1.0, budget);
  };
  // Largest fractional part first, then any stream that still fits.
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return (x[a] - std::floor(x[a] + 1e-9)) > (x[b] - std::floor(x[b] + 1e-9));
  });
  for (std::size_t i : order) {
    if (x[i] - std::floor(x[i] + 1e-9) > 1e-9 && affordable(i)) {
      ++n[i];
      spent += c[i];
    }
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return weight[a] > weight[b]; });
  for (bool progress = true; progress;) {
    progress = false;
    for (std::size_t i : order) {
      if (affordable(i)) {
        ++n[i];
        spent += c[i];
        progress = true;
      }
    }
  }
  return n;
}

/// Stream-blind simple random sample over the pooled window: a random order
/// of all cached samples is taken while the budget lasts.
[[nodiscard]] inline std::vector<std::size_t> srs_allocate(std::span<const std::size_t> counts,
                                                           const alloc::CostModel& cost, double budget,
                                                           std::mt19937_64& rng) {
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < counts.size(); ++i) pool.insert(pool.end(), counts[i], i);
  std::shuffle(pool.begin(), pool.end(), rng);
  std::vector<std::size_t> n(counts.size(), 0);
  double spent = 0.0;
  for (std::size_t i : pool) {
    const double c = cost.per_sample_cost[i];
    if (spent + c > budget + 1e-9 * std::max(1.0, budget)) continue;
    spent += c;
    ++n[i];
  }
  return n;
}

// ---------------------------------------------------------------------------
// Metrics

/// sqrt(mean squared error) / |mean truth|
[[nodiscard]] inline double nrmse(std::span<const double> estimates, std::span<const double> truths) {
  if (estimates.size() != truths.size() || truths.empty()) {
    throw Error(Errc::InvalidInstance, "nrmse needs equal-length, non-empty series");
  }
  double se = 0.0, mean = 0.0;
  for (std::size_t j = 0; j < truths.size(); ++j) {
    se += (estimates[j] - truths[j]) * (estimates[j] - truths[j]);
    mean += truths[j];
  }
  mean /= static_cast<double>(truths.size());
  if (mean == 0.0) throw Error(Errc::UndefinedNRMSE, "mean true aggregate is zero");
  return std::sqrt(se / static_cast<double>(truths.size())) / std::abs(mean);
}

[[nodiscard]] inline double true_aggregate(std::span<const double> v, cloud::Aggregate agg) {
  cloud::StreamValues s;
  for (double x : v) s.values.push_back({x, cloud::Origin::Real});
  return cloud::aggregate(s, 0, agg).value;
}

/// Largest lag m such that partial autocorrelations at lags 1..m are all
/// significant at the 95% level.
[[nodiscard]] inline std::size_t select_m(std::span<const double> series, std::size_t max_lag) {
  const auto p = stats::pacf(series, max_lag);
  const double bound = 1.96 / std::sqrt(static_cast<double>(series.size()));
  std::size_t m = 0;
  while (m < max_lag && std::abs(p[m]) > bound) ++m;
  return m;
}

// ---------------------------------------------------------------------------
// Experiments

struct ExperimentConfig {
  std::optional<SyntheticSpec> synthetic;
  std::optional<std::filesystem::path> csv;
  std::size_t window_size = 50;
  std::vector<double> rates{0.5};
  std::vector<double> epsilons{1.0};
  alloc::EpsilonStrategy::Kind epsilon_kind = alloc::EpsilonStrategy::Kind::StdErrMultiple;
  std::vector<Method> methods{Method::ModelImputation, Method::SRS};
  edge::IidConfig iid;
  stats::DependenceMethod dependence = stats::DependenceMethod::Pearson;
  bool imputation = true;
  std::optional<alloc::CostModel> cost_model;
  std::vector<std::uint64_t> seeds{1};
  unsigned threads = 0;  // 0 = hardware concurrency
  bool timing = false;
  std::optional<std::filesystem::path> store_dir;
  bool loopback = false;

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(Errc::ConfigError, m); };
    if (synthetic.has_value() == csv.has_value()) fail("exactly one data source is required");
    if (synthetic) synthetic->validate();
    if (rates.empty()) fail("sweep.rates must not be empty");
    for (double r : rates) {
      if (!(r > 0.0 && r <= 1.0)) fail("sampling rates must lie in (0, 1]");
    }
    if (epsilons.empty()) fail("sweep.epsilons must not be empty");
    for (double e : epsilons) {
      if (!(e >= 0.0)) fail("epsilon multipliers must be non-negative");
    }
    if (seeds.empty()) fail("at least one seed is required");
    if (methods.empty()) fail("at least one method is required");
    if (window_size == 0) fail("window.size must be positive");
    if (iid.mode == edge::IidMode::Thinning && iid.thinning_factor < 1) fail("thinning factor must be at least 1");
  }
};

struct ResultRow {
  std::string method;
  double rate = 0.0;
  std::string aggregate;
  std::optional<double> nrmse;  // empty = failed cell
  double imputed_ratio = 0.0;
  double solve_ms = 0.0;
  std::uint64_t seed = 0;
};

struct ResultTable {
  std::vector<ResultRow> rows;
  std::size_t failed_cells = 0;
  std::size_t payloads = 0;
  std::size_t over_budget = 0;
};

inline constexpr std::string_view kResultHeader = "method,rate,aggregate,nrmse,imputed_ratio,solve_ms,seed";

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline void write_results(const ResultTable& t, std::ostream& out) {
  out << kResultHeader << '\n';
  for (const auto& r : t.rows) {
    out << r.method << ',' << format_double(r.rate) << ',' << r.aggregate << ','
        << (r.nrmse ? format_double(*r.nrmse) : std::string("failed")) << ',' << format_double(r.imputed_ratio) << ','
        << format_double(r.solve_ms) << ',' << r.seed << '\n';
  }
}

/// Full-data cost of one window under the cost model in use.
[[nodiscard]] inline double full_cost(const Window& w, const std::optional<alloc::CostModel>& cost) {
  double c = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i].empty()) continue;
    c += cost ? cost->per_sample_cost[i] * static_cast<double>(w[i].size())
              : static_cast<double>(wire::kStreamOverheadBytes + wire::kSampleBytes * w[i].size());
  }
  return c;
}

struct CellKey {
  Method method;
  double rate;
  double epsilon;
  std::uint64_t seed;
};

struct CellOutcome {
  // aggregate name -> mean NRMSE over devices
  std::vector<std::pair<std::string, double>> nrmse;
  double imputed_ratio = 0.0;
  double solve_ms = 0.0;
  std::size_t payloads = 0;     // feasible payloads sent
  std::size_t over_budget = 0;  // of those, measured cost above the window budget
};

namespace detail {

inline edge::EdgeConfig edge_config(const ExperimentConfig& cfg, const CellKey& key) {
  edge::EdgeConfig e;
  e.epsilon = {cfg.epsilon_kind, key.epsilon};
  e.dependence = cfg.dependence;
  e.iid = cfg.iid;
  e.cost_model = cfg.cost_model;
  e.seed = key.seed;
  e.imputation = cfg.imputation && key.method != Method::NoImputation && uses_epsilon(key.method);
  if (key.method == Method::MeanImputation) e.model_kind = models::ModelKind::MeanOnly;
  return e;
}

inline wire::WindowPayload baseline_payload(const ExperimentConfig& cfg, const CellKey& key,
                                            const edge::WindowBuffer& buffer, edge::EdgeConfig ecfg) {
  ecfg.imputation = false;
  const auto a = edge::analyze(buffer, ecfg);
  wire::WindowPayload p;
  p.window_id = buffer.window_id();
  const std::size_t k = a.instance.k;
  if (k == 0) return p;
  auto rng = edge::window_rng(key.seed ^ 0x9e3779b97f4a7c15ull, buffer.window_id());
  std::vector<std::size_t> n_real;
  try {
    if (key.method == Method::SRS) {
      n_real = srs_allocate(a.instance.arrivals, a.instance.cost_model, a.instance.budget, rng);
    } else {
      n_real = baseline_allocate(key.method, a.stats, a.instance.cost_model, a.instance.budget);
    }
  } catch (const Error& e) {
    if (e.code() != Errc::Infeasible) throw;
    p.infeasible = true;
    return p;
  }
  const std::vector<std::size_t> none(k, 0);
  p = edge::assemble(a, n_real, none, rng);
  (void)cfg;
  return p;
}

}  // namespace detail

struct TruthSet {
  // [variant][aggregate][device][window]
  std::vector<std::string> suffixes;
  std::vector<std::vector<std::vector<std::vector<std::optional<double>>>>> values;
};

[[nodiscard]] inline TruthSet compute_truths(const Dataset& d, const ExperimentConfig& cfg) {
  TruthSet t;
  const bool thinning = cfg.iid.mode == edge::IidMode::Thinning && cfg.iid.thinning_factor > 1;
  t.suffixes.push_back("");
  if (thinning) t.suffixes.push_back("@raw");
  t.values.assign(t.suffixes.size(),
                  std::vector(4, std::vector(d.k(), std::vector<std::optional<double>>(d.windows.size()))));
  for (std::size_t v = 0; v < t.suffixes.size(); ++v) {
    for (std::size_t w = 0; w < d.windows.size(); ++w) {
      for (std::size_t i = 0; i < d.k(); ++i) {
        std::vector<double> s = d.windows[w][i];
        if (thinning && v == 0) s = edge::apply_iid_mode(s, cfg.iid).samples;
        for (std::size_t a = 0; a < 4; ++a) {
          const auto agg = cloud::kAllAggregates[a];
          if (s.size() < (agg == cloud::Aggregate::Var ? 2u : 1u)) continue;
          t.values[v][a][i][w] = true_aggregate(s, agg);
        }
      }
    }
  }
  return t;
}

/// Runs one (method, rate, epsilon, seed) cell through edge, wire and cloud.
[[nodiscard]] inline CellOutcome run_cell(const ExperimentConfig& cfg, const Dataset& d, const TruthSet& truths,
                                          const CellKey& key) {
  const auto ecfg_base = detail::edge_config(cfg, key);
  std::unique_ptr<wire::Transport> transport;
  if (cfg.loopback) transport = std::make_unique<wire::LoopbackTransport>();
  else transport = std::make_unique<wire::MemoryTransport>();

  std::unique_ptr<cloud::Store> store;
  std::filesystem::path log_path;
  if (cfg.store_dir) {
    std::filesystem::create_directories(*cfg.store_dir);
    log_path = *cfg.store_dir / (std::string(to_string(key.method)) + "_r" + format_double(key.rate) + "_e" +
                                 format_double(key.epsilon) + "_s" + std::to_string(key.seed) + ".log");
    std::filesystem::remove(log_path);
    store = std::make_unique<cloud::Store>(log_path);
  } else {
    store = std::make_unique<cloud::Store>();
  }

  CellOutcome out;
  double imputed = 0.0, reals = 0.0, solve_ms = 0.0;
  std::size_t solved = 0;
  for (std::size_t w = 0; w < d.windows.size(); ++w) {
    const auto& win = d.windows[w];
    edge::WindowBuffer buffer(d.k(), w);
    std::size_t longest = 0;
    for (const auto& s : win) longest = std::max(longest, s.size());
    for (std::size_t t = 0; t < longest; ++t) {
      for (std::size_t i = 0; i < d.k(); ++i) {
        if (t < win[i].size()) buffer.ingest(i, win[i][t]);
      }
    }
    auto ecfg = ecfg_base;
    ecfg.budget = key.rate * full_cost(win, cfg.cost_model);

    wire::WindowPayload payload;
    if (key.method == Method::ModelImputation || key.method == Method::MeanImputation ||
        key.method == Method::NoImputation) {
      auto r = edge::close_window(buffer, ecfg);
      solve_ms += r.solve_ms;
      ++solved;
      payload = std::move(r.payload);
    } else {
      buffer.close();
      payload = detail::baseline_payload(cfg, key, buffer, ecfg);
    }
    if (!payload.infeasible) {
      ++out.payloads;
      const double spent =
          cfg.cost_model ? wire::measure_cost(payload, *cfg.cost_model) : wire::measure_cost(payload);
      if (spent > ecfg.budget + 1e-9 * std::max(1.0, ecfg.budget)) ++out.over_budget;
    }
    for (const auto& s : payload.streams) {
      reals += static_cast<double>(s.real_values.size());
      if (s.model) imputed += static_cast<double>(s.model->n_imputed);
    }
    transport->send(wire::encode(payload));
    const auto bytes = transport->receive();
    if (!bytes) throw Error(Errc::IoError, "transport closed early");
    store->store(cloud::impute(wire::decode(*bytes)));
  }
  transport->close();

  out.imputed_ratio = reals > 0.0 ? imputed / reals : 0.0;
  out.solve_ms = cfg.timing && solved > 0 ? solve_ms / static_cast<double>(solved) : 0.0;
  for (std::size_t v = 0; v < truths.suffixes.size(); ++v) {
    for (std::size_t a = 0; a < 4; ++a) {
      const auto agg = cloud::kAllAggregates[a];
      double sum = 0.0;
      std::size_t devices = 0;
      for (std::size_t i = 0; i < d.k(); ++i) {
        std::vector<double> est, tru;
        for (std::size_t w = 0; w < d.windows.size(); ++w) {
          const auto& truth = truths.values[v][a][i][w];
          if (!truth) continue;
          const auto vals = store->values(static_cast<std::uint32_t>(i), w);
          if (!vals || vals->values.size() < (agg == cloud::Aggregate::Var ? 2u : 1u)) continue;
          est.push_back(cloud::aggregate(*vals, w, agg).value);
          tru.push_back(*truth);
        }
        if (est.empty()) continue;
        sum += nrmse(est, tru);
        ++devices;
      }
      if (devices == 0) {
        throw Error(Errc::UndefinedNRMSE, "no estimates for " + std::string(to_string(agg)));
      }
      out.nrmse.emplace_back(std::string(to_string(agg)) + truths.suffixes[v], sum / static_cast<double>(devices));
    }
  }
  if (cfg.store_dir) store.reset();
  return out;
}

[[nodiscard]] inline Dataset load_dataset(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (cfg.synthetic) return generate_synthetic(*cfg.synthetic, seed);
  return ingest_csv(*cfg.csv, cfg.window_size);
}

[[nodiscard]] inline ResultTable run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  // Datasets and truths per seed (CSV data does not depend on the seed).
  std::map<std::uint64_t, std::pair<Dataset, TruthSet>> data;
  for (auto seed : cfg.seeds) {
    if (data.count(seed)) continue;
    auto d = load_dataset(cfg, seed);
    if (d.k() == 0 || d.windows.empty()) throw Error(Errc::ConfigError, "dataset has no streams or windows");
    auto t = compute_truths(d, cfg);
    data.emplace(seed, std::pair{std::move(d), std::move(t)});
  }

  std::vector<CellKey> cells;
  for (auto m : cfg.methods) {
    for (double r : cfg.rates) {
      const std::vector<double> eps = uses_epsilon(m) ? cfg.epsilons : std::vector<double>{cfg.epsilons.front()};
      for (double e : eps) {
        for (auto s : cfg.seeds) cells.push_back({m, r, e, s});
      }
    }
  }
  const bool eps_suffix = cfg.epsilons.size() > 1;
  std::vector<std::optional<CellOutcome>> outcomes(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t c; (c = next.fetch_add(1)) < cells.size();) {
      const auto& key = cells[c];
      const auto& [d, t] = data.at(key.seed);
      try {
        outcomes[c] = run_cell(cfg, d, t, key);
      } catch (const std::exception& e) {
        log::warn(std::string("cell ") + std::string(to_string(key.method)) + " rate " + format_double(key.rate) +
                  " seed " + std::to_string(key.seed) + " failed: " + e.what());
      }
    }
  };
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const unsigned n_threads = std::min<unsigned>(cfg.threads ? cfg.threads : hw, static_cast<unsigned>(cells.size()));
  std::vector<std::thread> pool;
  for (unsigned i = 1; i < n_threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  ResultTable table;
  const auto& first_truths = data.begin()->second.second;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const auto& key = cells[c];
    std::string name(to_string(key.method));
    if (eps_suffix && uses_epsilon(key.method)) name += ":eps=" + format_double(key.epsilon);
    if (!outcomes[c]) {
      ++table.failed_cells;
      for (const auto& suffix : first_truths.suffixes) {
        for (auto agg : cloud::kAllAggregates) {
          table.rows.push_back({name, key.rate, std::string(to_string(agg)) + suffix, std::nullopt, 0.0, 0.0, key.seed});
        }
      }
      continue;
    }
    table.payloads += outcomes[c]->payloads;
    table.over_budget += outcomes[c]->over_budget;
    for (const auto& [agg, value] : outcomes[c]->nrmse) {
      table.rows.push_back({name, key.rate, agg, value, outcomes[c]->imputed_ratio, outcomes[c]->solve_ms, key.seed});
    }
  }
  std::stable_sort(table.rows.begin(), table.rows.end(), [](const ResultRow& a, const ResultRow& b) {
    return std::tie(a.method, a.rate, a.aggregate, a.seed) < std::tie(b.method, b.rate, b.aggregate, b.seed);
  });
  return table;
}

}  // namespace streamweave::harness
