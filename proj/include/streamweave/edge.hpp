#pragma once

// Edge side of the pipeline: cache one tumbling window, decide how many real
// samples each stream sends and which streams the cloud should impute, then
// assemble the payload.

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <iterator>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "streamweave/allocator.hpp"
#include "streamweave/error.hpp"
#include "streamweave/log.hpp"
#include "streamweave/models.hpp"
#include "streamweave/stats.hpp"
#include "streamweave/wire.hpp"

namespace streamweave::edge {

enum class IidMode { AssumeIID, Thinning, MDependence };

struct IidConfig {
  IidMode mode = IidMode::AssumeIID;
  std::size_t thinning_factor = 1;
  std::size_t m = 0;

  static IidConfig assume_iid() { return {}; }
  static IidConfig thinning(std::size_t factor) { return {IidMode::Thinning, factor, 0}; }
  static IidConfig m_dependence(std::size_t m) { return {IidMode::MDependence, 1, m}; }
};

struct EdgeConfig {
  /// Per-window budget C. With the default bytes model this is the payload
  /// size excluding the 17-byte header.
  double budget = 0.0;
  alloc::EpsilonStrategy epsilon = alloc::EpsilonStrategy::std_err(1.0);
  stats::DependenceMethod dependence = stats::DependenceMethod::Pearson;
  IidConfig iid;
  /// Heterogeneous per-stream costs; empty selects the default bytes model.
  std::optional<alloc::CostModel> cost_model;
  bool imputation = true;
  /// Overrides the model kind paired with the dependence method (MeanOnly for mean imputation).
  std::optional<models::ModelKind> model_kind;
  std::uint64_t seed = 0;
  alloc::SolveOptions solve;

  void validate() const {
    if (iid.mode == IidMode::Thinning && iid.thinning_factor < 1) {
      throw Error(Errc::ConfigError, "thinning factor must be at least 1");
    }
    if (!(budget >= 0.0)) throw Error(Errc::ConfigError, "budget must be non-negative");
  }
};

struct Sample {
  double value = 0.0;
  std::size_t arrival = 0;
};

class WindowBuffer {
 public:
  WindowBuffer(std::size_t k, std::uint64_t window_id) : window_id_(window_id), streams_(k) {}

  void ingest(std::size_t stream, double value) {
    if (closed_) throw Error(Errc::WindowClosed, "window " + std::to_string(window_id_) + " is closed");
    if (stream >= streams_.size()) throw Error(Errc::UnknownStream, "unknown stream " + std::to_string(stream));
    streams_[stream].push_back({value, next_arrival_++});
  }

  void close() { closed_ = true; }

  [[nodiscard]] bool closed() const noexcept { return closed_; }
  [[nodiscard]] std::uint64_t window_id() const noexcept { return window_id_; }
  [[nodiscard]] std::size_t stream_count() const noexcept { return streams_.size(); }
  [[nodiscard]] const std::vector<Sample>& stream(std::size_t i) const { return streams_.at(i); }

  [[nodiscard]] std::vector<double> values(std::size_t i) const {
    std::vector<double> out;
    out.reserve(streams_.at(i).size());
    for (const auto& s : streams_[i]) out.push_back(s.value);
    return out;
  }

 private:
  std::uint64_t window_id_;
  std::vector<std::vector<Sample>> streams_;
  std::size_t next_arrival_ = 0;
  bool closed_ = false;
};

struct IidResult {
  std::vector<double> samples;
  double penalty = 0.0;
};

[[nodiscard]] inline IidResult apply_iid_mode(std::span<const double> samples, const IidConfig& cfg) {
  IidResult r;
  switch (cfg.mode) {
    case IidMode::AssumeIID:
      r.samples.assign(samples.begin(), samples.end());
      break;
    case IidMode::Thinning: {
      const std::size_t t = std::max<std::size_t>(cfg.thinning_factor, 1);
      for (std::size_t i = 0; i < samples.size(); i += t) r.samples.push_back(samples[i]);
      break;
    }
    case IidMode::MDependence:
      r.samples.assign(samples.begin(), samples.end());
      for (std::size_t j = 1; j <= cfg.m && j < samples.size(); ++j) {
        r.penalty += 2.0 * std::max(stats::autocovariance(samples, j), 0.0);
      }
      break;
  }
  return r;
}

/// Everything computed from a window before any allocation is chosen.
struct WindowAnalysis {
  std::uint64_t window_id = 0;
  std::vector<std::uint32_t> stream_ids;  // original ids of included streams
  std::vector<std::vector<double>> samples;  // post iid-mode
  std::vector<stats::StreamStats> stats;
  std::vector<models::CompactModel> models;  // one per included stream
  alloc::ProblemInstance instance;
  bool default_costs = true;
};

struct WindowResult {
  wire::WindowPayload payload;
  alloc::AllocationPlan plan;
  WindowAnalysis analysis;
  double solve_ms = 0.0;
};

namespace detail {

inline std::size_t aligned_length(const std::vector<double>& a, const std::vector<double>& b) {
  return std::min(a.size(), b.size());
}

}  // namespace detail

/// Runs the pre-solve part of the pipeline: iid handling, moments,
/// dependence, predictor selection, model fitting and instance assembly.
[[nodiscard]] inline WindowAnalysis analyze(const WindowBuffer& buffer, const EdgeConfig& cfg) {
  cfg.validate();
  WindowAnalysis a;
  a.window_id = buffer.window_id();
  std::vector<double> penalties;
  for (std::size_t i = 0; i < buffer.stream_count(); ++i) {
    auto r = apply_iid_mode(buffer.values(i), cfg.iid);
    if (r.samples.size() < 2) {
      log::info("window " + std::to_string(a.window_id) + ": stream " + std::to_string(i) + " has " +
                std::to_string(r.samples.size()) + " usable samples, skipped");
      continue;
    }
    a.stream_ids.push_back(static_cast<std::uint32_t>(i));
    a.samples.push_back(std::move(r.samples));
    penalties.push_back(r.penalty);
  }
  const std::size_t k = a.samples.size();
  for (const auto& s : a.samples) a.stats.push_back(stats::compute_stats(s));

  auto& inst = a.instance;
  inst.k = k;
  inst.predictors.assign(k, alloc::kNoPredictor);
  inst.explained_variance.assign(k, 0.0);
  a.models.resize(k);
  if (k == 0) return a;

  const auto kind = cfg.model_kind.value_or(models::paired_kind(cfg.dependence));
  if (cfg.imputation && k >= 2) {
    const auto dep = stats::dependence_matrix(a.samples, cfg.dependence);
    inst.predictors = alloc::select_predictors(dep);
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t p = inst.predictors[i];
      const std::size_t n = detail::aligned_length(a.samples[i], a.samples[p]);
      const std::span<const double> target(a.samples[i].data(), n);
      const std::span<const double> predictor(a.samples[p].data(), n);
      auto m = models::fit_or_mean(target, predictor, kind, p);
      // Explained variance is measured against the whole window's variance.
      m.explained_variance = std::min(m.explained_variance, a.stats[i].variance);
      inst.explained_variance[i] = m.explained_variance;
      a.models[i] = std::move(m);
    }
  }

  inst.arrivals.resize(k);
  inst.variances.resize(k);
  inst.means.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    inst.arrivals[i] = a.samples[i].size();
    inst.variances[i] = a.stats[i].variance;
    inst.means[i] = a.stats[i].mean;
  }
  inst.weights = alloc::default_weights(inst.means);
  inst.epsilons = alloc::compute_epsilons(a.stats, cfg.epsilon);
  inst.autocovariance_penalty = std::move(penalties);

  if (cfg.cost_model) {
    a.default_costs = false;
    inst.cost_model.per_sample_cost.resize(k);
    inst.cost_model.model_cost.resize(k);
    for (std::size_t i = 0; i < k; ++i) {
      const auto id = a.stream_ids[i];
      if (id >= cfg.cost_model->per_sample_cost.size() || id >= cfg.cost_model->model_cost.size()) {
        throw Error(Errc::ConfigError, "cost model has no entry for stream " + std::to_string(id));
      }
      inst.cost_model.per_sample_cost[i] = cfg.cost_model->per_sample_cost[id];
      inst.cost_model.model_cost[i] = cfg.cost_model->model_cost[id];
    }
    inst.budget = cfg.budget;
  } else {
    inst.cost_model.per_sample_cost.assign(k, static_cast<double>(wire::kSampleBytes));
    inst.cost_model.model_cost.resize(k);
    for (std::size_t i = 0; i < k; ++i) {
      const auto& m = a.models[i];
      inst.cost_model.model_cost[i] =
          static_cast<double>(m.coefficients.empty() ? models::model_byte_size(kind) : models::model_byte_size(m));
    }
    // Each included stream pays its fixed framing regardless of the plan.
    inst.budget = std::max(0.0, cfg.budget - static_cast<double>(wire::kStreamOverheadBytes * k));
  }
  return a;
}

/// Window-local sampling RNG derived from the configured seed.
[[nodiscard]] inline std::mt19937_64 window_rng(std::uint64_t seed, std::uint64_t window_id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(window_id), static_cast<std::uint32_t>(window_id >> 32)};
  return std::mt19937_64(seq);
}

/// Draws n_real[i] values uniformly without replacement from each included
/// stream (arrival order kept) and attaches model blocks for imputing streams.
[[nodiscard]] inline wire::WindowPayload assemble(const WindowAnalysis& a, std::span<const std::size_t> n_real,
                                                  std::span<const std::size_t> n_imputed, std::mt19937_64& rng) {
  wire::WindowPayload p;
  p.window_id = a.window_id;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    wire::StreamEntry e;
    e.stream_id = a.stream_ids[i];
    const std::size_t n = std::min(n_real[i], a.samples[i].size());
    e.real_values.reserve(n);
    std::sample(a.samples[i].begin(), a.samples[i].end(), std::back_inserter(e.real_values), n, rng);
    if (n_imputed[i] > 0) {
      const auto& m = a.models[i];
      const std::size_t p_local = a.instance.predictors[i];
      if (p_local == alloc::kNoPredictor) throw Error(Errc::InvalidInstance, "imputation without predictor");
      e.model = wire::ModelBlock{m.kind, m.coefficients, a.stream_ids[p_local],
                                 static_cast<std::uint32_t>(n_imputed[i])};
    }
    p.streams.push_back(std::move(e));
  }
  return p;
}

/// Runs the full window pipeline and closes the buffer.
[[nodiscard]] inline WindowResult close_window(WindowBuffer& buffer, const EdgeConfig& cfg) {
  buffer.close();
  WindowResult r;
  r.analysis = analyze(buffer, cfg);
  r.payload.window_id = buffer.window_id();
  if (r.analysis.instance.k == 0) return r;

  const auto t0 = std::chrono::steady_clock::now();
  r.plan = alloc::solve(r.analysis.instance, cfg.solve);
  r.solve_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  if (!r.plan.feasible) {
    log::warn("window " + std::to_string(buffer.window_id()) + ": budget infeasible");
    r.payload.infeasible = true;
    return r;
  }
  auto rng = window_rng(cfg.seed, buffer.window_id());
  r.payload = assemble(r.analysis, r.plan.n_real, r.plan.n_imputed, rng);
  return r;
}

/// Owns the current window and rolls over to the next one on close.
class Edge {
 public:
  Edge(std::size_t k, EdgeConfig cfg, std::uint64_t first_window = 0)
      : k_(k), cfg_(std::move(cfg)), buffer_(k, first_window) {
    cfg_.validate();
  }

  void ingest(std::size_t stream, double value) { buffer_.ingest(stream, value); }

  WindowResult close_window() {
    auto r = edge::close_window(buffer_, cfg_);
    buffer_ = WindowBuffer(k_, buffer_.window_id() + 1);
    return r;
  }

  [[nodiscard]] const EdgeConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] const WindowBuffer& buffer() const noexcept { return buffer_; }

 private:
  std::size_t k_;
  EdgeConfig cfg_;
  WindowBuffer buffer_;
};

}  // namespace streamweave::edge
