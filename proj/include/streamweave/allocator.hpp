#pragma once

// Per-window allocation of real and imputed sample counts.
//
// Decision variables are n = (n_r, n_s) in R^{2k}. The objective is the
// weighted variance of the per-stream AVG estimate,
//
//   f(n) = sum_i w_i^2 (sigma_i^2 + penalty_i) / (n_r,i + n_s,i),
//
// which is convex once predictors are fixed. The relaxed program is solved
// with an interior-point method, then rounded to an integer plan.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "streamweave/detail/interior_point.hpp"
#include "streamweave/error.hpp"
#include "streamweave/stats.hpp"

namespace streamweave::alloc {

/// Marks a stream that may not impute in this window.
inline constexpr std::size_t kNoPredictor = std::numeric_limits<std::size_t>::max();

struct CostModel {
  std::vector<double> per_sample_cost;
  std::vector<double> model_cost;  // charged once when the stream imputes anything

  [[nodiscard]] double cost(std::size_t i, double n_real, double n_imputed) const {
    return per_sample_cost[i] * n_real + (n_imputed > 0.0 ? model_cost[i] : 0.0);
  }
};

struct ProblemInstance {
  std::size_t k = 0;
  std::vector<std::size_t> arrivals;
  std::vector<double> variances;
  std::vector<double> means;
  std::vector<double> weights;
  std::vector<double> explained_variance;
  std::vector<std::size_t> predictors;
  std::vector<double> epsilons;
  CostModel cost_model;
  double budget = 0.0;
  std::vector<double> autocovariance_penalty;

  /// Throws InvalidInstance describing the first broken invariant.
  void validate() const {
    auto fail = [](const std::string& what) { throw Error(Errc::InvalidInstance, what); };
    auto sized = [&](std::size_t n, const char* name) {
      if (n != k) fail(std::string(name) + " has " + std::to_string(n) + " entries, expected " + std::to_string(k));
    };
    if (k == 0) fail("no streams");
    sized(arrivals.size(), "arrivals");
    sized(variances.size(), "variances");
    sized(means.size(), "means");
    sized(weights.size(), "weights");
    sized(explained_variance.size(), "explained_variance");
    sized(predictors.size(), "predictors");
    sized(epsilons.size(), "epsilons");
    sized(cost_model.per_sample_cost.size(), "cost_model.per_sample_cost");
    sized(cost_model.model_cost.size(), "cost_model.model_cost");
    sized(autocovariance_penalty.size(), "autocovariance_penalty");
    if (!(budget >= 0.0) || !std::isfinite(budget)) fail("budget must be finite and non-negative");
    for (std::size_t i = 0; i < k; ++i) {
      const auto tag = " for stream " + std::to_string(i);
      if (predictors[i] != kNoPredictor && (predictors[i] >= k || predictors[i] == i)) fail("invalid predictor" + tag);
      if (!(variances[i] >= 0.0)) fail("negative variance" + tag);
      if (!(explained_variance[i] >= 0.0) || explained_variance[i] > variances[i] + 1e-9) {
        fail("explained variance outside [0, variance]" + tag);
      }
      if (!(weights[i] >= 0.0) || !std::isfinite(weights[i])) fail("weight must be finite and non-negative" + tag);
      if (!(epsilons[i] >= 0.0)) fail("negative epsilon" + tag);
      if (!(autocovariance_penalty[i] >= 0.0)) fail("negative penalty" + tag);
      if (!(cost_model.per_sample_cost[i] >= 0.0) || !(cost_model.model_cost[i] >= 0.0)) fail("negative cost" + tag);
    }
  }
};

struct AllocationPlan {
  std::vector<std::size_t> n_real;
  std::vector<std::size_t> n_imputed;
  std::vector<std::size_t> predictors;
  double objective_value = 0.0;
  double relaxed_objective = 0.0;
  bool feasible = false;
  double kkt_residual = 0.0;
  double minimal_cost = 0.0;  // cost of n_r = 2, n_s = 0 for every stream
  int iterations = 0;
};

/// Thrown when the interior-point method does not reach the KKT tolerance.
class SolverStalled : public Error {
 public:
  SolverStalled(std::vector<double> best_iterate, double residual)
      : Error(Errc::SolverStalled, "relative KKT residual " + std::to_string(residual) + " after iteration limit"),
        best_iterate_(std::move(best_iterate)),
        residual_(residual) {}

  [[nodiscard]] const std::vector<double>& best_iterate() const noexcept { return best_iterate_; }
  [[nodiscard]] double residual() const noexcept { return residual_; }

 private:
  std::vector<double> best_iterate_;
  double residual_;
};

// ---------------------------------------------------------------------------
// Small building blocks

/// p_i = argmax_{j != i} |dep(i, j)|, smallest index on ties.
[[nodiscard]] inline std::vector<std::size_t> select_predictors(const stats::DependenceMatrix& dep) {
  if (dep.k < 2) throw Error(Errc::NeedTwoStreams, "predictor selection needs at least two streams");
  std::vector<std::size_t> p(dep.k);
  for (std::size_t i = 0; i < dep.k; ++i) {
    std::size_t best = i == 0 ? 1 : 0;
    for (std::size_t j = 0; j < dep.k; ++j) {
      if (j != i && std::abs(dep(i, j)) > std::abs(dep(i, best))) best = j;
    }
    p[i] = best;
  }
  return p;
}

/// Expected shift of the pooled cloud variance estimate when n_s of the
/// n_r + n_s values are imputed by a model explaining `explained_var`.
[[nodiscard]] inline double bias(double n_r, double n_s, double sigma2, double explained_var) {
  if (n_r + n_s < 2.0) throw Error(Errc::UndefinedBias, "bias needs n_r + n_s >= 2");
  return ((n_s - 1.0) * explained_var - n_s * sigma2) / (n_r + n_s - 1.0);
}

/// Bias of the plan as shipped: without imputation the cloud sees only real
/// samples and the variance estimate is unbiased.
[[nodiscard]] inline double plan_bias(std::size_t n_r, std::size_t n_s, double sigma2, double explained_var) {
  if (n_s == 0) return 0.0;
  return bias(static_cast<double>(n_r), static_cast<double>(n_s), sigma2, explained_var);
}

struct EpsilonStrategy {
  enum class Kind { FractionOfVariance, StdErrMultiple };
  Kind kind = Kind::StdErrMultiple;
  double value = 1.0;  // alpha, or the number of standard errors

  static EpsilonStrategy fraction(double alpha) { return {Kind::FractionOfVariance, alpha}; }
  static EpsilonStrategy std_err(double multiple) { return {Kind::StdErrMultiple, multiple}; }
};

[[nodiscard]] inline std::vector<double> compute_epsilons(std::span<const stats::StreamStats> streams,
                                                          EpsilonStrategy strategy) {
  std::vector<double> eps;
  eps.reserve(streams.size());
  for (const auto& s : streams) {
    const double var = s.require_variance();
    eps.push_back(strategy.kind == EpsilonStrategy::Kind::FractionOfVariance
                      ? strategy.value * var
                      : strategy.value * std::sqrt(stats::variance_of_variance(s)));
  }
  return eps;
}

/// w_i = 1 / max(|mu_i|, 1e-6)
[[nodiscard]] inline std::vector<double> default_weights(std::span<const double> means) {
  std::vector<double> w;
  w.reserve(means.size());
  for (double m : means) w.push_back(1.0 / std::max(std::abs(m), 1e-6));
  return w;
}

namespace detail {
inline double effective_variance(const ProblemInstance& inst, std::size_t i) {
  return inst.weights[i] * inst.weights[i] * (inst.variances[i] + inst.autocovariance_penalty[i]);
}
}  // namespace detail

/// f(n) for n = (n_r, n_s) of length 2k.
[[nodiscard]] inline double objective(std::span<const double> n, const ProblemInstance& inst) {
  double f = 0.0;
  for (std::size_t i = 0; i < inst.k; ++i) {
    const double total = n[i] + n[i + inst.k];
    if (!(total > 0.0)) throw Error(Errc::DivergentObjective, "stream " + std::to_string(i) + " has no samples");
    f += detail::effective_variance(inst, i) / total;
  }
  return f;
}

/// z' H(n) z in closed form: sum_i psi_i (z_i + z_{i+k})^2.
[[nodiscard]] inline double hessian_quadratic_form(std::span<const double> n, std::span<const double> z,
                                                   const ProblemInstance& inst) {
  double q = 0.0;
  for (std::size_t i = 0; i < inst.k; ++i) {
    const double t = n[i] + n[i + inst.k];
    const double psi = 2.0 * detail::effective_variance(inst, i) / (t * t * t);
    const double zz = z[i] + z[i + inst.k];
    q += psi * zz * zz;
  }
  return q;
}

/// Largest |bias| for which the imputed estimator is no worse in MSE than the
/// standard one. Diagnostic only: it is non-convex in (n_r, n_s).
[[nodiscard]] inline std::optional<double> mse_safe_bias_bound(std::size_t n_r, std::size_t n_s,
                                                               const stats::StreamStats& real,
                                                               const stats::StreamStats& imputed,
                                                               double var_std) {
  if (n_r + n_s < 2) throw Error(Errc::UndefinedBias, "bound needs n_r + n_s >= 2");
  const double denom = static_cast<double>(n_r + n_s - 1);
  double var_new = 0.0;
  if (n_r >= 2) {
    const double a = static_cast<double>(n_r - 1);
    var_new += a * a * stats::variance_of_variance(real);
  }
  if (n_s >= 2) {
    const double b = static_cast<double>(n_s - 1);
    var_new += b * b * stats::variance_of_variance(imputed);
  }
  const double radicand = var_std - var_new / (denom * denom);
  if (radicand < 0.0) return std::nullopt;
  return std::sqrt(radicand);
}

// ---------------------------------------------------------------------------
// Plan validation, independent of the solver

[[nodiscard]] inline double plan_cost(const ProblemInstance& inst, std::span<const std::size_t> n_real,
                                      std::span<const std::size_t> n_imputed) {
  double c = 0.0;
  for (std::size_t i = 0; i < inst.k; ++i) {
    c += inst.cost_model.cost(i, static_cast<double>(n_real[i]), static_cast<double>(n_imputed[i]));
  }
  return c;
}

[[nodiscard]] inline double bias_tolerance(double sigma2) { return 1e-9 * std::max(1.0, sigma2); }

/// Lists every violated constraint of an integer plan (empty when feasible).
[[nodiscard]] inline std::vector<std::string> validate_plan(const ProblemInstance& inst, const AllocationPlan& plan) {
  std::vector<std::string> out;
  if (plan.n_real.size() != inst.k || plan.n_imputed.size() != inst.k) {
    out.emplace_back("plan size mismatch");
    return out;
  }
  for (std::size_t i = 0; i < inst.k; ++i) {
    const auto tag = " (stream " + std::to_string(i) + ")";
    const std::size_t nr = plan.n_real[i];
    const std::size_t ns = plan.n_imputed[i];
    const std::size_t p = inst.predictors[i];
    if (p == i) out.push_back("predictor equals self" + tag);
    if (nr > inst.arrivals[i]) out.push_back("n_real exceeds arrivals" + tag);
    if (ns > 0) {
      if (p == kNoPredictor || p >= inst.k) {
        out.push_back("imputation without predictor" + tag);
      } else if (ns > plan.n_real[p]) {
        out.push_back("n_imputed exceeds predictor's real count" + tag);
      }
    }
    if (nr <= inst.arrivals[i] && ns > inst.arrivals[i] - nr) out.push_back("n_real + n_imputed exceeds arrivals" + tag);
    if (nr + ns < 2) {
      out.push_back("fewer than two samples" + tag);
    } else if (std::abs(plan_bias(nr, ns, inst.variances[i], inst.explained_variance[i])) >
               inst.epsilons[i] + bias_tolerance(inst.variances[i])) {
      out.push_back("bias exceeds epsilon" + tag);
    }
  }
  if (plan_cost(inst, plan.n_real, plan.n_imputed) > inst.budget + 1e-9 * std::max(1.0, inst.budget)) {
    out.emplace_back("budget exceeded");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Solver

struct SolveOptions {
  int max_iterations = 10000;
  double kkt_tolerance = 1e-6;
  int support_passes = 2;
  int max_swap_passes = 10000;
  int max_coordinate_rounds = 50;
};

namespace detail {

/// Integer search state with incremental feasibility checks.
class IntegerSearch {
 public:
  IntegerSearch(const ProblemInstance& inst, std::vector<char> may_impute)
      : inst_(inst), may_impute_(std::move(may_impute)), dependents_(inst.k) {
    for (std::size_t i = 0; i < inst.k; ++i) {
      if (inst.predictors[i] != kNoPredictor) dependents_[inst.predictors[i]].push_back(i);
    }
  }

  std::vector<std::size_t> nr, ns;

  [[nodiscard]] std::size_t cap(std::size_t i) const {
    const std::size_t p = inst_.predictors[i];
    if (p == kNoPredictor || !may_impute_[i] || nr[i] >= inst_.arrivals[i]) return 0;
    // Only values that were not sent can be imputed.
    return std::min(nr[p], inst_.arrivals[i] - nr[i]);
  }

  [[nodiscard]] bool bias_ok(std::size_t i, std::size_t r, std::size_t s) const {
    if (s == 0) return true;
    if (r + s < 2) return false;
    const double b = bias(static_cast<double>(r), static_cast<double>(s), inst_.variances[i], inst_.explained_variance[i]);
    return std::abs(b) <= inst_.epsilons[i] + bias_tolerance(inst_.variances[i]);
  }

  [[nodiscard]] bool stream_ok(std::size_t i) const {
    return nr[i] <= inst_.arrivals[i] && nr[i] + ns[i] >= 2 && ns[i] <= cap(i) && bias_ok(i, nr[i], ns[i]);
  }

  [[nodiscard]] bool around_ok(std::size_t i) const {
    if (!stream_ok(i)) return false;
    for (std::size_t j : dependents_[i]) {
      if (!stream_ok(j)) return false;
    }
    return true;
  }

  [[nodiscard]] double cost() const { return plan_cost(inst_, nr, ns); }
  [[nodiscard]] bool within_budget(double c) const { return c <= inst_.budget + 1e-9 * std::max(1.0, inst_.budget); }

  [[nodiscard]] double term(std::size_t i, std::size_t total) const {
    return effective_variance(inst_, i) / static_cast<double>(total);
  }

  [[nodiscard]] double value() const {
    double f = 0.0;
    for (std::size_t i = 0; i < inst_.k; ++i) f += term(i, nr[i] + ns[i]);
    return f;
  }

  /// Largest n_s in [lo, cap] satisfying the bias bound for the current n_r, if any.
  [[nodiscard]] std::optional<std::size_t> max_feasible_ns(std::size_t i, std::size_t lo) const {
    const std::size_t c = cap(i);
    for (std::size_t s = c + 1; s-- > lo;) {
      if (nr[i] + s >= 2 && bias_ok(i, nr[i], s)) return s;
    }
    return std::nullopt;
  }

  /// Smallest n_s in [lo, cap] that satisfies the bias bound.
  [[nodiscard]] std::optional<std::size_t> min_feasible_ns(std::size_t i, std::size_t lo) const {
    const std::size_t c = cap(i);
    for (std::size_t s = std::max<std::size_t>(lo, 1); s <= c; ++s) {
      if (nr[i] + s >= 2 && bias_ok(i, nr[i], s)) return s;
    }
    return std::nullopt;
  }

  /// Raise every imputing stream to its largest free n_s (no extra cost once the model is paid).
  void fill_free_imputation() {
    bool changed = true;
    while (changed) {
      changed = false;
      for (std::size_t i = 0; i < inst_.k; ++i) {
        if (ns[i] == 0) continue;
        const std::size_t c = cap(i);
        std::size_t best = ns[i];
        for (std::size_t s = c; s > ns[i]; --s) {
          if (bias_ok(i, nr[i], s)) {
            best = s;
            break;
          }
        }
        if (best != ns[i]) {
          ns[i] = best;
          changed = true;
        }
      }
    }
  }

  /// Makes the state feasible, preferring to drop imputation. Returns false when it cannot.
  bool repair() {
    const std::size_t k = inst_.k;
    for (int round = 0; round < 4; ++round) {
      for (std::size_t i = 0; i < k; ++i) {
        nr[i] = std::min(nr[i], inst_.arrivals[i]);
        if (!may_impute_[i] || inst_.predictors[i] == kNoPredictor) ns[i] = 0;
      }
      for (std::size_t i = 0; i < k; ++i) {
        ns[i] = std::min(ns[i], cap(i));
        while (ns[i] > 0 && !bias_ok(i, nr[i], ns[i])) --ns[i];
        if (nr[i] + ns[i] < 2) {
          const std::size_t need = 2 - (nr[i] + ns[i]);
          nr[i] = std::min(inst_.arrivals[i], nr[i] + need);
        }
      }
    }
    for (std::size_t i = 0; i < k; ++i) {
      if (!stream_ok(i)) return false;
    }
    return shed(k);
  }

  /// Sheds cost until the budget holds, leaving stream `frozen` untouched
  /// (pass k to allow every stream). Returns false when it cannot.
  bool shed(std::size_t frozen) {
    const std::size_t k = inst_.k;
    double c = cost();
    while (!within_budget(c)) {
      double best_ratio = std::numeric_limits<double>::infinity();
      int best_kind = -1;
      std::size_t best_i = 0;
      const double f0 = value();
      for (std::size_t i = 0; i < k; ++i) {
        if (i == frozen) continue;
        // drop the model entirely
        if (ns[i] > 0 && inst_.cost_model.model_cost[i] > 0.0 && nr[i] >= 2) {
          const double saved = inst_.cost_model.model_cost[i];
          const double df = term(i, nr[i]) - term(i, nr[i] + ns[i]);
          if (df / saved < best_ratio) {
            best_ratio = df / saved;
            best_kind = 0;
            best_i = i;
          }
        }
        // one fewer real sample, dependents shrink with it
        if (nr[i] > 0 && inst_.cost_model.per_sample_cost[i] > 0.0) {
          const auto saved_ns = ns;
          --nr[i];
          if (settle_dependents(i) && stream_ok(i)) {
            const double df = value() - f0;
            const double ratio = df / inst_.cost_model.per_sample_cost[i];
            if (ratio < best_ratio) {
              best_ratio = ratio;
              best_kind = 1;
              best_i = i;
            }
          }
          ++nr[i];
          ns = saved_ns;
        }
      }
      if (best_kind < 0) {
        // Trim dependents so that predictors can shrink.
        bool trimmed = false;
        for (std::size_t i = 0; i < k && !trimmed; ++i) {
          if (i != frozen && ns[i] > 0 && nr[i] >= 2) {
            ns[i] = 0;
            trimmed = true;
          }
        }
        if (!trimmed) return false;
      } else if (best_kind == 0) {
        ns[best_i] = 0;
      } else {
        --nr[best_i];
        settle_dependents(best_i);
      }
      c = cost();
    }
    return true;
  }

  /// Repeatedly applies the increment with the best objective decrease per unit cost.
  void greedy() {
    const std::size_t k = inst_.k;
    fill_free_imputation();
    double c = cost();
    for (;;) {
      double best_score = 0.0;
      bool best_free = false;
      int best_kind = -1;
      std::size_t best_i = 0, best_target = 0;
      double best_dc = 0.0;
      auto consider = [&](int kind, std::size_t i, std::size_t target, double df, double dc) {
        if (df <= 0.0 || !within_budget(c + dc)) return;
        const bool free = dc <= 0.0;
        const double score = free ? df : df / dc;
        if ((free && !best_free) || (free == best_free && score > best_score * (1.0 + 1e-12))) {
          best_score = score;
          best_free = free;
          best_kind = kind;
          best_i = i;
          best_target = target;
          best_dc = dc;
        }
      };
      for (std::size_t i = 0; i < k; ++i) {
        const std::size_t total = nr[i] + ns[i];
        if (nr[i] < inst_.arrivals[i]) {
          ++nr[i];
          if (around_ok(i)) {
            // include the imputation this unlocks for dependents
            double df = term(i, total) - term(i, total + 1);
            for (std::size_t j : dependents_[i]) {
              if (ns[j] > 0 && ns[j] + 1 <= cap(j) && bias_ok(j, nr[j], ns[j] + 1)) {
                df += term(j, nr[j] + ns[j]) - term(j, nr[j] + ns[j] + 1);
              }
            }
            consider(0, i, nr[i], df, inst_.cost_model.per_sample_cost[i]);
          }
          --nr[i];
        }
        if (ns[i] == 0 && cap(i) > 0) {
          if (auto s = max_feasible_ns(i, 1); s && *s > 0) {
            consider(1, i, *s, term(i, total) - term(i, nr[i] + *s), inst_.cost_model.model_cost[i]);
          }
        } else if (ns[i] > 0 && ns[i] < cap(i) && bias_ok(i, nr[i], ns[i] + 1)) {
          consider(1, i, ns[i] + 1, term(i, total) - term(i, total + 1), 0.0);
        }
      }
      if (best_kind < 0) break;
      if (best_kind == 0) {
        nr[best_i] = best_target;
      } else {
        ns[best_i] = best_target;
      }
      c += best_dc;
      fill_free_imputation();
      c = cost();
    }
  }

  /// Pairwise exchange moves: one decrement plus one increment, followed by
  /// free imputation. Best improvement per pass.
  void local_search(int max_passes) {
    const std::size_t k = inst_.k;
    for (int pass = 0; pass < max_passes; ++pass) {
      const double f0 = value();
      double best_f = f0 * (1.0 - 1e-12);
      std::vector<std::size_t> best_nr, best_ns;
      const auto base_nr = nr;
      const auto base_ns = ns;
      for (std::size_t a = 0; a < 2 * k; ++a) {
        for (int da : {-1, +1}) {
          for (std::size_t b = 0; b < 2 * k; ++b) {
            if (b == a) continue;
            for (int db : {-1, +1}) {
              if (da == db) continue;
              nr = base_nr;
              ns = base_ns;
              if (!step(a, da) || !step(b, db)) continue;
              if (!all_ok()) continue;
              fill_free_imputation();
              if (!within_budget(cost())) continue;
              const double f = value();
              if (f < best_f) {
                best_f = f;
                best_nr = nr;
                best_ns = ns;
              }
            }
          }
        }
      }
      if (best_nr.empty()) {
        nr = base_nr;
        ns = base_ns;
        return;
      }
      nr = std::move(best_nr);
      ns = std::move(best_ns);
      greedy();
    }
  }

  /// Large single-stream moves: stream i is reset to any n_r in [0, N_i],
  /// with and without imputation, the other streams shed cost to pay for
  /// it, and greedy() spends what is left. The best few candidates are
  /// polished by local_search() before the best one is taken.
  void coordinate_search(int max_rounds, std::size_t polish_count = 8) {
    const std::size_t k = inst_.k;
    struct Candidate {
      double f;
      std::vector<std::size_t> nr, ns;
    };
    for (int round = 0; round < max_rounds; ++round) {
      const auto base_nr = nr;
      const auto base_ns = ns;
      const double base_f = value();
      std::vector<Candidate> candidates;
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t r = 0; r <= inst_.arrivals[i]; ++r) {
          for (int impute = 0; impute < 2; ++impute) {
            if (impute && cap_for(i, r, base_nr) == 0) continue;
            nr = base_nr;
            ns = base_ns;
            nr[i] = r;
            if (impute) {
              auto s = max_feasible_ns(i, 1);
              if (!s) continue;
              ns[i] = *s;
            } else {
              ns[i] = 0;
            }
            if (!settle_dependents(i) || !stream_ok(i) || !shed(i)) continue;
            greedy();
            if (!all_ok() || !within_budget(cost())) continue;
            if (nr == base_nr && ns == base_ns) continue;
            candidates.push_back({value(), nr, ns});
          }
        }
      }
      const std::size_t keep = std::min(polish_count, candidates.size());
      std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                        [](const Candidate& a, const Candidate& b) { return a.f < b.f; });
      double best_f = base_f * (1.0 - 1e-12);
      std::vector<std::size_t> best_nr, best_ns;
      for (std::size_t c = 0; c < keep; ++c) {
        nr = candidates[c].nr;
        ns = candidates[c].ns;
        local_search(max_rounds);
        if (!all_ok() || !within_budget(cost())) continue;
        if (const double f = value(); f < best_f) {
          best_f = f;
          best_nr = nr;
          best_ns = ns;
        }
      }
      if (best_nr.empty()) {
        nr = base_nr;
        ns = base_ns;
        return;
      }
      nr = std::move(best_nr);
      ns = std::move(best_ns);
    }
  }

  /// Trades imputed values for real ones where the budget allows. The
  /// objective is unchanged; the plan relies less on the model.
  void prefer_real() {
    // Whole-stream swaps first, cheapest first: dropping a model frees its cost.
    for (bool swapped = true; swapped;) {
      swapped = false;
      std::size_t best = inst_.k;
      double best_c = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < inst_.k; ++i) {
        if (ns[i] == 0 || nr[i] + ns[i] > inst_.arrivals[i]) continue;
        const std::size_t s = ns[i];
        nr[i] += s;
        ns[i] = 0;
        const double c = cost();
        if (around_ok(i) && within_budget(c) && c < best_c) {
          best_c = c;
          best = i;
        }
        nr[i] -= s;
        ns[i] = s;
      }
      if (best < inst_.k) {
        nr[best] += ns[best];
        ns[best] = 0;
        swapped = true;
      }
    }
    for (std::size_t i = 0; i < inst_.k; ++i) {
      while (ns[i] > 0 && nr[i] < inst_.arrivals[i]) {
        ++nr[i];
        --ns[i];
        if (!around_ok(i) || !within_budget(cost())) {
          --nr[i];
          ++ns[i];
          break;
        }
      }
    }
  }

  [[nodiscard]] bool all_ok() const {
    for (std::size_t i = 0; i < inst_.k; ++i) {
      if (!stream_ok(i)) return false;
    }
    return true;
  }

 private:
  [[nodiscard]] std::size_t cap_for(std::size_t i, std::size_t r, const std::vector<std::size_t>& base_nr) const {
    const std::size_t p = inst_.predictors[i];
    if (p == kNoPredictor || !may_impute_[i] || r >= inst_.arrivals[i]) return 0;
    return std::min(base_nr[p], inst_.arrivals[i] - r);
  }

  // After n_r of stream i changed, shrink dependents' n_s back into their
  // caps and bias bounds.
  bool settle_dependents(std::size_t i) {
    for (std::size_t j : dependents_[i]) {
      ns[j] = std::min(ns[j], cap(j));
      while (ns[j] > 0 && !bias_ok(j, nr[j], ns[j])) --ns[j];
      if (!stream_ok(j)) return false;
    }
    return true;
  }

  // Applies +/-1 to variable v (n_r for v < k, n_s otherwise). A +1 on an n_s
  // currently at 0 jumps to the smallest bias-feasible value.
  bool step(std::size_t v, int d) {
    const std::size_t k = inst_.k;
    if (v < k) {
      if (d < 0) {
        if (nr[v] == 0) return false;
        --nr[v];
      } else {
        if (nr[v] >= inst_.arrivals[v]) return false;
        ++nr[v];
      }
      return true;
    }
    const std::size_t i = v - k;
    if (d < 0) {
      if (ns[i] == 0) return false;
      --ns[i];
      while (ns[i] > 0 && !bias_ok(i, nr[i], ns[i])) --ns[i];
      return true;
    }
    if (ns[i] == 0) {
      auto s = min_feasible_ns(i, 1);
      if (!s) return false;
      ns[i] = *s;
      return true;
    }
    if (ns[i] >= cap(i)) return false;
    ++ns[i];
    return true;
  }

  const ProblemInstance& inst_;
  std::vector<char> may_impute_;
  std::vector<std::vector<std::size_t>> dependents_;
};

struct Relaxation {
  std::vector<double> x;
  double objective = 0.0;
  double lower_bound = 0.0;
  double kkt = 0.0;
  int iterations = 0;
};

inline Relaxation solve_relaxation(const ProblemInstance& inst, const SolveOptions& opt) {
  const std::size_t k = inst.k;
  // n_s,i is fixed at zero when the stream cannot impute at all.
  std::vector<char> free_ns(k, 0);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t p = inst.predictors[i];
    if (p == kNoPredictor || inst.arrivals[p] == 0) continue;
    const double slope = inst.variances[i] - inst.explained_variance[i] - inst.epsilons[i];
    // With epsilon = 0 and an imperfect model the bias row pins n_s to zero.
    if (inst.epsilons[i] == 0.0 && slope > 0.0) continue;
    free_ns[i] = 1;
  }
  std::vector<int> col(2 * k, -1);
  int nvar = 0;
  for (std::size_t i = 0; i < k; ++i) col[i] = nvar++;
  for (std::size_t i = 0; i < k; ++i) {
    if (free_ns[i]) col[k + i] = nvar++;
  }

  std::vector<Eigen::RowVectorXd> rows;
  std::vector<double> rhs;
  auto row = [&]() {
    rows.emplace_back(Eigen::RowVectorXd::Zero(nvar));
    return rows.size() - 1;
  };
  for (std::size_t i = 0; i < k; ++i) {
    const int r = col[i];
    const int s = col[k + i];
    rows[row()](r) = -1.0;
    rhs.push_back(0.0);
    rows[row()](r) = 1.0;
    rhs.push_back(static_cast<double>(inst.arrivals[i]));
    {
      const auto t = row();
      rows[t](r) = -1.0;
      if (s >= 0) rows[t](s) = -1.0;
      rhs.push_back(-2.0);
    }
    if (s >= 0) {
      rows[row()](s) = -1.0;
      rhs.push_back(0.0);
      const auto c = row();
      rows[c](s) = 1.0;
      rows[c](col[inst.predictors[i]]) -= 1.0;
      rhs.push_back(0.0);
      const auto m = row();
      rows[m](r) = 1.0;
      rows[m](s) = 1.0;
      rhs.push_back(static_cast<double>(inst.arrivals[i]));
      // Relaxed bias row: n_s (sigma^2 - V) <= (n_r + n_s - 1) eps. It holds at
      // n_s = 0 and is implied by the exact bound for n_s >= 1.
      const double eps = inst.epsilons[i];
      const auto b = row();
      rows[b](s) = inst.variances[i] - inst.explained_variance[i] - eps;
      rows[b](r) = -eps;
      rhs.push_back(-eps);
    }
  }
  {
    const auto b = row();
    for (std::size_t i = 0; i < k; ++i) {
      rows[b](col[i]) = inst.cost_model.per_sample_cost[i];
      if (col[k + i] >= 0) {
        const double cap = static_cast<double>(std::min(inst.arrivals[inst.predictors[i]], inst.arrivals[i]));
        rows[b](col[k + i]) = inst.cost_model.model_cost[i] / cap;
      }
    }
    rhs.push_back(inst.budget);
  }

  streamweave::detail::ConvexProgram prog;
  prog.G.resize(static_cast<Eigen::Index>(rows.size()), nvar);
  prog.h.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    prog.G.row(static_cast<Eigen::Index>(r)) = rows[r];
    prog.h(static_cast<Eigen::Index>(r)) = rhs[r];
  }

  std::vector<double> a(k);
  for (std::size_t i = 0; i < k; ++i) a[i] = effective_variance(inst, i);

  // Start: a uniform fraction of the arrivals that fits the budget.
  double full_cost = 0.0;
  for (std::size_t i = 0; i < k; ++i) full_cost += inst.cost_model.per_sample_cost[i] * inst.arrivals[i];
  const double frac = full_cost > 0.0 ? std::clamp(inst.budget / full_cost, 0.05, 0.9) : 0.5;
  prog.x0 = Eigen::VectorXd::Zero(nvar);
  for (std::size_t i = 0; i < k; ++i) {
    prog.x0(col[i]) = std::max(2.0, frac * inst.arrivals[i]);
    if (col[k + i] >= 0) prog.x0(col[k + i]) = 0.5;
  }

  auto totals = [&](const Eigen::VectorXd& x, std::size_t i) {
    return x(col[i]) + (col[k + i] >= 0 ? x(col[k + i]) : 0.0);
  };
  // a/t, continued as its second-order Taylor polynomial below t0 so that
  // infeasible iterates stay in the domain.
  constexpr double t0 = 0.5;
  double scale = 0.0;
  for (std::size_t i = 0; i < k; ++i) scale += a[i] / std::max(totals(prog.x0, i), t0);
  if (!(scale > 0.0)) scale = 1.0;

  prog.value = [=](const Eigen::VectorXd& x) {
    double f = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const double t = totals(x, i);
      if (t >= t0) {
        f += a[i] / t;
      } else {
        const double d = t - t0;
        f += a[i] / t0 - a[i] / (t0 * t0) * d + a[i] / (t0 * t0 * t0) * d * d;
      }
    }
    return f / scale;
  };
  prog.derivatives = [=](const Eigen::VectorXd& x, Eigen::VectorXd& g, Eigen::MatrixXd& H) {
    g.setZero(x.size());
    H.setZero(x.size(), x.size());
    for (std::size_t i = 0; i < k; ++i) {
      const double t = totals(x, i);
      double d1, d2;
      if (t >= t0) {
        d1 = -a[i] / (t * t);
        d2 = 2.0 * a[i] / (t * t * t);
      } else {
        d1 = -a[i] / (t0 * t0) + 2.0 * a[i] / (t0 * t0 * t0) * (t - t0);
        d2 = 2.0 * a[i] / (t0 * t0 * t0);
      }
      d1 /= scale;
      d2 /= scale;
      const int r = col[i];
      const int s = col[k + i];
      g(r) += d1;
      H(r, r) += d2;
      if (s >= 0) {
        g(s) += d1;
        H(s, s) += d2;
        H(r, s) += d2;
        H(s, r) += d2;
      }
    }
  };

  streamweave::detail::IpmOptions io;
  io.max_iterations = opt.max_iterations;
  io.tolerance = opt.kkt_tolerance;
  const auto res = streamweave::detail::solve_interior_point(prog, io);

  Relaxation out;
  out.x.assign(2 * k, 0.0);
  for (std::size_t v = 0; v < 2 * k; ++v) {
    if (col[v] >= 0) out.x[v] = res.x(col[v]);
  }
  if (!res.converged) throw SolverStalled(out.x, res.kkt_residual);
  out.objective = res.objective * scale;
  out.lower_bound = std::min(res.dual_objective, res.objective) * scale;
  out.kkt = res.kkt_residual;
  out.iterations = res.iterations;
  return out;
}

}  // namespace detail

/// Minimal-plan cost: two real samples per stream, nothing imputed.
[[nodiscard]] inline double minimal_cost(const ProblemInstance& inst) {
  double c = 0.0;
  for (std::size_t i = 0; i < inst.k; ++i) c += 2.0 * inst.cost_model.per_sample_cost[i];
  return c;
}

[[nodiscard]] inline AllocationPlan solve(const ProblemInstance& inst, const SolveOptions& opt = {}) {
  inst.validate();
  const std::size_t k = inst.k;
  AllocationPlan plan;
  plan.predictors = inst.predictors;
  plan.minimal_cost = minimal_cost(inst);
  const bool arrivals_ok = std::all_of(inst.arrivals.begin(), inst.arrivals.end(), [](std::size_t n) { return n >= 2; });
  if (!arrivals_ok || plan.minimal_cost > inst.budget + 1e-9 * std::max(1.0, inst.budget)) {
    plan.feasible = false;
    plan.n_real.assign(k, 0);
    plan.n_imputed.assign(k, 0);
    return plan;
  }

  const auto relax = detail::solve_relaxation(inst, opt);
  plan.relaxed_objective = relax.lower_bound;
  plan.kkt_residual = relax.kkt;
  plan.iterations = relax.iterations;

  auto round_with = [&](const std::vector<char>& support, std::vector<std::size_t>& nr, std::vector<std::size_t>& ns) {
    detail::IntegerSearch search(inst, support);
    search.nr.resize(k);
    search.ns.resize(k);
    for (std::size_t i = 0; i < k; ++i) {
      search.nr[i] = static_cast<std::size_t>(std::floor(std::max(0.0, relax.x[i]) + 1e-7));
      search.ns[i] = support[i] ? static_cast<std::size_t>(std::floor(std::max(0.0, relax.x[k + i]) + 1e-7)) : 0;
      if (support[i] && search.ns[i] == 0 && relax.x[k + i] > 1e-3) search.ns[i] = 1;
    }
    if (!search.repair()) {
      search.nr.assign(k, 2);
      search.ns.assign(k, 0);
      for (std::size_t i = 0; i < k; ++i) search.nr[i] = std::min<std::size_t>(2, inst.arrivals[i]);
    }
    search.greedy();
    nr = search.nr;
    ns = search.ns;
    return search.value();
  };

  std::vector<char> eligible(k, 0);
  for (std::size_t i = 0; i < k; ++i) eligible[i] = inst.predictors[i] != kNoPredictor ? 1 : 0;

  std::vector<char> best_support;
  std::vector<std::size_t> best_nr, best_ns;
  double best_f = std::numeric_limits<double>::infinity();
  auto try_support = [&](const std::vector<char>& support) {
    std::vector<std::size_t> nr, ns;
    const double f = round_with(support, nr, ns);
    if (f < best_f * (1.0 - 1e-12)) {
      best_f = f;
      best_support = support;
      best_nr = std::move(nr);
      best_ns = std::move(ns);
      return true;
    }
    return false;
  };

  std::vector<char> from_relaxation(k, 0);
  for (std::size_t i = 0; i < k; ++i) from_relaxation[i] = eligible[i] && relax.x[k + i] > 0.5 ? 1 : 0;
  try_support(from_relaxation);
  try_support(eligible);
  try_support(std::vector<char>(k, 0));

  // Toggle individual streams in and out of the imputing set.
  for (int pass = 0; pass < opt.support_passes; ++pass) {
    bool improved = false;
    for (std::size_t i = 0; i < k; ++i) {
      if (!eligible[i]) continue;
      auto support = best_support;
      support[i] = support[i] ? 0 : 1;
      improved |= try_support(support);
    }
    if (!improved) break;
  }

  detail::IntegerSearch polish(inst, eligible);
  polish.nr = best_nr;
  polish.ns = best_ns;
  polish.local_search(opt.max_swap_passes);
  polish.coordinate_search(opt.max_coordinate_rounds);
  polish.local_search(opt.max_swap_passes);
  polish.prefer_real();

  plan.n_real = polish.nr;
  plan.n_imputed = polish.ns;
  plan.objective_value = polish.value();
  plan.feasible = true;
  return plan;
}

}  // namespace streamweave::alloc
