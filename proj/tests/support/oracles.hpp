#pragma once

// Independent reference implementations used only by the tests.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "streamweave/allocator.hpp"

namespace oracle {

namespace sw = streamweave;

struct GridResult {
  double objective = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> n_real, n_imputed;
  bool found = false;
};

inline double literal_bias(double nr, double ns, double s2, double v) {
  return ((ns - 1) * v - ns * s2) / (nr + ns - 1);
}

// Exhaustive search over integer n_r tuples. For fixed n_r and a fixed set of
// imputing streams the cost no longer depends on n_s, so each imputing stream
// takes its largest bias-feasible n_s.
inline GridResult brute_force(const sw::alloc::ProblemInstance& inst) {
  const std::size_t k = inst.k;
  GridResult best;
  std::vector<std::size_t> nr(k, 0), ns(k, 0);
  auto eval = [&] {
    for (unsigned mask = 0; mask < (1u << k); ++mask) {
      double cost = 0.0, f = 0.0;
      bool ok = true;
      for (std::size_t i = 0; i < k && ok; ++i) {
        ns[i] = 0;
        cost += inst.cost_model.per_sample_cost[i] * static_cast<double>(nr[i]);
        if (mask & (1u << i)) {
          const std::size_t p = inst.predictors[i];
          if (p == sw::alloc::kNoPredictor) { ok = false; break; }
          for (std::size_t s = std::min(nr[p], inst.arrivals[i] - nr[i]); s >= 1; --s) {
            if (nr[i] + s < 2) break;
            const double b = literal_bias(double(nr[i]), double(s), inst.variances[i], inst.explained_variance[i]);
            if (std::abs(b) <= inst.epsilons[i] + sw::alloc::bias_tolerance(inst.variances[i])) { ns[i] = s; break; }
          }
          if (ns[i] == 0) { ok = false; break; }
          cost += inst.cost_model.model_cost[i];
        }
        if (nr[i] + ns[i] < 2) { ok = false; break; }
        f += inst.weights[i] * inst.weights[i] * (inst.variances[i] + inst.autocovariance_penalty[i]) /
             static_cast<double>(nr[i] + ns[i]);
      }
      if (!ok || cost > inst.budget + 1e-9 * std::max(1.0, inst.budget)) continue;
      if (f < best.objective) {
        best.objective = f;
        best.n_real = nr;
        best.n_imputed = ns;
        best.found = true;
      }
    }
  };
  for (;;) {
    eval();
    std::size_t d = 0;
    while (d < k && nr[d] == inst.arrivals[d]) nr[d++] = 0;
    if (d == k) break;
    ++nr[d];
  }
  return best;
}

}  // namespace oracle
