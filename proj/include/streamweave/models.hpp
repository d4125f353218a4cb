#pragma once

// Compact conditional-expectation models E[X_i | X_p] used for cloud imputation.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "streamweave/error.hpp"
#include "streamweave/log.hpp"
#include "streamweave/stats.hpp"

namespace streamweave::models {

enum class ModelKind : std::uint8_t { MeanOnly = 0, Linear = 1, Cubic = 3 };

constexpr std::string_view to_string(ModelKind kind) noexcept {
  switch (kind) {
    case ModelKind::MeanOnly: return "MeanOnly";
    case ModelKind::Linear: return "Linear";
    case ModelKind::Cubic: return "Cubic";
  }
  return "?";
}

[[nodiscard]] constexpr std::size_t coefficient_count(ModelKind kind) noexcept {
  switch (kind) {
    case ModelKind::MeanOnly: return 1;
    case ModelKind::Linear: return 2;
    case ModelKind::Cubic: return 4;
  }
  return 0;
}

/// Kind byte, coefficient-count byte, predictor id (u32) and imputed count (u32).
inline constexpr std::size_t kModelHeaderBytes = 1 + 1 + 4 + 4;

struct CompactModel {
  ModelKind kind = ModelKind::MeanOnly;
  std::vector<double> coefficients;  // ascending degree, constant first
  std::optional<std::size_t> predictor;  // empty iff MeanOnly
  double explained_variance = 0.0;
  double residual_variance = 0.0;

  friend bool operator==(const CompactModel&, const CompactModel&) = default;
};

/// Dependence measure and model kind come as a pair.
[[nodiscard]] constexpr ModelKind paired_kind(stats::DependenceMethod m) noexcept {
  return m == stats::DependenceMethod::Pearson ? ModelKind::Linear : ModelKind::Cubic;
}

[[nodiscard]] inline CompactModel mean_only(std::span<const double> target) {
  if (target.empty()) throw Error(Errc::EmptyWindow, "mean-only model of an empty window");
  const auto s = stats::compute_stats(target);
  return CompactModel{ModelKind::MeanOnly, {s.mean}, std::nullopt, 0.0, s.variance};
}

[[nodiscard]] inline double evaluate(const CompactModel& model, double x) noexcept {
  double acc = 0.0;
  for (auto it = model.coefficients.rbegin(); it != model.coefficients.rend(); ++it) acc = acc * x + *it;
  return acc;
}

[[nodiscard]] inline std::vector<double> predict(const CompactModel& model, std::span<const double> predictor_values) {
  std::vector<double> out;
  out.reserve(predictor_values.size());
  for (double x : predictor_values) out.push_back(evaluate(model, x));
  return out;
}

namespace detail {

inline double sample_variance(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  return stats::compute_stats(v).variance;
}

// Least squares on u = (x - center) / scale, then expand back to powers of x.
inline std::vector<double> fit_cubic(std::span<const double> y, std::span<const double> x) {
  const std::size_t n = x.size();
  const auto sx = stats::compute_stats(x);
  const double center = sx.mean;
  const double scale = std::sqrt(sx.variance);
  Eigen::MatrixXd design(n, 4);
  Eigen::VectorXd rhs(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double u = (x[r] - center) / scale;
    design(r, 0) = 1.0;
    design(r, 1) = u;
    design(r, 2) = u * u;
    design(r, 3) = u * u * u;
    rhs(r) = y[r];
  }
  const Eigen::Matrix4d normal = design.transpose() * design;
  const Eigen::Vector4d atb = design.transpose() * rhs;
  Eigen::ColPivHouseholderQR<Eigen::Matrix4d> qr(normal);
  qr.setThreshold(1e-12);
  if (qr.rank() < 4) throw Error(Errc::DegenerateFit, "cubic design is rank deficient");
  const Eigen::Vector4d beta = qr.solve(atb);

  // sum_j beta_j ((x - c)/s)^j expanded with binomial coefficients.
  static constexpr double binom[4][4] = {{1, 0, 0, 0}, {1, 1, 0, 0}, {1, 2, 1, 0}, {1, 3, 3, 1}};
  std::vector<double> coef(4, 0.0);
  for (int j = 0; j < 4; ++j) {
    const double bj = beta(j) / std::pow(scale, j);
    for (int m = 0; m <= j; ++m) coef[m] += bj * binom[j][m] * std::pow(-center, j - m);
  }
  return coef;
}

}  // namespace detail

/// Least-squares fit of target on predictor. The explained variance is the
/// sample variance of the in-window fitted values, clamped to [0, var(target)].
[[nodiscard]] inline CompactModel fit(std::span<const double> target, std::span<const double> predictor,
                                      ModelKind kind, std::size_t predictor_index = 0) {
  if (kind == ModelKind::MeanOnly) return mean_only(target);
  if (target.size() != predictor.size()) {
    throw Error(Errc::InvalidInstance, "fit needs equal-length target and predictor");
  }
  const std::size_t need = kind == ModelKind::Linear ? 2 : 5;
  if (target.size() < need) {
    throw Error(Errc::InsufficientSamples, "fit needs at least " + std::to_string(need) + " pairs");
  }
  const auto sx = stats::compute_stats(predictor);
  const auto sy = stats::compute_stats(target);
  if (sx.variance <= 0.0) throw Error(Errc::DegenerateFit, "constant predictor");

  CompactModel m;
  m.kind = kind;
  m.predictor = predictor_index;
  if (kind == ModelKind::Linear) {
    double sxy = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) sxy += (predictor[i] - sx.mean) * (target[i] - sy.mean);
    const double slope = sxy / (static_cast<double>(target.size() - 1) * sx.variance);
    m.coefficients = {sy.mean - slope * sx.mean, slope};
  } else {
    m.coefficients = detail::fit_cubic(target, predictor);
  }
  for (double c : m.coefficients) {
    if (!std::isfinite(c)) throw Error(Errc::DegenerateFit, "non-finite coefficient");
  }
  const auto fitted = predict(m, predictor);
  std::vector<double> resid(target.size());
  for (std::size_t i = 0; i < target.size(); ++i) resid[i] = target[i] - fitted[i];
  m.explained_variance = std::clamp(detail::sample_variance(fitted), 0.0, sy.variance);
  m.residual_variance = detail::sample_variance(resid);
  return m;
}

/// fit() that falls back to a mean-only model when the design is degenerate.
[[nodiscard]] inline CompactModel fit_or_mean(std::span<const double> target, std::span<const double> predictor,
                                              ModelKind kind, std::size_t predictor_index) {
  if (kind == ModelKind::MeanOnly) return mean_only(target);
  try {
    return fit(target, predictor, kind, predictor_index);
  } catch (const Error& e) {
    if (e.code() != Errc::DegenerateFit && e.code() != Errc::InsufficientSamples) throw;
    log::info(std::string("model fit fell back to mean-only: ") + e.what());
    return mean_only(target);
  }
}

[[nodiscard]] constexpr std::size_t model_byte_size(ModelKind kind) noexcept {
  return kModelHeaderBytes + 8 * coefficient_count(kind);
}

[[nodiscard]] inline std::size_t model_byte_size(const CompactModel& model) noexcept {
  return kModelHeaderBytes + 8 * model.coefficients.size();
}

}  // namespace streamweave::models
