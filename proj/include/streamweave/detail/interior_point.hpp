#pragma once

// Primal-dual interior-point method (Mehrotra predictor-corrector) for
//
//   minimize f(x)  subject to  G x <= h
//
// with f smooth and convex. Starts from any x; slacks absorb infeasibility.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

namespace streamweave::detail {

struct ConvexProgram {
  std::function<double(const Eigen::VectorXd&)> value;
  // Fills gradient and (dense) Hessian at x.
  std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&, Eigen::MatrixXd&)> derivatives;
  Eigen::MatrixXd G;
  Eigen::VectorXd h;
  Eigen::VectorXd x0;
};

struct IpmOptions {
  int max_iterations = 10000;
  double tolerance = 1e-6;       // contract: relative KKT residual
  double target_tolerance = 1e-11;  // keep iterating while cheap progress is possible
};

struct IpmResult {
  Eigen::VectorXd x;
  Eigen::VectorXd z;
  double objective = 0.0;
  double dual_objective = 0.0;  // Lagrangian value, a lower bound at convergence
  double kkt_residual = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
};

namespace ipm {

inline double max_step(const Eigen::VectorXd& v, const Eigen::VectorXd& dv) {
  double a = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (dv(i) < 0.0) a = std::min(a, -v(i) / dv(i));
  }
  return a;
}

struct Residuals {
  Eigen::VectorXd dual, primal;
  double f = 0.0;
  double kkt = 0.0;
};

}  // namespace ipm

inline IpmResult solve_interior_point(const ConvexProgram& prog, const IpmOptions& opt = {}) {
  using Eigen::MatrixXd;
  using Eigen::VectorXd;

  const Eigen::Index n = prog.x0.size();
  const Eigen::Index m = prog.h.size();

  // Row-normalize the constraints.
  MatrixXd G = prog.G;
  VectorXd h = prog.h;
  for (Eigen::Index r = 0; r < m; ++r) {
    const double scale = G.row(r).cwiseAbs().maxCoeff();
    if (scale > 0.0) {
      G.row(r) /= scale;
      h(r) /= scale;
    }
  }
  const double h_norm = h.size() > 0 ? h.cwiseAbs().maxCoeff() : 0.0;

  VectorXd x = prog.x0;
  VectorXd s = (h - G * x).cwiseMax(1.0);
  VectorXd z = VectorXd::Ones(m);
  VectorXd g(n);
  MatrixXd H(n, n);

  auto residuals = [&](const VectorXd& xv, const VectorXd& sv, const VectorXd& zv, VectorXd& grad) {
    ipm::Residuals r;
    MatrixXd unused(n, n);
    prog.derivatives(xv, grad, unused);
    r.f = prog.value(xv);
    r.dual = grad + G.transpose() * zv;
    r.primal = G * xv + sv - h;
    const double gap = m > 0 ? sv.dot(zv) : 0.0;
    const double g_norm = grad.size() > 0 ? grad.cwiseAbs().maxCoeff() : 0.0;
    const double rd = r.dual.size() > 0 ? r.dual.cwiseAbs().maxCoeff() / (1.0 + g_norm) : 0.0;
    const double rp = r.primal.size() > 0 ? r.primal.cwiseAbs().maxCoeff() / (1.0 + h_norm) : 0.0;
    r.kkt = std::max({rd, rp, gap / (1.0 + std::abs(r.f))});
    return r;
  };

  IpmResult best;
  best.x = x;
  best.z = z;

  VectorXd grad(n);
  auto res = residuals(x, s, z, grad);
  int stall = 0;
  for (int it = 0; it < opt.max_iterations; ++it) {
    best.iterations = it;
    if (res.kkt < best.kkt_residual) {
      best.x = x;
      best.z = z;
      best.kkt_residual = res.kkt;
      best.objective = res.f;
      best.dual_objective = res.f - z.dot(s) + z.dot(res.primal);
    }
    if (res.kkt <= opt.target_tolerance) break;
    if (res.kkt <= opt.tolerance && stall > 5) break;

    prog.derivatives(x, g, H);
    const double mu = m > 0 ? s.dot(z) / static_cast<double>(m) : 0.0;
    const VectorXd w = z.cwiseQuotient(s);
    MatrixXd K = H + G.transpose() * w.asDiagonal() * G;
    Eigen::LDLT<MatrixXd> ldlt;
    double reg = 0.0;
    for (int attempt = 0; attempt < 8; ++attempt) {
      ldlt.compute(K + reg * MatrixXd::Identity(n, n));
      if (ldlt.info() == Eigen::Success && ldlt.isPositive()) break;
      reg = reg == 0.0 ? 1e-12 * (1.0 + K.diagonal().cwiseAbs().maxCoeff()) : reg * 100.0;
    }

    auto direction = [&](const VectorXd& rc, VectorXd& dx, VectorXd& ds, VectorXd& dz) {
      const VectorXd rhs = -res.dual - G.transpose() * (w.cwiseProduct(res.primal)) + G.transpose() * rc.cwiseQuotient(s);
      dx = ldlt.solve(rhs);
      dz = w.cwiseProduct(G * dx + res.primal) - rc.cwiseQuotient(s);
      ds = -(rc + s.cwiseProduct(dz)).cwiseQuotient(z);
    };

    VectorXd dx, ds, dz;
    VectorXd rc = s.cwiseProduct(z);
    direction(rc, dx, ds, dz);
    const double a_aff = std::min(ipm::max_step(s, ds), ipm::max_step(z, dz));
    const double mu_aff = m > 0 ? (s + a_aff * ds).dot(z + a_aff * dz) / static_cast<double>(m) : 0.0;
    const double sigma = mu > 0.0 ? std::pow(mu_aff / mu, 3.0) : 0.0;
    rc = s.cwiseProduct(z) + ds.cwiseProduct(dz) - VectorXd::Constant(m, sigma * mu);
    direction(rc, dx, ds, dz);

    const double tau = std::max(0.9, 1.0 - mu);
    double alpha = std::min(1.0, tau * std::min(ipm::max_step(s, ds), ipm::max_step(z, dz)));

    // Backtrack on the residual norm; f is convex so this rarely triggers.
    const double old = res.kkt;
    ipm::Residuals trial;
    VectorXd xn, sn, zn;
    for (int bt = 0; bt < 30; ++bt) {
      xn = x + alpha * dx;
      sn = s + alpha * ds;
      zn = z + alpha * dz;
      trial = residuals(xn, sn, zn, grad);
      if (std::isfinite(trial.kkt) && trial.kkt <= (1.0 - 1e-4 * alpha) * old) break;
      if (std::isfinite(trial.kkt) && bt >= 10) break;
      alpha *= 0.5;
    }
    stall = trial.kkt > 0.9 * old ? stall + 1 : 0;
    x = std::move(xn);
    s = std::move(sn);
    z = std::move(zn);
    res = std::move(trial);
  }
  if (res.kkt < best.kkt_residual) {
    best.x = x;
    best.z = z;
    best.kkt_residual = res.kkt;
    best.objective = res.f;
    best.dual_objective = res.f - z.dot(s) + z.dot(res.primal);
  }
  best.converged = best.kkt_residual <= opt.tolerance;
  return best;
}

}  // namespace streamweave::detail
