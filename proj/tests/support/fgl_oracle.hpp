#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>

#include "fgiv/types.hpp"

// Reference minimizer for the penalized precision objective on tiny problems:
//   f(Theta) = -log det(Theta) + tr(S Theta) + rho * sum_{i!=j} w_i w_j |Theta_ij|
// optimized by cyclic golden-section line searches over the free entries of a
// symmetric Theta. Deliberately independent of the library's solver so the two
// can be compared; only suitable for n <= 4.
namespace fgl_oracle {

inline double objective(const fgiv::Mat& s, const fgiv::Mat& theta, double rho,
                        const fgiv::Vec& w_diag) {
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(theta);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.vectorD().minCoeff() <= 0.0)
    return std::numeric_limits<double>::infinity();
  const double log_det = ldlt.vectorD().array().log().sum();
  double pen = 0.0;
  for (fgiv::Index i = 0; i < theta.rows(); ++i)
    for (fgiv::Index j = 0; j < theta.cols(); ++j)
      if (i != j) pen += w_diag(i) * w_diag(j) * std::abs(theta(i, j));
  return -log_det + s.cwiseProduct(theta).sum() + rho * pen;
}

// Golden-section minimization of f along one coordinate over [lo, hi].
template <typename F>
double golden_min(F f, double lo, double hi) {
  constexpr double inv_phi = 0.6180339887498949;
  double a = lo, b = hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < 120; ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  return fc < fd ? c : d;
}

// Best objective reachable by exhaustive cyclic line search; starts from the
// diagonal initializer the library also uses.
inline double brute_force_objective(const fgiv::Mat& s, double rho, const fgiv::Vec& w_diag) {
  const fgiv::Index n = s.rows();
  fgiv::Mat theta = fgiv::Mat::Zero(n, n);
  theta.diagonal() = s.diagonal().cwiseInverse();

  double best = objective(s, theta, rho, w_diag);
  for (int sweep = 0; sweep < 400; ++sweep) {
    for (fgiv::Index i = 0; i < n; ++i)
      for (fgiv::Index j = i; j < n; ++j) {
        const double cur = theta(i, j);
        const double span = 1.0 + std::abs(cur);
        auto along = [&](double x) {
          fgiv::Mat cand = theta;
          cand(i, j) = x;
          cand(j, i) = x;
          return objective(s, cand, rho, w_diag);
        };
        const double x = golden_min(along, cur - span, cur + span);
        if (along(x) < along(cur)) {
          theta(i, j) = x;
          theta(j, i) = x;
        }
      }
    const double now = objective(s, theta, rho, w_diag);
    if (best - now < 1e-12 && sweep > 4) {
      best = std::min(best, now);
      break;
    }
    best = std::min(best, now);
  }
  return best;
}

}  // namespace fgl_oracle
