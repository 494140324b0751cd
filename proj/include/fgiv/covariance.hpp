#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "fgiv/errors.hpp"
#include "fgiv/factor_model.hpp"
#include "fgiv/rng.hpp"
#include "fgiv/types.hpp"

namespace fgiv {

enum class CovMethod { identity, poet, fgl };
enum class Shrink { hard, soft };

struct PrecisionEstimate {
  Mat sigma;           // N x N covariance estimate, symmetric positive definite
  Mat theta;           // inverse of sigma
  Vec e_weights;       // theta * 1 / (1' theta 1); sums to 1
  CovMethod method = CovMethod::identity;
  double threshold_constant = std::numeric_limits<double>::quiet_NaN();  // POET C
  double rho = std::numeric_limits<double>::quiet_NaN();                 // FGL penalty
  double sparsity_q = 0.0;   // exponent of the reported sparsity diagnostic
  double omega = std::numeric_limits<double>::quiet_NaN();  // sqrt(log N / T) + 1/sqrt(N)
  double m_n = std::numeric_limits<double>::quiet_NaN();    // max_i sum_j |sigma_ij|^q, reported only
  bool converged = true;
  int iterations = 0;
  std::vector<double> objective_trace;  // FGL objective per sweep, non-increasing
};

inline Vec precision_weights(const Mat& theta) {
  const Index n = theta.rows();
  require(theta.cols() == n && n >= 1, errc::dimension_mismatch, "theta must be square");
  const Eigen::LDLT<Eigen::MatrixXd> ldlt{Eigen::MatrixXd(theta)};
  require(ldlt.info() == Eigen::Success && ldlt.isPositive() &&
              ldlt.vectorD().minCoeff() > 0.0,
          errc::not_positive_definite, "theta is not positive definite");
  Vec w = theta * Vec::Ones(n);
  const double total = w.sum();
  require(std::abs(total) > 1e-300, errc::not_positive_definite, "degenerate weight total");
  return w / total;
}

namespace detail {

// Pivot floor below which a "positive definite" factorization is treated as a
// failure; silent pseudo-inversion would hide a violated eigenvalue bound.
inline double pivot_floor(const Eigen::MatrixXd& m) {
  return 1e-12 * m.trace() / static_cast<double>(m.rows());
}

struct SpdFactor {
  Eigen::LDLT<Eigen::MatrixXd> ldlt;

  explicit SpdFactor(const Eigen::MatrixXd& m) : ldlt(m) {
    require(ldlt.info() == Eigen::Success && ldlt.vectorD().minCoeff() > pivot_floor(m),
            errc::not_positive_definite, "matrix is not positive definite");
  }
  Vec solve(const Vec& b) const { return ldlt.solve(b); }
  Mat inverse() const {
    return ldlt.solve(Eigen::MatrixXd::Identity(ldlt.rows(), ldlt.rows()));
  }
  double log_det() const { return ldlt.vectorD().array().log().sum(); }
};

// Top-r eigenpairs of a symmetric PSD matrix by blocked subspace iteration
// with a full decomposition as fallback. The iterative path wins when the
// kept eigenvalues dominate the bulk, which is the factor-structure case.
struct TopEigen {
  Vec values;               // descending, length r
  Eigen::MatrixXd vectors;  // N x r
};

inline TopEigen top_eigenpairs(const Eigen::MatrixXd& m, Index r) {
  const Index n = m.rows();
  if (r >= n || n <= 64) {
    auto ep = eigen_descending(m);
    return {ep.values.head(std::min(r, n)), ep.vectors.leftCols(std::min(r, n))};
  }
  const Index block = std::min<Index>(n, r + 4);
  Rng rng(0x5eedf00dULL);  // fixed seed: deterministic basis, independent of input
  Eigen::MatrixXd v = Eigen::MatrixXd::NullaryExpr(n, block, [&](Index, Index) { return rng.normal(); });
  const double scale = std::max(m.cwiseAbs().rowwise().sum().maxCoeff(), 1e-300);
  Eigen::VectorXd ritz;
  for (int pass = 0; pass < 60; ++pass) {
    for (int inner = 0; inner < 5; ++inner) {
      v = m * v;
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(v);
      v = qr.householderQ() * Eigen::MatrixXd::Identity(n, block);
    }
    const Eigen::MatrixXd h = v.transpose() * m * v;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> small(h);
    require(small.info() == Eigen::Success, errc::eigen_failure, "subspace Rayleigh-Ritz failed");
    // reorder descending
    Eigen::MatrixXd rot(block, block);
    ritz.resize(block);
    for (Index k = 0; k < block; ++k) {
      rot.col(k) = small.eigenvectors().col(block - 1 - k);
      ritz(k) = small.eigenvalues()(block - 1 - k);
    }
    v = v * rot;
    double worst = 0.0;
    for (Index k = 0; k < r; ++k)
      worst = std::max(worst, (m * v.col(k) - ritz(k) * v.col(k)).cwiseAbs().maxCoeff());
    if (worst <= 1e-11 * scale) return {ritz.head(r), v.leftCols(r)};
  }
  auto ep = eigen_descending(m);  // clustered spectrum; take the exact route
  return {ep.values.head(r), ep.vectors.leftCols(r)};
}

struct PoetCore {
  Mat sigma;
  double omega = 0.0;
};

// Eigenvalue-split threshold estimator of the residual second-moment matrix:
// keep the top-r rank-one terms, threshold the remainder entrywise with
// tau_ij = C * omega * sqrt(alpha_ij), diagonal untouched.
inline PoetCore poet_sigma(const Mat& resid, Index r, Shrink shrink, double c_const) {
  const Index t_len = resid.rows(), n = resid.cols();
  require(n >= 2 && t_len >= 2, errc::dimension_mismatch, "residual panel too small");
  require(r >= 0 && r < n && t_len > r, errc::rank_too_large, "need r < N and T > r");

  const Eigen::MatrixXd second_moment =
      (resid.transpose() * resid) / static_cast<double>(t_len);

  Mat remainder;       // sigma_u before thresholding
  Mat u_hat;           // residuals net of the kept principal components
  if (r > 0) {
    const TopEigen top = top_eigenpairs(second_moment, r);
    Eigen::MatrixXd low_rank = Eigen::MatrixXd::Zero(n, n);
    for (Index k = 0; k < r; ++k)
      low_rank.noalias() += top.values(k) * top.vectors.col(k) * top.vectors.col(k).transpose();
    remainder = second_moment - low_rank;
    u_hat = resid - (resid * top.vectors) * top.vectors.transpose();
  } else {
    remainder = second_moment;
    u_hat = resid;
  }

  const double omega = std::sqrt(std::log(static_cast<double>(n)) / static_cast<double>(t_len)) +
                       1.0 / std::sqrt(static_cast<double>(n));

  // alpha_ij = (1/T) sum_t (u_it u_jt - sigma_ij)^2 = mean of squared products
  // minus sigma_ij^2, since sigma here is exactly the mean of the products.
  const Mat u_sq = u_hat.cwiseProduct(u_hat);
  Mat alpha = (u_sq.transpose() * u_sq) / static_cast<double>(t_len) -
              remainder.cwiseProduct(remainder);
  alpha = alpha.cwiseMax(0.0);

  PoetCore out;
  out.omega = omega;
  out.sigma = remainder;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const double tau = c_const * omega * std::sqrt(alpha(i, j));
      const double x = remainder(i, j);
      if (shrink == Shrink::hard)
        out.sigma(i, j) = std::abs(x) >= tau ? x : 0.0;
      else
        out.sigma(i, j) = std::abs(x) > tau ? (x > 0 ? x - tau : x + tau) : 0.0;
    }
  out.sigma = 0.5 * (out.sigma + Mat(out.sigma.transpose()));
  return out;
}

inline double sparsity_m_n(const Mat& sigma, double q) {
  double worst = 0.0;
  for (Index i = 0; i < sigma.rows(); ++i) {
    double row = 0.0;
    for (Index j = 0; j < sigma.cols(); ++j) {
      const double a = std::abs(sigma(i, j));
      if (a > 0.0) row += q == 0.0 ? 1.0 : std::pow(a, q);
    }
    worst = std::max(worst, row);
  }
  return worst;
}

}  // namespace detail

inline PrecisionEstimate identity_precision(Index n) {
  PrecisionEstimate p;
  p.method = CovMethod::identity;
  p.sigma = Mat::Identity(n, n);
  p.theta = Mat::Identity(n, n);
  p.e_weights = Vec::Constant(n, 1.0 / static_cast<double>(n));
  return p;
}

inline PrecisionEstimate poet_covariance(const Mat& resid, Index r, Shrink shrink,
                                         double c_const, double q = 0.0) {
  auto core = detail::poet_sigma(resid, r, shrink, c_const);
  detail::SpdFactor factor{Eigen::MatrixXd(core.sigma)};
  PrecisionEstimate p;
  p.method = CovMethod::poet;
  p.sigma = std::move(core.sigma);
  p.theta = factor.inverse();
  p.theta = 0.5 * (p.theta + Mat(p.theta.transpose()));
  Vec w = factor.solve(Vec::Ones(p.sigma.rows()));
  p.e_weights = w / w.sum();
  p.threshold_constant = c_const;
  p.sparsity_q = q;
  p.omega = core.omega;
  p.m_n = detail::sparsity_m_n(p.sigma, q);
  return p;
}

inline PrecisionEstimate poet_covariance(const Panel& resid, Index r, Shrink shrink,
                                         double c_const, double q = 0.0) {
  return poet_covariance(resid.values, r, shrink, c_const, q);
}

// Smallest grid C minimizing held-out Frobenius loss between the thresholded
// train estimate and the validation-sample second moment, restricted to C
// whose estimates (train folds and full sample) are positive definite.
inline double cross_validate_threshold(const Mat& resid, Index r, Shrink shrink, int folds,
                                       const Vec& grid) {
  require(grid.size() >= 1, errc::config_error, "empty C grid");
  require(folds >= 2, errc::config_error, "need folds >= 2");
  const Index t_len = resid.rows();
  require(t_len >= 2 * folds, errc::dimension_mismatch, "too few periods for the fold count");

  double best_c = std::numeric_limits<double>::quiet_NaN();
  double best_loss = std::numeric_limits<double>::infinity();
  for (Index gi = 0; gi < grid.size(); ++gi) {
    const double c = grid(gi);
    double loss = 0.0;
    bool feasible = true;
    try {
      detail::SpdFactor full_check{
          Eigen::MatrixXd(detail::poet_sigma(resid, r, shrink, c).sigma)};
      for (int f = 0; f < folds && feasible; ++f) {
        const Index lo = t_len * f / folds;
        const Index hi = t_len * (f + 1) / folds;
        const Index nv = hi - lo;
        Mat train(t_len - nv, resid.cols());
        train.topRows(lo) = resid.topRows(lo);
        train.bottomRows(t_len - hi) = resid.bottomRows(t_len - hi);
        const Mat val = resid.middleRows(lo, nv);
        auto fit = detail::poet_sigma(train, r, shrink, c);
        detail::SpdFactor train_check{Eigen::MatrixXd(fit.sigma)};
        const Mat val_moment = (val.transpose() * val) / static_cast<double>(nv);
        loss += (fit.sigma - val_moment).squaredNorm();
      }
    } catch (const Error& e) {
      if (e.code() != errc::not_positive_definite) throw;
      feasible = false;
    }
    if (feasible && loss < best_loss) {
      best_loss = loss;
      best_c = c;
    }
  }
  require(std::isfinite(best_loss), errc::no_feasible_c,
          "no grid point yields a positive-definite estimate");
  return best_c;
}

inline double cross_validate_threshold(const Panel& resid, Index r, Shrink shrink, int folds,
                                       const Vec& grid) {
  return cross_validate_threshold(resid.values, r, shrink, folds, grid);
}

// ---------------------------------------------------------------------------
// weighted graphical lasso
// ---------------------------------------------------------------------------

// Minimizes  -log det(Theta) + tr(S Theta) + rho * sum_{i != j} w_ij |Theta_ij|
// over positive definite Theta, S the residual second-moment matrix and
// w_ij = sqrt(S_ii S_jj) in the weighted (adaptive) variant, 1 otherwise.
// Solved by primal block coordinate descent: each column's subproblem is the
// lasso  min 1/2 th' A th + s12' th + rho sum w|th|  with A = s22 * Theta11^{-1},
// solved by cyclic coordinate descent; the exact block minimization makes the
// objective non-increasing sweep over sweep. Diagonals are unpenalized.
inline PrecisionEstimate fgl_precision(const Mat& resid, double rho, bool weighted = true,
                                       double tol = 1e-6, int max_iter = 200) {
  require(rho >= 0.0, errc::invalid_rho, "rho must be nonnegative");
  const Index t_len = resid.rows(), n = resid.cols();
  require(t_len >= 2 && n >= 2, errc::dimension_mismatch, "residual panel too small");

  const Mat s = (resid.transpose() * resid) / static_cast<double>(t_len);
  require((s.diagonal().array() > 0.0).all(), errc::not_positive_definite,
          "a unit has zero residual variance");

  Vec w_diag = weighted ? Vec(s.diagonal().cwiseSqrt()) : Vec(Vec::Ones(n));

  Mat theta = Mat::Zero(n, n);
  theta.diagonal() = s.diagonal().cwiseInverse();
  Mat w_inv = Mat::Zero(n, n);  // running Theta^{-1}, maintained in closed form
  w_inv.diagonal() = s.diagonal();

  auto objective = [&](const Mat& th) {
    detail::SpdFactor f{Eigen::MatrixXd(th)};
    double pen = 0.0;
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j)
        if (i != j) pen += w_diag(i) * w_diag(j) * std::abs(th(i, j));
    return -f.log_det() + (s.cwiseProduct(th)).sum() + rho * pen;
  };

  PrecisionEstimate p;
  p.method = CovMethod::fgl;
  p.rho = rho;
  p.objective_trace.reserve(16);

  std::vector<Index> rest(n - 1);
  Eigen::MatrixXd theta11_inv(n - 1, n - 1);
  Vec th12(n - 1), grad(n - 1), b(n - 1), pw(n - 1);

  const auto soft = [](double x, double t) {
    return x > t ? x - t : (x < -t ? x + t : 0.0);
  };

  for (int sweep = 1; sweep <= max_iter; ++sweep) {
    double max_change = 0.0;
    for (Index j = 0; j < n; ++j) {
      Index c = 0;
      for (Index i = 0; i < n; ++i)
        if (i != j) rest[static_cast<std::size_t>(c++)] = i;

      const double s22 = s(j, j);
      for (Index a = 0; a < n - 1; ++a) {
        const Index ia = rest[static_cast<std::size_t>(a)];
        b(a) = s(ia, j);
        pw(a) = rho * w_diag(ia) * w_diag(j);
        th12(a) = theta(ia, j);
        for (Index bb = 0; bb < n - 1; ++bb) {
          const Index ib = rest[static_cast<std::size_t>(bb)];
          theta11_inv(a, bb) = w_inv(ia, ib) - w_inv(ia, j) * w_inv(j, ib) / w_inv(j, j);
        }
      }

      // cyclic coordinate descent on the column lasso, warm-started
      const Eigen::MatrixXd a_mat = s22 * theta11_inv;
      grad = a_mat * th12 + b;
      for (int it = 0; it < 1000; ++it) {
        double step = 0.0;
        for (Index i = 0; i < n - 1; ++i) {
          const double aii = a_mat(i, i);
          const double resid_i = grad(i) - aii * th12(i);
          const double updated = soft(-resid_i, pw(i)) / aii;
          const double delta = updated - th12(i);
          if (delta != 0.0) {
            grad += delta * a_mat.col(i);
            th12(i) = updated;
            step = std::max(step, std::abs(delta));
          }
        }
        if (step < 1e-8) break;
      }

      const Vec u = theta11_inv * th12;
      const double th22 = 1.0 / s22 + th12.dot(u);

      for (Index a = 0; a < n - 1; ++a) {
        const Index ia = rest[static_cast<std::size_t>(a)];
        max_change = std::max(max_change, std::abs(theta(ia, j) - th12(a)));
        theta(ia, j) = th12(a);
        theta(j, ia) = th12(a);
      }
      max_change = std::max(max_change, std::abs(theta(j, j) - th22));
      theta(j, j) = th22;

      // closed-form inverse refresh: with c = th22 - th12' Theta11^{-1} th12
      // = 1/s22 by construction, W11 = Theta11^{-1} + s22 u u', w12 = -s22 u.
      for (Index a = 0; a < n - 1; ++a) {
        const Index ia = rest[static_cast<std::size_t>(a)];
        w_inv(ia, j) = -s22 * u(a);
        w_inv(j, ia) = w_inv(ia, j);
        for (Index bb = 0; bb <= a; ++bb) {
          const Index ib = rest[static_cast<std::size_t>(bb)];
          const double val = theta11_inv(a, bb) + s22 * u(a) * u(bb);
          w_inv(ia, ib) = val;
          w_inv(ib, ia) = val;
        }
      }
      w_inv(j, j) = s22;
    }

    p.objective_trace.push_back(objective(theta));
    p.iterations = sweep;
    if (max_change < tol) {
      p.converged = true;
      break;
    }
    p.converged = false;
  }

  detail::SpdFactor f{Eigen::MatrixXd(theta)};
  p.theta = theta;
  p.sigma = f.inverse();
  p.sigma = 0.5 * (p.sigma + Mat(p.sigma.transpose()));
  Vec wv = theta * Vec::Ones(n);
  p.e_weights = wv / wv.sum();
  p.omega = std::sqrt(std::log(static_cast<double>(n)) / static_cast<double>(t_len)) +
            1.0 / std::sqrt(static_cast<double>(n));
  p.m_n = detail::sparsity_m_n(p.sigma, p.sparsity_q);
  return p;
}

inline PrecisionEstimate fgl_precision(const Panel& resid, double rho, bool weighted = true,
                                       double tol = 1e-6, int max_iter = 200) {
  return fgl_precision(resid.values, rho, weighted, tol, max_iter);
}

// Penalty selection by held-out negative Gaussian log-likelihood; ties break
// to the smallest rho, mirroring the threshold-constant selector.
inline double cross_validate_rho(const Mat& resid, const Vec& grid, int folds, bool weighted) {
  require(grid.size() >= 1, errc::config_error, "empty rho grid");
  require(folds >= 2, errc::config_error, "need folds >= 2");
  const Index t_len = resid.rows();
  require(t_len >= 2 * folds, errc::dimension_mismatch, "too few periods for the fold count");

  double best_rho = std::numeric_limits<double>::quiet_NaN();
  double best_loss = std::numeric_limits<double>::infinity();
  for (Index gi = 0; gi < grid.size(); ++gi) {
    const double rho = grid(gi);
    double loss = 0.0;
    bool feasible = true;
    try {
      for (int f = 0; f < folds; ++f) {
        const Index lo = t_len * f / folds;
        const Index hi = t_len * (f + 1) / folds;
        const Index nv = hi - lo;
        Mat train(t_len - nv, resid.cols());
        train.topRows(lo) = resid.topRows(lo);
        train.bottomRows(t_len - hi) = resid.bottomRows(t_len - hi);
        const Mat val = resid.middleRows(lo, nv);
        auto fit = fgl_precision(train, rho, weighted);
        detail::SpdFactor f_theta{Eigen::MatrixXd(fit.theta)};
        const Mat val_moment = (val.transpose() * val) / static_cast<double>(nv);
        loss += -f_theta.log_det() + fit.theta.cwiseProduct(val_moment).sum();
      }
    } catch (const Error& e) {
      if (e.code() != errc::not_positive_definite) throw;
      feasible = false;
    }
    if (feasible && loss < best_loss) {
      best_loss = loss;
      best_rho = rho;
    }
  }
  require(std::isfinite(best_loss), errc::no_feasible_c, "no feasible rho in the grid");
  return best_rho;
}

inline double cross_validate_rho(const Panel& resid, const Vec& grid, int folds, bool weighted) {
  return cross_validate_rho(resid.values, grid, folds, weighted);
}

}  // namespace fgiv
