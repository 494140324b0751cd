#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "fgiv/errors.hpp"
#include "fgiv/panel.hpp"
#include "fgiv/types.hpp"

namespace fgiv {

// ---------------------------------------------------------------------------
// estimates
// ---------------------------------------------------------------------------

// Normalization: factors'factors / T = I_r, loadings carry the scale, and the
// sign of each column is fixed by making the largest-magnitude loading entry
// positive. Estimators are rotation-invariant; the convention only pins tests.
struct FactorEstimate {
  Mat factors;      // T x r
  Mat loadings;     // N x r
  Vec eigenvalues;  // top-r eigenvalues of the scaled Gram matrix, descending
  Index r = 0;
  static constexpr const char* normalization = "factors_orthonormal_scaled";
};

struct AnnihilatorMatrix {
  Mat q;  // N x N symmetric idempotent, annihilates the loadings it was built from
};

namespace detail {

// Full symmetric eigendecomposition with eigenvalues returned descending.
struct EigenPairs {
  Vec values;
  Eigen::MatrixXd vectors;  // column k pairs with values(k)
};

inline EigenPairs eigen_descending(const Eigen::MatrixXd& sym) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
  require(solver.info() == Eigen::Success, errc::eigen_failure, "symmetric eigensolver failed");
  const Index m = sym.rows();
  EigenPairs out;
  out.values = solver.eigenvalues().reverse();
  out.vectors.resize(m, m);
  for (Index k = 0; k < m; ++k) out.vectors.col(k) = solver.eigenvectors().col(m - 1 - k);
  return out;
}

// Column signs chosen so each loading column's largest-magnitude entry is
// positive; ties resolve to the first index, keeping output deterministic.
inline void fix_signs(Mat& factors, Mat& loadings) {
  for (Index k = 0; k < loadings.cols(); ++k) {
    Index imax = 0;
    loadings.col(k).cwiseAbs().maxCoeff(&imax);
    if (loadings(imax, k) < 0.0) {
      loadings.col(k) = -loadings.col(k);
      factors.col(k) = -factors.col(k);
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// principal components
// ---------------------------------------------------------------------------

// PCA of a cross-sectionally demeaned panel. Factors are sqrt(T) times the
// top-r eigenvectors of (Y Y')/(NT); loadings are Y'F/T. The decomposition is
// run on whichever Gram side (T x T or N x N) is smaller and mapped across.
inline FactorEstimate pca_factors(const Mat& demeaned, Index r) {
  const Index t_len = demeaned.rows(), n = demeaned.cols();
  const Index m = std::min(n, t_len);
  require(r >= 1 && r <= m - 1, errc::rank_too_large, "need 1 <= r <= min(N,T)-1");

  const double scale = static_cast<double>(n) * static_cast<double>(t_len);
  FactorEstimate fe;
  fe.r = r;

  bool use_t_side = t_len <= n;
  if (!use_t_side) {
    // N-side route needs eigenvalues bounded away from zero to map vectors
    // back to the T side; fall back to the T side when the spectrum collapses.
    const Eigen::MatrixXd gram_n = (demeaned.transpose() * demeaned) / scale;
    auto ep = detail::eigen_descending(gram_n);
    if (ep.values(r - 1) > 1e-12 * std::max(ep.values(0), 0.0)) {
      fe.eigenvalues = ep.values.head(r);
      fe.factors.resize(t_len, r);
      for (Index k = 0; k < r; ++k)
        fe.factors.col(k) =
            demeaned * ep.vectors.col(k) / std::sqrt(static_cast<double>(n) * ep.values(k));
      fe.loadings = demeaned.transpose() * fe.factors / static_cast<double>(t_len);
      detail::fix_signs(fe.factors, fe.loadings);
      return fe;
    }
    use_t_side = true;
  }

  const Eigen::MatrixXd gram_t = (demeaned * demeaned.transpose()) / scale;
  auto ep = detail::eigen_descending(gram_t);
  fe.eigenvalues = ep.values.head(r);
  fe.factors = std::sqrt(static_cast<double>(t_len)) * ep.vectors.leftCols(r);
  fe.loadings = demeaned.transpose() * fe.factors / static_cast<double>(t_len);
  detail::fix_signs(fe.factors, fe.loadings);
  return fe;
}

inline FactorEstimate pca_factors(const Panel& demeaned, Index r) {
  return pca_factors(demeaned.values, r);
}

// ---------------------------------------------------------------------------
// factor count selection (eigenvalue ratio and growth ratio)
// ---------------------------------------------------------------------------

struct FactorCountSelection {
  Index r_er = 0, r_gr = 0;
  Vec er_values, gr_values;     // criterion values at k = 1..kmax
  bool er_at_boundary = false;  // argmax hit kmax; kmax may be too small
  bool gr_at_boundary = false;
  bool er_is_one = false;       // argmax at k=1; criteria assume r >= 1 and are
  bool gr_is_one = false;       // uninformative for factorless data
};

// ER(k) = mu_k / mu_{k+1} and GR(k) = ln(1 + mu*_k) / ln(1 + mu*_{k+1}) with
// mu*_k = mu_k / V(k), V(k) the sum of eigenvalues past k. Ratios whose
// denominator underflows (relative to mu_1) count as +inf and the smallest
// such k wins; the relative guard keeps selection invariant to scaling the
// panel, which an absolute cutoff would break.
inline FactorCountSelection select_num_factors(const Mat& demeaned, Index kmax) {
  const Index m = std::min(demeaned.rows(), demeaned.cols());
  require(kmax >= 1 && kmax <= m - 2, errc::kmax_too_large, "need 1 <= kmax <= min(N,T)-2");

  const double scale = static_cast<double>(demeaned.rows()) * static_cast<double>(demeaned.cols());
  const Eigen::MatrixXd gram =
      demeaned.rows() <= demeaned.cols()
          ? Eigen::MatrixXd((demeaned * demeaned.transpose()) / scale)
          : Eigen::MatrixXd((demeaned.transpose() * demeaned) / scale);
  auto ep = detail::eigen_descending(gram);
  Vec mu = ep.values.cwiseMax(0.0);  // clamp eigensolver noise below zero

  const double guard = 1e-14 * std::max(mu(0), std::numeric_limits<double>::min());
  constexpr double inf = std::numeric_limits<double>::infinity();

  // V(k) = sum of eigenvalues j > k, for k = 0..kmax+1
  Vec v(kmax + 2);
  for (Index k = 0; k <= kmax + 1; ++k) v(k) = mu.segment(k, m - k).sum();

  FactorCountSelection sel;
  sel.er_values.resize(kmax);
  sel.gr_values.resize(kmax);
  for (Index k = 1; k <= kmax; ++k) {
    sel.er_values(k - 1) = mu(k) > guard ? mu(k - 1) / mu(k) : inf;
    const double num = v(k) > guard ? std::log1p(mu(k - 1) / v(k)) : inf;
    const double den = v(k + 1) > guard ? std::log1p(mu(k) / v(k + 1)) : inf;
    double gr;
    if (std::isinf(num))
      gr = inf;  // spectrum exhausted at k; k is the last supported rank
    else if (std::isinf(den) || den <= 0.0)
      gr = 0.0;
    else
      gr = num / den;
    sel.gr_values(k - 1) = gr;
  }

  auto argmax_first = [](const Vec& vals) {
    Index best = 0;
    for (Index i = 1; i < vals.size(); ++i)
      if (vals(i) > vals(best)) best = i;
    return best + 1;  // criteria indexed from k = 1
  };
  sel.r_er = argmax_first(sel.er_values);
  sel.r_gr = argmax_first(sel.gr_values);
  sel.er_at_boundary = sel.r_er == kmax;
  sel.gr_at_boundary = sel.r_gr == kmax;
  sel.er_is_one = sel.r_er == 1;
  sel.gr_is_one = sel.r_gr == 1;
  return sel;
}

inline FactorCountSelection select_num_factors(const Panel& demeaned, Index kmax) {
  return select_num_factors(demeaned.values, kmax);
}

// ---------------------------------------------------------------------------
// annihilator
// ---------------------------------------------------------------------------

// Q = I - L (L'L)^{-1} L', the projection onto the orthogonal complement of
// the loading columns, computed through an orthonormal basis for stability.
inline AnnihilatorMatrix annihilator_matrix(const Mat& loadings) {
  const Index n = loadings.rows(), r = loadings.cols();
  require(r >= 1, errc::dimension_mismatch, "loadings need at least one column");
  require(r < n, errc::rank_deficient_loadings, "r >= N leaves no null space");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> rank_check(loadings);
  require(rank_check.rank() == r, errc::rank_deficient_loadings,
          "loadings are not full column rank");

  Eigen::HouseholderQR<Eigen::MatrixXd> qr(loadings);
  const Eigen::MatrixXd basis =
      qr.householderQ() * Eigen::MatrixXd::Identity(n, r);
  Mat q = Mat::Identity(n, n) - basis * basis.transpose();
  q = 0.5 * (q + Mat(q.transpose()));  // enforce exact symmetry
  return AnnihilatorMatrix{std::move(q)};
}

// Loadings from a demeaned panel span a mean-zero space; appending the
// constant column before building Q makes iota'(Q S) vanish identically in
// every sample, which the instrument's exogeneity identity relies on.
inline Mat augment_with_constant(const Mat& loadings) {
  Mat out(loadings.rows(), loadings.cols() + 1);
  out.col(0).setOnes();
  out.rightCols(loadings.cols()) = loadings;
  return out;
}

// ---------------------------------------------------------------------------
// observed-loading factor (cross-sectional regression per period)
// ---------------------------------------------------------------------------

struct ObservedFactorResult {
  AggregateSeries factor;  // eta_hat_t
  Panel residual;          // demeaned panel minus o_t * eta_hat_t
};

// eta_hat_t = (o~_t' o~_t)^{-1} o~_t' y~_t with o~ the cross-sectionally
// demeaned loading column; loadings may be static (N) or per-period (T x N).
inline ObservedFactorResult observed_loading_factor(const Panel& demeaned, const Mat& loadings) {
  const Index t_len = demeaned.n_periods(), n = demeaned.n_units();
  const bool varying = loadings.rows() > 1;
  require(loadings.cols() == n, errc::dimension_mismatch, "loading width != N");
  require(!varying || loadings.rows() == t_len, errc::dimension_mismatch, "loading length != T");

  ObservedFactorResult out;
  out.factor.label = "eta_observed";
  out.factor.values.resize(t_len);
  out.residual = demeaned;
  for (Index t = 0; t < t_len; ++t) {
    Vec o = varying ? Vec(loadings.row(t).transpose()) : Vec(loadings.row(0).transpose());
    o.array() -= o.mean();
    const double ss = o.squaredNorm();
    require(ss > 1e-24, errc::zero_loading_period,
            "loadings constant in period " + std::to_string(t));
    const double eta = o.dot(demeaned.values.row(t).transpose()) / ss;
    out.factor.values(t) = eta;
    out.residual.values.row(t) -= eta * o.transpose();
  }
  return out;
}

inline ObservedFactorResult observed_loading_factor(const Panel& demeaned, const Vec& loadings) {
  return observed_loading_factor(demeaned, Mat(loadings.transpose()));
}

// ---------------------------------------------------------------------------
// iterative OLS + weighted PCA with exogenous covariates
// ---------------------------------------------------------------------------

struct IterativeOlsPcaResult {
  Vec beta;
  FactorEstimate factors;
  int iterations = 0;
  bool converged = false;
};

// Alternates the GLS slope
//   beta = (sum_t X_t' Theta X_t)^{-1} sum_t X_t' Theta (y~_t - Lambda eta_t)
// with principal components of the covariate-purged panel weighted by Theta
// (eigenvectors of (Y - X beta) Theta (Y - X beta)'), until the slope settles.
// covariates[j] is the T x N panel of the j-th regressor, demeaned like y.
inline IterativeOlsPcaResult iterative_ols_pca(const Mat& demeaned,
                                               const std::vector<Mat>& covariates, Index r,
                                               const Mat& theta, double tol = 1e-6,
                                               int max_iter = 100) {
  const Index t_len = demeaned.rows(), n = demeaned.cols();
  const auto k = static_cast<Index>(covariates.size());
  require(k >= 1, errc::dimension_mismatch, "need at least one covariate");
  for (const auto& x : covariates)
    require(x.rows() == t_len && x.cols() == n, errc::dimension_mismatch,
            "covariate panel dimensions differ from y");
  require(theta.rows() == n && theta.cols() == n, errc::dimension_mismatch,
          "precision matrix must be N x N");

  IterativeOlsPcaResult out;
  out.beta = Vec::Zero(k);

  Mat resid = demeaned;  // y~ - X beta, beta = 0 initially
  for (out.iterations = 1; out.iterations <= max_iter; ++out.iterations) {
    // weighted PCA on the covariate-purged panel
    const Eigen::MatrixXd gram = (resid * theta * resid.transpose()) /
                                 (static_cast<double>(n) * static_cast<double>(t_len));
    auto ep = detail::eigen_descending(gram);
    Mat factors = std::sqrt(static_cast<double>(t_len)) * ep.vectors.leftCols(r);
    Mat loadings = resid.transpose() * factors / static_cast<double>(t_len);
    detail::fix_signs(factors, loadings);

    // GLS slope on the factor-purged system
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(k, k);
    Vec rhs = Vec::Zero(k);
    const Mat defactored = demeaned - factors * loadings.transpose();
    Mat xt(n, k);
    for (Index t = 0; t < t_len; ++t) {
      for (Index j = 0; j < k; ++j) xt.col(j) = covariates[static_cast<std::size_t>(j)].row(t);
      const Mat theta_x = theta * xt;
      a += xt.transpose() * theta_x;
      rhs += theta_x.transpose() * defactored.row(t).transpose();
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
    require(ldlt.info() == Eigen::Success &&
                ldlt.vectorD().minCoeff() > 1e-12 * a.trace() / static_cast<double>(k),
            errc::singular_design, "covariate design is singular under the given weights");
    const Vec beta = ldlt.solve(rhs);

    const double step = (beta - out.beta).cwiseAbs().maxCoeff();
    out.beta = beta;
    out.factors.factors = std::move(factors);
    out.factors.loadings = std::move(loadings);
    out.factors.eigenvalues = ep.values.head(r);
    out.factors.r = r;

    resid = demeaned;
    for (Index j = 0; j < k; ++j) resid -= out.beta(j) * covariates[static_cast<std::size_t>(j)];
    if (step < tol) {
      out.converged = true;
      break;
    }
  }
  if (out.iterations > max_iter) out.iterations = max_iter;
  return out;
}

}  // namespace fgiv
