#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fgiv/covariance.hpp"
#include "fgiv/errors.hpp"
#include "fgiv/factor_model.hpp"
#include "fgiv/panel.hpp"
#include "fgiv/special_functions.hpp"
#include "fgiv/types.hpp"

namespace fgiv {

// ---------------------------------------------------------------------------
// variance machinery
// ---------------------------------------------------------------------------

enum class VarianceKind { hc, hac };

struct VarianceSpec {
  VarianceKind kind = VarianceKind::hc;
  int lags = -1;  // hac only; negative selects the plug-in bandwidth
};

inline int default_hac_lags(Index t_len) {
  return static_cast<int>(std::floor(4.0 * std::pow(static_cast<double>(t_len) / 100.0, 2.0 / 9.0)));
}

inline int resolve_lags(const VarianceSpec& vk, Index t_len) {
  if (vk.kind == VarianceKind::hc) return 0;
  return vk.lags >= 0 ? vk.lags : default_hac_lags(t_len);
}

// Bartlett long-run variance of the product series a_t * b_t:
//   T^-1 sum (a_t b_t)^2 + 2 T^-1 sum_j (1 - j/(m+1)) sum_{t>j} a_t b_t a_{t-j} b_{t-j}
inline double hac_variance(const Vec& a, const Vec& b, int m) {
  const Index t_len = a.size();
  require(b.size() == t_len, errc::dimension_mismatch, "series lengths differ");
  require(m >= 0 && m < t_len, errc::lag_too_large, "need 0 <= m < T");
  const Vec g = a.cwiseProduct(b);
  double v = g.squaredNorm() / static_cast<double>(t_len);
  for (int j = 1; j <= m; ++j) {
    const double w = 1.0 - static_cast<double>(j) / static_cast<double>(m + 1);
    const double cross = g.tail(t_len - j).dot(g.head(t_len - j));
    v += 2.0 * w * cross / static_cast<double>(t_len);
  }
  return v;
}

namespace detail {

// Matrix analogue for GMM scores g_t = Z_t * e_t.
inline Eigen::MatrixXd long_run_weight(const Mat& z, const Vec& resid, int m) {
  const Index t_len = z.rows();
  require(resid.size() == t_len, errc::dimension_mismatch, "residual length != T");
  require(m >= 0 && m < t_len, errc::lag_too_large, "need 0 <= m < T");
  const Mat g = z.array().colwise() * resid.array();
  Eigen::MatrixXd omega = (g.transpose() * g) / static_cast<double>(t_len);
  for (int j = 1; j <= m; ++j) {
    const double w = 1.0 - static_cast<double>(j) / static_cast<double>(m + 1);
    const Eigen::MatrixXd c =
        (g.middleRows(j, t_len - j).transpose() * g.middleRows(0, t_len - j)) /
        static_cast<double>(t_len);
    omega += w * (c + c.transpose());
  }
  return omega;
}

// Weight-matrix factorization with a single ridge rescue; a second failure is
// a hard error rather than a silently regularized estimate.
struct WeightInverse {
  Eigen::LDLT<Eigen::MatrixXd> ldlt;
  bool ridged = false;

  explicit WeightInverse(Eigen::MatrixXd omega) {
    const Index l = omega.rows();
    const double floor = 1e-12 * omega.trace() / static_cast<double>(l);
    ldlt.compute(omega);
    if (ldlt.info() == Eigen::Success && ldlt.vectorD().minCoeff() > floor) return;
    ridged = true;
    omega.diagonal().array() += 1e-10 * omega.trace() / static_cast<double>(l);
    ldlt.compute(omega);
    require(ldlt.info() == Eigen::Success && ldlt.vectorD().minCoeff() > floor,
            errc::singular_weight_matrix, "weight matrix singular after ridge");
  }

  Vec solve(const Vec& v) const { return ldlt.solve(v); }
  Eigen::MatrixXd solve(const Eigen::MatrixXd& v) const { return ldlt.solve(v); }
};

// Residual-maker for a T x r factor block; empty factors give the identity.
struct FactorProjector {
  Mat eta;
  Eigen::LDLT<Eigen::MatrixXd> gram;

  explicit FactorProjector(Mat eta_in) : eta(std::move(eta_in)) {
    if (eta.size() == 0) return;
    gram.compute(Eigen::MatrixXd(eta.transpose() * eta));
    require(gram.info() == Eigen::Success &&
                gram.vectorD().minCoeff() >
                    1e-12 * eta.squaredNorm() / static_cast<double>(eta.cols()),
            errc::singular_design, "factor block is rank deficient");
  }

  Vec apply(const Vec& v) const {
    if (eta.size() == 0) return v;
    return v - eta * gram.solve(Vec(eta.transpose() * v));
  }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// fit report
// ---------------------------------------------------------------------------

struct JStatResult {
  double value = 0.0;
  Index df = 0;
  double p_value = 1.0;
};

struct FirstStage {
  double f_stat = std::numeric_limits<double>::quiet_NaN();
  double r2 = std::numeric_limits<double>::quiet_NaN();
};

struct ElasticityFit {
  Vec estimate;                         // phi alone, or (phi, lambda_E') for GMM supply
  std::vector<std::string> coef_names;  // aligned with estimate
  Vec std_errors;                       // aligned with estimate
  double std_error = std::numeric_limits<double>::quiet_NaN();  // std error of phi
  VarianceKind variance_kind = VarianceKind::hc;
  int hac_lags = 0;
  double t_stat = std::numeric_limits<double>::quiet_NaN();  // phi / se
  std::optional<JStatResult> j_stat;
  FirstStage first_stage;
  AggregateSeries instrument;  // the GIV column used (or first instrument)
  int iterations = 0;
  bool converged = true;
  bool weak_instrument = false;  // first-stage F below 10
  bool cov_failed = false;       // covariance update failed; last valid weights kept
  bool ridge_applied = false;    // a GMM weight matrix needed the ridge rescue
  Vec e_weights;                 // final precision weights (supply estimators)
  Vec beta;                      // covariate slopes (Algorithm-2 style fits)

  double phi() const { return estimate(0); }
};

struct InstrumentSet {
  Mat columns;  // T x l
  std::vector<std::string> roles;

  void validate() const {
    require(columns.cols() >= 1, errc::dimension_mismatch, "need at least one instrument");
    require(static_cast<Index>(roles.size()) == columns.cols(), errc::dimension_mismatch,
            "role count != instrument count");
  }
};

// ---------------------------------------------------------------------------
// instrument construction
// ---------------------------------------------------------------------------

// z_t = S' Q y~_t; with lagged shares z_t = S_{t-1}' Q y~_t for t = 2..T, so
// the output drops the first period and the caller must trim other series.
inline AggregateSeries construct_giv(const Panel& demeaned, const AnnihilatorMatrix& q,
                                     const ShareSeries& shares, bool lag_shares = false) {
  const Index t_len = demeaned.n_periods(), n = demeaned.n_units();
  require(q.q.rows() == n && q.q.cols() == n, errc::dimension_mismatch, "Q size != N");
  require(shares.n_units() == n, errc::dimension_mismatch, "share width != N");
  if (shares.time_varying())
    require(shares.weights.rows() == t_len, errc::dimension_mismatch, "share length != T");

  AggregateSeries z;
  z.label = "z_giv";
  if (!lag_shares) {
    if (!shares.time_varying()) {
      z.values = demeaned.values * (q.q * shares.at(0));
    } else {
      z.values.resize(t_len);
      for (Index t = 0; t < t_len; ++t)
        z.values(t) = demeaned.values.row(t).dot(q.q * shares.at(t));
    }
    return z;
  }
  require(shares.time_varying(), errc::lag_without_time_varying_shares,
          "lagged instrument needs time-varying shares");
  z.values.resize(t_len - 1);
  for (Index t = 1; t < t_len; ++t)
    z.values(t - 1) = demeaned.values.row(t).dot(q.q * shares.at(t - 1));
  return z;
}

// Shared per-draw precomputation: demeaned panel, principal components, the
// annihilator built from [1 | loadings], and the GIV series.
struct PipelineParts {
  Panel demeaned;
  FactorEstimate fe;  // r = 0 leaves factors/loadings empty
  AnnihilatorMatrix q;
  AggregateSeries z;
  bool lagged = false;
};

inline PipelineParts build_pipeline(const Panel& panel, const ShareSeries& shares, Index r,
                                    bool lag_shares = false) {
  panel.validate();
  PipelineParts parts;
  parts.demeaned = demean_cross_section(panel);
  parts.lagged = lag_shares;
  if (r >= 1) {
    parts.fe = pca_factors(parts.demeaned, r);
    parts.q = annihilator_matrix(augment_with_constant(parts.fe.loadings));
  } else {
    parts.q = annihilator_matrix(Mat::Ones(panel.n_units(), 1));
  }
  parts.z = construct_giv(parts.demeaned, parts.q, shares, lag_shares);
  return parts;
}

// ---------------------------------------------------------------------------
// diagnostics
// ---------------------------------------------------------------------------

// OLS of p on instruments plus intercept: R^2 and the heteroskedasticity-
// robust joint F on the instrument coefficients.
inline FirstStage first_stage_diagnostics(const Vec& p, const Mat& instruments) {
  const Index t_len = p.size();
  const Index l = instruments.cols();
  require(instruments.rows() == t_len, errc::dimension_mismatch, "instrument length != T");
  require(t_len > l + 1, errc::dimension_mismatch, "need T > l + 1");

  Mat x(t_len, l + 1);
  x.col(0).setOnes();
  x.rightCols(l) = instruments;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  require(qr.rank() == l + 1, errc::singular_design, "collinear first-stage design");
  const Vec beta = qr.solve(p);
  const Vec resid = p - x * beta;

  const double tss = (p.array() - p.mean()).square().sum();
  FirstStage out;
  out.r2 = tss > 0.0 ? 1.0 - resid.squaredNorm() / tss : 0.0;

  const Eigen::MatrixXd xtx_inv =
      Eigen::MatrixXd(x.transpose() * x).ldlt().solve(Eigen::MatrixXd::Identity(l + 1, l + 1));
  const Mat scores = x.array().colwise() * resid.array();
  const Eigen::MatrixXd meat = scores.transpose() * scores;
  const Eigen::MatrixXd vrob = xtx_inv * meat * xtx_inv;
  const Eigen::MatrixXd v_sub = vrob.bottomRightCorner(l, l);
  const Vec b_sub = beta.tail(l);
  Eigen::LDLT<Eigen::MatrixXd> vldlt(v_sub);
  require(vldlt.info() == Eigen::Success && vldlt.vectorD().minCoeff() > 0.0,
          errc::singular_design, "degenerate robust variance in first stage");
  out.f_stat = b_sub.dot(vldlt.solve(b_sub)) / static_cast<double>(l);
  return out;
}

inline FirstStage first_stage_diagnostics(const AggregateSeries& p, const InstrumentSet& iv) {
  iv.validate();
  return first_stage_diagnostics(p.values, iv.columns);
}

inline JStatResult j_test(const Mat& moments, const Eigen::MatrixXd& omega, Index df) {
  const Index t_len = moments.rows(), l = moments.cols();
  require(omega.rows() == l && omega.cols() == l, errc::dimension_mismatch, "omega size != l");
  require(df >= 1, errc::dimension_mismatch, "need df >= 1");
  Eigen::LDLT<Eigen::MatrixXd> ldlt(omega);
  require(ldlt.info() == Eigen::Success &&
              ldlt.vectorD().minCoeff() > 1e-12 * omega.trace() / static_cast<double>(l),
          errc::singular_weight_matrix, "weight matrix is singular");
  const Vec gbar = moments.colwise().mean();
  JStatResult out;
  out.value = std::max(0.0, static_cast<double>(t_len) * gbar.dot(ldlt.solve(gbar)));
  out.df = df;
  out.p_value = chi2_sf(out.value, static_cast<double>(df));
  return out;
}

// ---------------------------------------------------------------------------
// just-identified ratio estimators
// ---------------------------------------------------------------------------

namespace detail {

struct RatioFit {
  double phi = 0.0;
  double se = 0.0;
  Vec resid;  // projected residual series used for the variance products
};

// phi = (z' M y) / (z' M x) with variance m^-2 * lrv((Mz)_t * resid_t); the
// variance products use the projected instrument so that components of z the
// projection removes in-sample do not inflate the sandwich.
inline RatioFit projected_iv_ratio(const Vec& z, const Vec& y, const Vec& x,
                                   const FactorProjector& proj, const VarianceSpec& vk) {
  const Index t_len = z.size();
  require(y.size() == t_len && x.size() == t_len, errc::dimension_mismatch,
          "series lengths differ");
  const Vec mz = proj.apply(z);
  const Vec mx = proj.apply(x);
  const Vec my = proj.apply(y);
  const double denom = mz.dot(mx);
  const double m_hat = denom / static_cast<double>(t_len);
  require(std::abs(m_hat) >= 1e-10, errc::weak_denominator,
          "instrument-regressor moment is numerically zero");
  RatioFit fit;
  fit.phi = mz.dot(my) / denom;
  fit.resid = my - fit.phi * mx;
  const double v = hac_variance(mz, fit.resid, resolve_lags(vk, t_len)) / (m_hat * m_hat);
  fit.se = std::sqrt(v / static_cast<double>(t_len));
  return fit;
}

inline void finish_ratio_fit(ElasticityFit& out, const RatioFit& fit, const Vec& p, const Vec& z,
                             const VarianceSpec& vk, Index t_len) {
  out.estimate = Vec::Constant(1, fit.phi);
  out.coef_names = {"phi"};
  out.std_errors = Vec::Constant(1, fit.se);
  out.std_error = fit.se;
  out.variance_kind = vk.kind;
  out.hac_lags = resolve_lags(vk, t_len);
  out.t_stat = fit.phi / fit.se;
  out.first_stage = first_stage_diagnostics(p, Mat(z));
  out.weak_instrument = out.first_stage.f_stat < 10.0;
  out.instrument = AggregateSeries{z, "z_giv"};
}

}  // namespace detail

// phi_d = sum d_t z_t / sum p_t z_t
inline ElasticityFit fgiv_demand(const AggregateSeries& d, const AggregateSeries& p,
                                 const AggregateSeries& z, const VarianceSpec& vk = {}) {
  const detail::FactorProjector none{Mat{}};
  const auto fit = detail::projected_iv_ratio(z.values, d.values, p.values, none, vk);
  ElasticityFit out;
  detail::finish_ratio_fit(out, fit, p.values, z.values, vk, z.values.size());
  return out;
}

// ---------------------------------------------------------------------------
// supply: iterated precision-weighted ratio (and its fixed-weight special case)
// ---------------------------------------------------------------------------

struct CovConfig {
  CovMethod method = CovMethod::poet;
  Shrink shrink = Shrink::soft;
  double c_const = 1.0;
  double rho = 0.05;
  bool weighted = true;  // FGL adaptive penalty weights
  bool cv = false;
  int cv_folds = 5;
  Vec cv_grid;  // empty selects a default grid

  Vec grid_or_default() const {
    if (cv_grid.size() > 0) return cv_grid;
    Vec g(5);
    if (method == CovMethod::fgl)
      g << 0.01, 0.02, 0.05, 0.1, 0.2;
    else
      g << 0.5, 0.75, 1.0, 1.5, 2.0;
    return g;
  }
};

namespace detail {

// One covariance refresh on a residual panel, returning the generalized
// inverse-variance aggregation weights E = Sigma^-1 1 / (1' Sigma^-1 1).
// POET uses a factor-split of rank r; FGL expects pre-defactored residuals.
inline Vec covariance_e_weights(const Mat& resid, Index r, const CovConfig& cov,
                                double tuning) {
  if (cov.method == CovMethod::fgl) {
    return fgl_precision(resid, tuning, cov.weighted).e_weights;
  }
  auto core = poet_sigma(resid, r, cov.shrink, tuning);
  SpdFactor factor{Eigen::MatrixXd(core.sigma)};
  Vec w = factor.solve(Vec::Ones(resid.cols()));
  return w / w.sum();
}

inline double covariance_tuning(const Mat& resid, Index r, const CovConfig& cov) {
  if (!cov.cv) return cov.method == CovMethod::fgl ? cov.rho : cov.c_const;
  if (cov.method == CovMethod::fgl)
    return cross_validate_rho(resid, cov.grid_or_default(), cov.cv_folds, cov.weighted);
  return cross_validate_threshold(resid, r, cov.shrink, cov.cv_folds, cov.grid_or_default());
}

}  // namespace detail

// Iterated feasible weighted estimator of the supply elasticity:
//   phi = (z' M_eta y_E) / (z' M_eta p),  E from the current precision matrix,
// starting at E = 1/N and refreshing the precision from y - phi p each pass.
inline ElasticityFit fgiv_supply_alg1(const Panel& panel, const AggregateSeries& p,
                                      const ShareSeries& shares, Index r, const CovConfig& cov,
                                      const VarianceSpec& vk = {}, double tol = 1e-6,
                                      int max_iter = 100, bool lag_shares = false) {
  require(r >= 1, errc::rank_too_large, "need r >= 1");
  require(max_iter >= 1, errc::config_error, "need max_iter >= 1");
  const PipelineParts pipe = build_pipeline(panel, shares, r, lag_shares);
  const Index off = lag_shares ? 1 : 0;
  const Index t_len = panel.n_periods() - off;
  const Index n = panel.n_units();
  require(p.values.size() == panel.n_periods(), errc::dimension_mismatch, "price length != T");

  const Mat y = panel.values.bottomRows(t_len);
  const Vec pv = p.values.tail(t_len);
  const Vec z = pipe.z.values;
  const detail::FactorProjector proj{Mat(pipe.fe.factors.bottomRows(t_len))};

  ElasticityFit out;
  out.e_weights = Vec::Constant(n, 1.0 / static_cast<double>(n));
  out.converged = true;

  auto solve_phi = [&](const Vec& e) {
    return detail::projected_iv_ratio(z, Vec(y * e), pv, proj, vk);
  };
  detail::RatioFit fit = solve_phi(out.e_weights);

  if (cov.method != CovMethod::identity) {
    double tuning = std::numeric_limits<double>::quiet_NaN();
    out.converged = false;
    for (int it = 1; it <= max_iter; ++it) {
      out.iterations = it;
      const Mat resid = y - pv * Eigen::RowVectorXd::Ones(n) * fit.phi;
      try {
        if (std::isnan(tuning)) tuning = detail::covariance_tuning(resid, r, cov);
        out.e_weights = detail::covariance_e_weights(resid, r, cov, tuning);
      } catch (const Error& e) {
        if (e.code() != errc::not_positive_definite && e.code() != errc::no_feasible_c) throw;
        out.cov_failed = true;  // keep the last valid weights
        out.converged = true;
        break;
      }
      const double prev = fit.phi;
      fit = solve_phi(out.e_weights);
      if (std::abs(fit.phi - prev) < tol) {
        out.converged = true;
        break;
      }
    }
  }

  detail::finish_ratio_fit(out, fit, pv, z, vk, t_len);
  return out;
}

// Fixed equal-weight variant: phi = (z' M_eta ybar) / (z' M_eta p). Identical
// to the first pass of the iterated estimator by construction.
inline ElasticityFit misspecified_supply(const Panel& panel, const AggregateSeries& p,
                                         const ShareSeries& shares, Index r,
                                         const VarianceSpec& vk = {}, bool lag_shares = false) {
  CovConfig fixed;
  fixed.method = CovMethod::identity;
  return fgiv_supply_alg1(panel, p, shares, r, fixed, vk, 1e-6, 100, lag_shares);
}

// ---------------------------------------------------------------------------
// supply with exogenous covariates
// ---------------------------------------------------------------------------

// Adds homogeneous-slope covariate panels: alternates the covariate GLS slope
// and weighted principal components, rebuilds the instrument from the purged
// panel, and refreshes the precision weights until (phi, beta) settle.
inline ElasticityFit fgiv_supply_alg2(const Panel& panel, const AggregateSeries& p,
                                      const ShareSeries& shares,
                                      const std::vector<Panel>& covariates, Index r,
                                      const CovConfig& cov, const VarianceSpec& vk = {},
                                      double tol = 1e-6, int max_iter = 100) {
  panel.validate();
  const Index t_len = panel.n_periods(), n = panel.n_units();
  require(p.values.size() == t_len, errc::dimension_mismatch, "price length != T");
  require(r >= 1, errc::rank_too_large, "need r >= 1");
  require(max_iter >= 1, errc::config_error, "need max_iter >= 1");

  std::vector<Mat> x_raw, x_dem;
  for (const auto& c : covariates) {
    require(c.values.rows() == t_len && c.values.cols() == n, errc::dimension_mismatch,
            "covariate panel dimensions differ from y");
    if (c.values.cwiseAbs().maxCoeff() == 0.0) continue;  // degenerate regressor
    x_raw.push_back(c.values);
    Mat d = c.values;
    d.colwise() -= c.values.rowwise().mean();
    x_dem.push_back(std::move(d));
  }
  if (x_raw.empty()) {
    ElasticityFit out = fgiv_supply_alg1(panel, p, shares, r, cov, vk, tol, max_iter);
    out.beta = Vec::Zero(static_cast<Index>(covariates.size()));
    return out;
  }
  const auto k = static_cast<Index>(x_raw.size());

  const Panel demeaned = demean_cross_section(panel);
  Mat theta = Mat::Identity(n, n);
  Vec e = Vec::Constant(n, 1.0 / static_cast<double>(n));

  ElasticityFit out;
  out.converged = false;
  double phi = 0.0;
  Vec beta = Vec::Zero(k);
  double tuning = std::numeric_limits<double>::quiet_NaN();

  AggregateSeries z;
  detail::RatioFit fit;
  Mat eta;

  for (int it = 1; it <= max_iter; ++it) {
    out.iterations = it;
    const auto iop = iterative_ols_pca(demeaned.values, x_dem, r, theta, tol, max_iter);
    beta = iop.beta;
    eta = iop.factors.factors;

    Mat purged = demeaned.values;
    Mat y_net = panel.values;
    for (Index j = 0; j < k; ++j) {
      purged -= beta(j) * x_dem[static_cast<std::size_t>(j)];
      y_net -= beta(j) * x_raw[static_cast<std::size_t>(j)];
    }
    Panel purged_panel = demeaned;
    purged_panel.values = purged;
    const AnnihilatorMatrix q = annihilator_matrix(augment_with_constant(iop.factors.loadings));
    z = construct_giv(purged_panel, q, shares);

    const detail::FactorProjector proj{eta};
    fit = detail::projected_iv_ratio(z.values, Vec(y_net * e), p.values, proj, vk);

    const double step = std::max(std::abs(fit.phi - phi),
                                 it == 1 ? std::numeric_limits<double>::infinity() : 0.0);
    phi = fit.phi;
    if (it > 1 && step < tol) {
      out.converged = true;
      break;
    }
    if (cov.method == CovMethod::identity) continue;  // weights stay fixed

    const Mat resid = y_net - p.values * Eigen::RowVectorXd::Ones(n) * phi;
    try {
      if (std::isnan(tuning)) tuning = detail::covariance_tuning(resid, r, cov);
      e = detail::covariance_e_weights(resid, r, cov, tuning);
      if (cov.method == CovMethod::poet) {
        auto core = detail::poet_sigma(resid, r, cov.shrink, tuning);
        detail::SpdFactor f{Eigen::MatrixXd(core.sigma)};
        theta = f.inverse();
      } else {
        theta = fgl_precision(resid, tuning, cov.weighted).theta;
      }
    } catch (const Error& err) {
      if (err.code() != errc::not_positive_definite && err.code() != errc::no_feasible_c) throw;
      out.cov_failed = true;
      out.converged = true;
      break;
    }
  }

  detail::finish_ratio_fit(out, fit, p.values, z.values, vk, t_len);
  out.e_weights = e;
  out.beta = Vec::Zero(static_cast<Index>(covariates.size()));
  Index slot = 0;
  for (std::size_t j = 0; j < covariates.size(); ++j)
    if (covariates[j].values.cwiseAbs().maxCoeff() != 0.0)
      out.beta(static_cast<Index>(j)) = beta(slot++);
  return out;
}

// ---------------------------------------------------------------------------
// efficient GMM
// ---------------------------------------------------------------------------

namespace detail {

struct GmmCore {
  Vec theta;
  Eigen::MatrixXd avar;  // (A' Omega^-1 A)^-1
  Eigen::MatrixXd omega;
  Vec gbar;
  bool ridged = false;
};

// Linear GMM step: theta = (A' W A)^-1 A' W b with A = Z'F/T, b = Z'y/T.
inline Vec gmm_solve(const Eigen::MatrixXd& a, const Vec& b, const WeightInverse& w,
                     Eigen::MatrixXd* avar_out) {
  const Eigen::MatrixXd wa = w.solve(a);
  Eigen::MatrixXd m = a.transpose() * wa;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(m);
  require(ldlt.info() == Eigen::Success &&
              ldlt.vectorD().minCoeff() > 1e-12 * m.trace() / static_cast<double>(m.rows()),
          errc::singular_weight_matrix, "GMM normal equations are singular");
  if (avar_out)
    *avar_out = ldlt.solve(Eigen::MatrixXd::Identity(m.rows(), m.rows()));
  return ldlt.solve(Vec(wa.transpose() * b));
}

// Two-step GMM for y on F with instruments Z: 2SLS start, efficient reweight.
inline GmmCore two_step_gmm(const Mat& z, const Mat& f, const Vec& y, const VarianceSpec& vk) {
  const Index t_len = z.rows();
  const Eigen::MatrixXd a = (z.transpose() * f) / static_cast<double>(t_len);
  const Vec b = z.transpose() * y / static_cast<double>(t_len);

  WeightInverse w0{Eigen::MatrixXd((z.transpose() * z) / static_cast<double>(t_len))};
  GmmCore out;
  out.ridged = w0.ridged;
  const Vec theta0 = gmm_solve(a, b, w0, nullptr);

  const Vec resid0 = y - f * theta0;
  out.omega = long_run_weight(z, resid0, resolve_lags(vk, t_len));
  WeightInverse w1{out.omega};
  out.ridged = out.ridged || w1.ridged;
  out.theta = gmm_solve(a, b, w1, &out.avar);
  out.gbar = b - a * out.theta;
  return out;
}

inline JStatResult gmm_j_stat(const GmmCore& core, Index t_len, Index df) {
  WeightInverse w{core.omega};
  JStatResult j;
  j.value = std::max(0.0, static_cast<double>(t_len) * core.gbar.dot(w.solve(core.gbar)));
  j.df = df;
  j.p_value = chi2_sf(j.value, static_cast<double>(df));
  return j;
}

inline void fill_gmm_fit(ElasticityFit& out, const GmmCore& core, Index t_len,
                         const VarianceSpec& vk, const Vec& p, const Mat& instruments) {
  out.estimate = core.theta;
  out.std_errors = (core.avar.diagonal() / static_cast<double>(t_len)).cwiseSqrt();
  out.std_error = out.std_errors(0);
  out.variance_kind = vk.kind;
  out.hac_lags = resolve_lags(vk, t_len);
  out.t_stat = out.estimate(0) / out.std_error;
  out.ridge_applied = core.ridged;
  out.first_stage = first_stage_diagnostics(p, instruments);
  out.weak_instrument = out.first_stage.f_stat < 10.0;
}

}  // namespace detail

// Efficient two-step GMM demand estimator with instruments Z = (z_giv, eta).
// An empty factor set reduces to the just-identified ratio estimator.
inline ElasticityFit gmm_demand(const AggregateSeries& d, const AggregateSeries& p,
                                const AggregateSeries& z, const FactorEstimate& factors,
                                const VarianceSpec& vk = {}) {
  const Index t_len = z.values.size();
  require(d.values.size() == t_len && p.values.size() == t_len, errc::dimension_mismatch,
          "series lengths differ");
  const Index r = factors.factors.size() == 0 ? 0 : factors.factors.cols();
  if (r > 0)
    require(factors.factors.rows() == t_len, errc::dimension_mismatch, "factor length != T");

  Mat instruments(t_len, 1 + r);
  instruments.col(0) = z.values;
  if (r > 0) instruments.rightCols(r) = factors.factors;

  {  // degenerate-relevance guard shared with the ratio estimator
    const double m_zp = z.values.dot(p.values) / static_cast<double>(t_len);
    require(r > 0 || std::abs(m_zp) >= 1e-10, errc::weak_denominator,
            "instrument-regressor moment is numerically zero");
  }

  const auto core = detail::two_step_gmm(instruments, Mat(p.values), d.values, vk);
  ElasticityFit out;
  out.coef_names = {"phi"};
  detail::fill_gmm_fit(out, core, t_len, vk, p.values, instruments);
  out.instrument = z;
  out.iterations = 2;
  if (r >= 1) out.j_stat = detail::gmm_j_stat(core, t_len, r);
  return out;
}

// Factors-only instrument set for the demand equation.
inline ElasticityFit bn_fgmm_demand(const AggregateSeries& d, const AggregateSeries& p,
                                    const FactorEstimate& factors, const VarianceSpec& vk = {}) {
  require(factors.factors.size() > 0, errc::dimension_mismatch, "need at least one factor");
  const Index t_len = factors.factors.rows();
  require(d.values.size() == t_len && p.values.size() == t_len, errc::dimension_mismatch,
          "series lengths differ");
  const Index r = factors.factors.cols();

  const auto core = detail::two_step_gmm(Mat(factors.factors), Mat(p.values), d.values, vk);
  ElasticityFit out;
  out.coef_names = {"phi"};
  detail::fill_gmm_fit(out, core, t_len, vk, p.values, Mat(factors.factors));
  out.instrument = AggregateSeries{factors.factors.col(0), "eta_1"};
  out.iterations = 2;
  if (r >= 2) out.j_stat = detail::gmm_j_stat(core, t_len, r - 1);
  return out;
}

namespace detail {

// Iterated efficient GMM for the aggregated supply equation
//   y_Et = phi p_t + lambda_E' eta_t + u_Et
// with instruments Z = (z_giv, eps_hat, eta). The weight matrix, coefficient
// vector, precision weights, and y_E refresh jointly until theta settles.
inline ElasticityFit gmm_supply_core(const Panel& panel, const AggregateSeries& p,
                                     const AggregateSeries& d, const ShareSeries& shares,
                                     Index r, const CovConfig& cov, const VarianceSpec& vk,
                                     double tol, int max_iter) {
  require(r >= 1, errc::rank_too_large, "need r >= 1");
  require(max_iter >= 1, errc::config_error, "need max_iter >= 1");
  const PipelineParts pipe = build_pipeline(panel, shares, r);
  const Index t_len = panel.n_periods(), n = panel.n_units();
  require(p.values.size() == t_len && d.values.size() == t_len, errc::dimension_mismatch,
          "series lengths differ");

  const ElasticityFit demand = gmm_demand(d, p, pipe.z, pipe.fe, vk);
  const Vec eps_hat = d.values - demand.phi() * p.values;

  Mat z(t_len, 2 + r);
  z.col(0) = pipe.z.values;
  z.col(1) = eps_hat;
  z.rightCols(r) = pipe.fe.factors;
  Mat f(t_len, 1 + r);
  f.col(0) = p.values;
  f.rightCols(r) = pipe.fe.factors;

  const Eigen::MatrixXd a = (z.transpose() * f) / static_cast<double>(t_len);
  const int m_lags = resolve_lags(vk, t_len);

  ElasticityFit out;
  out.e_weights = Vec::Constant(n, 1.0 / static_cast<double>(n));
  Vec y_e = panel.values * out.e_weights;

  // 2SLS start at equal weights
  WeightInverse w0{Eigen::MatrixXd((z.transpose() * z) / static_cast<double>(t_len))};
  out.ridge_applied = w0.ridged;
  Vec theta = gmm_solve(a, Vec(z.transpose() * y_e / static_cast<double>(t_len)), w0, nullptr);

  // residual panel for the precision refresh: y net of the common p term for
  // the factor-split estimator, fully defactored for the penalized one
  const Mat loadings_y = panel.values.transpose() * pipe.fe.factors / static_cast<double>(t_len);
  auto residual_panel = [&](double phi) {
    Mat resid = panel.values - p.values * Eigen::RowVectorXd::Ones(n) * phi;
    if (cov.method == CovMethod::fgl)
      resid -= pipe.fe.factors * loadings_y.transpose();
    return resid;
  };

  GmmCore core;
  core.ridged = out.ridge_applied;
  out.converged = false;
  double tuning = std::numeric_limits<double>::quiet_NaN();
  bool cov_frozen = cov.method == CovMethod::identity;

  for (int it = 1; it <= max_iter; ++it) {
    out.iterations = it;
    const Vec resid_t = y_e - f * theta;
    core.omega = long_run_weight(z, resid_t, m_lags);
    WeightInverse w{core.omega};
    core.ridged = core.ridged || w.ridged;
    const Vec b = z.transpose() * y_e / static_cast<double>(t_len);
    const Vec theta_new = gmm_solve(a, b, w, &core.avar);
    const double step = (theta_new - theta).cwiseAbs().maxCoeff();
    theta = theta_new;
    core.theta = theta;
    core.gbar = b - a * theta;

    if (step < tol) {
      out.converged = true;
      break;
    }
    if (!cov_frozen) {
      const Mat resid_panel = residual_panel(theta(0));
      try {
        if (std::isnan(tuning)) tuning = covariance_tuning(resid_panel, r, cov);
        const Index split = cov.method == CovMethod::fgl ? 0 : r;
        out.e_weights = covariance_e_weights(resid_panel, split, cov, tuning);
        y_e = panel.values * out.e_weights;
      } catch (const Error& e) {
        if (e.code() != errc::not_positive_definite && e.code() != errc::no_feasible_c &&
            e.code() != errc::no_convergence)
          throw;
        out.cov_failed = true;
        cov_frozen = true;  // keep the last valid weights, keep iterating theta
      }
    }
  }

  out.coef_names.resize(static_cast<std::size_t>(1 + r));
  out.coef_names[0] = "phi";
  for (Index k = 1; k <= r; ++k)
    out.coef_names[static_cast<std::size_t>(k)] = "lambda_E_" + std::to_string(k);
  out.ridge_applied = core.ridged;
  fill_gmm_fit(out, core, t_len, vk, p.values, z);
  out.instrument = pipe.z;
  out.j_stat = gmm_j_stat(core, t_len, 1);
  return out;
}

}  // namespace detail

inline ElasticityFit gmm_supply_alg3(const Panel& panel, const AggregateSeries& p,
                                     const AggregateSeries& d, const ShareSeries& shares,
                                     Index r, const CovConfig& cov, const VarianceSpec& vk = {},
                                     double tol = 1e-6, int max_iter = 100) {
  CovConfig cfg = cov;
  if (cfg.method == CovMethod::fgl) cfg.method = CovMethod::poet;
  return detail::gmm_supply_core(panel, p, d, shares, r, cfg, vk, tol, max_iter);
}

inline ElasticityFit gmm_supply_alg3prime(const Panel& panel, const AggregateSeries& p,
                                          const AggregateSeries& d, const ShareSeries& shares,
                                          Index r, const CovConfig& cov,
                                          const VarianceSpec& vk = {}, double tol = 1e-6,
                                          int max_iter = 100) {
  CovConfig cfg = cov;
  cfg.method = CovMethod::fgl;
  return detail::gmm_supply_core(panel, p, d, shares, r, cfg, vk, tol, max_iter);
}

// ---------------------------------------------------------------------------
// equal-weight instrument baselines
// ---------------------------------------------------------------------------

struct GkFits {
  ElasticityFit supply;
  ElasticityFit demand;
};

// Baseline instrument Z_t = y_St - ybar_t built from the raw panel, optionally
// partialling the estimated factors out of both equations.
inline GkFits gk_baselines(const Panel& panel, const AggregateSeries& p, const AggregateSeries& d,
                           const ShareSeries& shares, const FactorEstimate& factors,
                           const VarianceSpec& vk = {}, bool augmented = true) {
  panel.validate();
  const Index t_len = panel.n_periods();
  require(p.values.size() == t_len && d.values.size() == t_len, errc::dimension_mismatch,
          "series lengths differ");

  const Vec y_s = aggregate(panel, shares).values;
  const Vec y_bar = panel.values.rowwise().mean();
  const Vec z = y_s - y_bar;

  const detail::FactorProjector proj{augmented ? Mat(factors.factors) : Mat{}};

  GkFits fits;
  const auto sup = detail::projected_iv_ratio(z, y_bar, p.values, proj, vk);
  detail::finish_ratio_fit(fits.supply, sup, p.values, z, vk, t_len);
  fits.supply.instrument.label = "z_gk";

  const auto dem = detail::projected_iv_ratio(z, d.values, p.values, proj, vk);
  detail::finish_ratio_fit(fits.demand, dem, p.values, z, vk, t_len);
  fits.demand.instrument.label = "z_gk";
  return fits;
}

}  // namespace fgiv
