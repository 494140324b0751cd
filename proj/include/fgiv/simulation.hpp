#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "fgiv/errors.hpp"
#include "fgiv/estimators.hpp"
#include "fgiv/granularity.hpp"
#include "fgiv/panel.hpp"
#include "fgiv/rng.hpp"
#include "fgiv/special_functions.hpp"
#include "fgiv/types.hpp"

namespace fgiv {

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

enum class Design { d1, d2 };

struct PsiTargets {
  double psi_u = 0.23;      // share of price variance from weighted idiosyncratic shocks
  double psi_u_eta = 0.58;  // share from idiosyncratic plus common shocks

  double psi_u_eps() const { return psi_u + 1.0 - psi_u_eta; }
};

struct BandedParams {
  Index bandwidth = 3;
  double decay = 0.5;
  double variance_low = 0.5;
  double variance_high = 1.0;
};

struct DgpConfig {
  Index n = 100;
  Index t = 400;
  double mu = 0.80;
  double phi_s = 0.1;
  double phi_d = -0.3;
  Index r = 2;
  Design design = Design::d1;
  PsiTargets psi_targets;
  BandedParams banded;
  std::uint64_t seed = 1;

  void validate() const {
    require(n >= 2 && t >= 2, errc::config_error, "need n >= 2 and t >= 2");
    require(mu > 0.0, errc::invalid_mu, "mu must be positive");
    require(phi_d != phi_s, errc::config_error,
            "phi_d must differ from phi_s (price divides by phi_d - phi_s)");
    require(r >= 0, errc::config_error, "r must be nonnegative");
    const auto& ps = psi_targets;
    require(ps.psi_u > 0.0 && ps.psi_u < 1.0 && ps.psi_u_eta > 0.0 && ps.psi_u_eta < 1.0,
            errc::config_error, "psi targets must lie in (0,1)");
    // equality is the factor-free boundary; the variance solve arbitrates it
    require(ps.psi_u <= ps.psi_u_eta, errc::config_error, "need psi_u <= psi_u_eta");
    require(banded.bandwidth >= 0, errc::config_error, "bandwidth must be nonnegative");
    require(banded.decay >= 0.0 && banded.decay < 1.0, errc::config_error,
            "decay must lie in [0,1)");
    require(banded.variance_low > 0.0 && banded.variance_low <= banded.variance_high,
            errc::config_error, "need 0 < variance_low <= variance_high");
  }
};

// ---------------------------------------------------------------------------
// variance-target solve
// ---------------------------------------------------------------------------

struct VarianceTargets {
  double sigma2_u = 1.0;
  double sigma2_lambda = 0.0;
  double sigma2_eps = 0.0;
  bool zero_lambda_variance = false;
};

// With h = sum of squared shares and sigma2_u normalized to 1, the total
// price-shock variance is h / psi_u, and the component variances follow from
//   psi_u    = V(u_S) / V_tot,   V(u_S)       = h
//   psi_ueta = cumulative share, V(lambda'eta) = sigma2_lambda * r * h
//   remainder                    V(eps)        = sigma2_eps.
inline VarianceTargets solve_variance_targets(const DgpConfig& cfg, const SizeDistribution& shares,
                                              bool strict = false) {
  const double h = herfindahl(shares.shares);
  const auto& ps = cfg.psi_targets;
  require(ps.psi_u > 0.0 && ps.psi_u < 1.0 && ps.psi_u_eta > 0.0 && ps.psi_u_eta < 1.0,
          errc::infeasible_targets, "psi targets must lie in (0,1)");
  require(ps.psi_u <= ps.psi_u_eta, errc::infeasible_targets,
          "psi_u > psi_u_eta has no nonnegative solution");

  VarianceTargets out;
  out.sigma2_u = 1.0;
  if (ps.psi_u == ps.psi_u_eta || cfg.r == 0) {
    require(!strict && ps.psi_u == ps.psi_u_eta, errc::infeasible_targets,
            cfg.r == 0 ? "r = 0 requires psi_u = psi_u_eta" : "psi_u = psi_u_eta forces sigma2_lambda = 0");
    out.sigma2_lambda = 0.0;
    out.zero_lambda_variance = true;
  } else {
    out.sigma2_lambda = (ps.psi_u_eta / ps.psi_u - 1.0) / static_cast<double>(cfg.r);
  }
  out.sigma2_eps = h * (1.0 - ps.psi_u_eta) / ps.psi_u;
  require(out.sigma2_eps > 0.0, errc::infeasible_targets, "solved sigma2_eps is nonpositive");
  return out;
}

// ---------------------------------------------------------------------------
// banded idiosyncratic covariance (Design 2)
// ---------------------------------------------------------------------------

struct BandedCovariance {
  Mat sigma;
  double decay_used = 0.0;
  int retries = 0;
};

// sigma_ij = decay^|i-j| sqrt(sigma_i sigma_j) inside the band, 0 outside,
// with variances drawn U[lo, hi]. A failed positive-definiteness check halves
// the decay and rebuilds (same variances); repeated failure is an error.
inline BandedCovariance banded_covariance(Index n, Index k, double tau, double lo, double hi,
                                          std::uint64_t seed) {
  require(n >= 1, errc::dimension_mismatch, "need n >= 1");
  require(k >= 0, errc::config_error, "bandwidth must be nonnegative");
  require(tau >= 0.0 && tau < 1.0, errc::config_error, "decay must lie in [0,1)");
  require(lo > 0.0 && lo <= hi, errc::config_error, "need 0 < lo <= hi");

  Rng rng(seed);
  Vec variances(n);
  for (Index i = 0; i < n; ++i) variances(i) = lo + (hi - lo) * rng.uniform();

  BandedCovariance out;
  out.decay_used = tau;
  for (out.retries = 0; out.retries <= 5; ++out.retries) {
    out.sigma = Mat::Zero(n, n);
    for (Index i = 0; i < n; ++i) {
      out.sigma(i, i) = variances(i);
      for (Index j = std::max<Index>(0, i - k); j < i; ++j) {
        const double v =
            std::pow(out.decay_used, static_cast<double>(i - j)) *
            std::sqrt(variances(i) * variances(j));
        out.sigma(i, j) = v;
        out.sigma(j, i) = v;
      }
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt{Eigen::MatrixXd(out.sigma)};
    if (ldlt.info() == Eigen::Success &&
        ldlt.vectorD().minCoeff() > 1e-12 * out.sigma.trace() / static_cast<double>(n))
      return out;
    out.decay_used *= 0.5;
  }
  fail(errc::not_positive_definite, "banded covariance not positive definite after retries");
}

// ---------------------------------------------------------------------------
// simulated market
// ---------------------------------------------------------------------------

struct SimulatedTruth {
  Mat factors;      // T x r
  Mat loadings;     // N x r
  Mat u;            // T x N
  Vec epsilon;      // T
  Vec shares;       // N
  Mat sigma_u;      // N x N (Design 2); empty for i.i.d. Design 1
  VarianceTargets targets;
  int banded_retries = 0;

  bool available() const { return u.size() > 0; }
};

struct SimulatedMarket {
  Panel panel;
  AggregateSeries d;
  AggregateSeries p;
  SimulatedTruth truth;
};

namespace detail {

inline std::vector<std::string> unit_labels(Index n) {
  const auto width = std::to_string(n).size();
  std::vector<std::string> out(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    std::string num = std::to_string(i + 1);
    out[static_cast<std::size_t>(i)] = "u" + std::string(width - num.size(), '0') + num;
  }
  return out;
}

inline std::vector<std::string> time_labels(Index t) {
  std::vector<std::string> out(static_cast<std::size_t>(t));
  for (Index i = 0; i < t; ++i) out[static_cast<std::size_t>(i)] = std::to_string(i + 1);
  return out;
}

constexpr std::uint64_t kBandedStreamTag = 0x62616e64ull;  // substream for the Design-2 draw

}  // namespace detail

// Equilibrium panel draw. Stream order from the seed: factors, loadings,
// demand shocks, idiosyncratic shocks; the Design-2 covariance uses its own
// substream so both designs share the main draw sequence.
inline SimulatedMarket simulate_design(const DgpConfig& cfg) {
  cfg.validate();
  const Index n = cfg.n, t_len = cfg.t, r = cfg.r;

  const SizeDistribution dist = deterministic_shares(n, cfg.mu);
  const Vec s = dist.shares;
  const double h = herfindahl(s);
  const VarianceTargets targets = solve_variance_targets(cfg, dist);

  Rng rng(cfg.seed);
  const Mat eta = r > 0 ? Mat(rng.normal_matrix(t_len, r)) : Mat(t_len, 0);
  const Mat lambda =
      r > 0 ? Mat(std::sqrt(targets.sigma2_lambda) * rng.normal_matrix(n, r)) : Mat(n, 0);
  const Vec eps = std::sqrt(targets.sigma2_eps) * rng.normal_vector(t_len);

  SimulatedMarket m;
  m.truth.targets = targets;
  Mat u;
  if (cfg.design == Design::d1) {
    u = rng.normal_matrix(t_len, n);
  } else {
    auto banded = banded_covariance(n, cfg.banded.bandwidth, cfg.banded.decay,
                                    cfg.banded.variance_low, cfg.banded.variance_high,
                                    hash64(cfg.seed, detail::kBandedStreamTag));
    m.truth.banded_retries = banded.retries;
    // one scale constant pins S' Sigma S = h, preserving the correlation and
    // heteroskedasticity profile
    const double scale = h / s.dot(banded.sigma * s);
    m.truth.sigma_u = scale * banded.sigma;
    Eigen::LLT<Eigen::MatrixXd> chol{Eigen::MatrixXd(m.truth.sigma_u)};
    require(chol.info() == Eigen::Success, errc::not_positive_definite,
            "scaled banded covariance lost positive definiteness");
    u = rng.normal_matrix(t_len, n) * chol.matrixL().transpose();
  }

  const Vec u_s = u * s;
  const Vec lambda_s = lambda.transpose() * s;  // r-vector
  const Vec common = r > 0 ? Vec(eta * lambda_s) : Vec(Vec::Zero(t_len));
  const Vec p = (u_s + common - eps) / (cfg.phi_d - cfg.phi_s);
  const Vec d = cfg.phi_d * p + eps;

  m.panel.values = cfg.phi_s * p * Eigen::RowVectorXd::Ones(n) + u;
  if (r > 0) m.panel.values += eta * lambda.transpose();
  m.panel.unit_ids = detail::unit_labels(n);
  m.panel.time_ids = detail::time_labels(t_len);
  m.d = AggregateSeries{d, "d"};
  m.p = AggregateSeries{p, "p"};
  m.truth.factors = eta;
  m.truth.loadings = lambda;
  m.truth.u = std::move(u);
  m.truth.epsilon = eps;
  m.truth.shares = s;

  // construction identities; violation would mean a broken draw, not bad data
  const double clearing = (m.panel.values * s - d).cwiseAbs().maxCoeff();
  require(clearing <= 1e-10 * std::max(1.0, d.cwiseAbs().maxCoeff()), errc::config_error,
          "market clearing identity violated in the simulator");
  return m;
}

struct ConcentrationDiagnostics {
  double mu2_d_gmm = 0.0;
  double mu2_d_fgiv = 0.0;
};

inline ConcentrationDiagnostics concentration_diagnostics(const SimulatedMarket& m) {
  require(m.truth.available(), errc::truth_unavailable, "truth components not stored");
  const Vec u_s = m.truth.u * m.truth.shares;
  const Vec lambda_s = m.truth.loadings.size() > 0
                           ? Vec(m.truth.loadings.transpose() * m.truth.shares)
                           : Vec(Vec::Zero(0));
  const double us2 = u_s.squaredNorm();
  const double ls2 = lambda_s.size() > 0 ? lambda_s.squaredNorm() : 0.0;
  const double s2e = m.truth.targets.sigma2_eps;
  ConcentrationDiagnostics out;
  out.mu2_d_gmm = (us2 + ls2) / s2e;
  out.mu2_d_fgiv = us2 / (ls2 + s2e);
  return out;
}

// ---------------------------------------------------------------------------
// Monte Carlo harness
// ---------------------------------------------------------------------------

enum class McEstimator {
  fgiv_demand,
  gmm_demand,
  gmm_demand_rmax,
  gk_demand,
  fgmm_demand,
  fgiv_supply,
  gmm_supply,
  gmm_supply_rmax,
  gk_supply,
  misspec_supply,
  fgl_supply,
};

inline const char* mc_estimator_name(McEstimator e) {
  switch (e) {
    case McEstimator::fgiv_demand: return "fgiv_demand";
    case McEstimator::gmm_demand: return "gmm_demand";
    case McEstimator::gmm_demand_rmax: return "gmm_demand_rmax";
    case McEstimator::gk_demand: return "gk_demand";
    case McEstimator::fgmm_demand: return "fgmm_demand";
    case McEstimator::fgiv_supply: return "fgiv_supply";
    case McEstimator::gmm_supply: return "gmm_supply";
    case McEstimator::gmm_supply_rmax: return "gmm_supply_rmax";
    case McEstimator::gk_supply: return "gk_supply";
    case McEstimator::misspec_supply: return "misspec_supply";
    case McEstimator::fgl_supply: return "fgl_supply";
  }
  fail(errc::config_error, "unknown estimator id");
}

inline McEstimator parse_mc_estimator(const std::string& name) {
  for (auto e : {McEstimator::fgiv_demand, McEstimator::gmm_demand, McEstimator::gmm_demand_rmax,
                 McEstimator::gk_demand, McEstimator::fgmm_demand, McEstimator::fgiv_supply,
                 McEstimator::gmm_supply, McEstimator::gmm_supply_rmax, McEstimator::gk_supply,
                 McEstimator::misspec_supply, McEstimator::fgl_supply})
    if (name == mc_estimator_name(e)) return e;
  fail(errc::config_error, "unknown estimator name: " + name);
}

inline bool mc_estimator_is_demand(McEstimator e) {
  switch (e) {
    case McEstimator::fgiv_demand:
    case McEstimator::gmm_demand:
    case McEstimator::gmm_demand_rmax:
    case McEstimator::gk_demand:
    case McEstimator::fgmm_demand: return true;
    default: return false;
  }
}

struct McOptions {
  int m_reps = 1000;
  std::vector<McEstimator> estimators;
  double nominal_size = 0.05;
  int threads = 1;
  Index rmax = -1;  // negative selects r + 1
  CovConfig cov;
  VarianceSpec vk;
  double tol = 1e-6;
  int max_iter = 100;
};

struct McEstimatorSummary {
  std::string name;
  double truth = 0.0;
  int n_ok = 0;
  int n_failed = 0;
  double bias = 0.0;
  double rmse = 0.0;
  double mean_se = 0.0;
  double t_size = 0.0;
  std::optional<double> j_size;
  double failure_rate = 0.0;
};

struct McReport {
  std::string schema_version = "1";
  DgpConfig config;
  int m_reps = 0;
  double nominal_size = 0.05;
  Index rmax = 0;
  int threads = 1;
  std::vector<McEstimatorSummary> estimators;
  double psi_u_achieved = 0.0;
  double psi_u_eta_achieved = 0.0;
  double min_corr_z_us = 1.0;
  double mean_mu2_gmm = 0.0;
  double mean_mu2_fgiv = 0.0;
  int sim_failures = 0;
};

namespace detail {

struct McCell {
  bool ok = false;
  double phi = 0.0;
  double se = 0.0;
  bool t_reject = false;
  std::optional<bool> j_reject;
};

struct McRepOutcome {
  bool sim_ok = false;
  std::vector<McCell> cells;
  double psi_u = 0.0;
  double psi_u_eta = 0.0;
  double corr_z_us = 1.0;
  double mu2_gmm = 0.0;
  double mu2_fgiv = 0.0;
};

inline double sample_variance(const Vec& v) {
  const double mean = v.mean();
  return (v.array() - mean).square().sum() / static_cast<double>(v.size());
}

inline double correlation(const Vec& a, const Vec& b) {
  const double ma = a.mean(), mb = b.mean();
  const Vec da = a.array() - ma, db = b.array() - mb;
  const double denom = std::sqrt(da.squaredNorm() * db.squaredNorm());
  return denom > 0.0 ? da.dot(db) / denom : 0.0;
}

inline McRepOutcome run_mc_rep(const DgpConfig& base, int rep, const McOptions& opt,
                               Index rmax, double t_crit) {
  McRepOutcome out;
  out.cells.resize(opt.estimators.size());

  DgpConfig cfg = base;
  cfg.seed = hash64(base.seed, static_cast<std::uint64_t>(rep));
  SimulatedMarket market;
  try {
    market = simulate_design(cfg);
  } catch (const Error&) {
    return out;  // replication unusable; counted as a simulation failure
  }
  out.sim_ok = true;

  const ShareSeries shares = ShareSeries::make_fixed(market.truth.shares);
  const Vec u_s = market.truth.u * market.truth.shares;
  {
    const Vec common = cfg.r > 0
                           ? Vec(market.truth.factors *
                                 Vec(market.truth.loadings.transpose() * market.truth.shares))
                           : Vec(Vec::Zero(cfg.t));
    const double vu = sample_variance(u_s);
    const double veta = cfg.r > 0 ? sample_variance(common) : 0.0;
    const double veps = sample_variance(market.truth.epsilon);
    const double vtot = vu + veta + veps;
    out.psi_u = vu / vtot;
    out.psi_u_eta = (vu + veta) / vtot;
    const auto conc = concentration_diagnostics(market);
    out.mu2_gmm = conc.mu2_d_gmm;
    out.mu2_fgiv = conc.mu2_d_fgiv;
  }

  bool need_rmax = false;
  for (auto e : opt.estimators)
    need_rmax |= e == McEstimator::gmm_demand_rmax || e == McEstimator::gmm_supply_rmax;

  PipelineParts pipe;
  std::optional<PipelineParts> pipe_rmax;
  try {
    pipe = build_pipeline(market.panel, shares, cfg.r);
    if (need_rmax) pipe_rmax = build_pipeline(market.panel, shares, rmax);
  } catch (const Error&) {
    out.sim_ok = false;  // shared stage failed; no estimator can run
    return out;
  }
  // The annihilator removes the equal-weighted mean, so the instrument targets
  // the size-weighted shock net of that mean; correlate against that component.
  const Vec u_gr = u_s - Vec(market.truth.u.rowwise().mean());
  out.corr_z_us = correlation(pipe.z.values, u_gr);

  std::optional<GkFits> gk;
  auto gk_fits = [&]() -> const GkFits& {
    if (!gk) gk = gk_baselines(market.panel, market.p, market.d, shares, pipe.fe, opt.vk);
    return *gk;
  };

  for (std::size_t i = 0; i < opt.estimators.size(); ++i) {
    const McEstimator kind = opt.estimators[i];
    McCell& cell = out.cells[i];
    const double truth = mc_estimator_is_demand(kind) ? cfg.phi_d : cfg.phi_s;
    try {
      ElasticityFit fit;
      switch (kind) {
        case McEstimator::fgiv_demand:
          fit = fgiv_demand(market.d, market.p, pipe.z, opt.vk);
          break;
        case McEstimator::gmm_demand:
          fit = gmm_demand(market.d, market.p, pipe.z, pipe.fe, opt.vk);
          break;
        case McEstimator::gmm_demand_rmax:
          fit = gmm_demand(market.d, market.p, pipe_rmax->z, pipe_rmax->fe, opt.vk);
          break;
        case McEstimator::gk_demand:
          fit = gk_fits().demand;
          break;
        case McEstimator::fgmm_demand:
          fit = bn_fgmm_demand(market.d, market.p, pipe.fe, opt.vk);
          break;
        case McEstimator::fgiv_supply:
          fit = fgiv_supply_alg1(market.panel, market.p, shares, cfg.r, opt.cov, opt.vk, opt.tol,
                                 opt.max_iter);
          break;
        case McEstimator::gmm_supply:
          fit = gmm_supply_alg3(market.panel, market.p, market.d, shares, cfg.r, opt.cov, opt.vk,
                                opt.tol, opt.max_iter);
          break;
        case McEstimator::gmm_supply_rmax:
          fit = gmm_supply_alg3(market.panel, market.p, market.d, shares, rmax, opt.cov, opt.vk,
                                opt.tol, opt.max_iter);
          break;
        case McEstimator::gk_supply:
          fit = gk_fits().supply;
          break;
        case McEstimator::misspec_supply:
          fit = misspecified_supply(market.panel, market.p, shares, cfg.r, opt.vk);
          break;
        case McEstimator::fgl_supply:
          fit = gmm_supply_alg3prime(market.panel, market.p, market.d, shares, cfg.r, opt.cov,
                                     opt.vk, opt.tol, opt.max_iter);
          break;
      }
      cell.ok = true;
      cell.phi = fit.phi();
      cell.se = fit.std_error;
      cell.t_reject = std::abs(fit.phi() - truth) / fit.std_error > t_crit;
      if (fit.j_stat) cell.j_reject = fit.j_stat->p_value < opt.nominal_size;
    } catch (const Error&) {
      cell.ok = false;
    }
  }
  return out;
}

}  // namespace detail

// Deterministic-by-replication Monte Carlo: replication m draws from seed
// hash64(cfg.seed, m), so the report is identical under any thread count.
inline McReport run_monte_carlo(const DgpConfig& cfg, const McOptions& opt) {
  cfg.validate();
  require(opt.m_reps >= 1, errc::config_error, "need m_reps >= 1");
  require(!opt.estimators.empty(), errc::config_error, "estimator set is empty");
  require(opt.nominal_size > 0.0 && opt.nominal_size < 1.0, errc::config_error,
          "nominal size must lie in (0,1)");

  const Index rmax = opt.rmax >= 1 ? opt.rmax : cfg.r + 1;
  const double t_crit = normal_quantile(1.0 - opt.nominal_size / 2.0);

  std::vector<detail::McRepOutcome> results(static_cast<std::size_t>(opt.m_reps));
  const int threads = std::max(1, opt.threads);
  if (threads == 1) {
    for (int m = 0; m < opt.m_reps; ++m)
      results[static_cast<std::size_t>(m)] = detail::run_mc_rep(cfg, m, opt, rmax, t_crit);
  } else {
    std::atomic<int> next{0};
    auto worker = [&]() {
      for (;;) {
        const int m = next.fetch_add(1);
        if (m >= opt.m_reps) return;
        results[static_cast<std::size_t>(m)] = detail::run_mc_rep(cfg, m, opt, rmax, t_crit);
      }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int w = 0; w < threads; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  McReport report;
  report.config = cfg;
  report.m_reps = opt.m_reps;
  report.nominal_size = opt.nominal_size;
  report.rmax = rmax;
  report.threads = threads;

  int sim_ok = 0;
  double psi_u_sum = 0.0, psi_ue_sum = 0.0, mu2g_sum = 0.0, mu2f_sum = 0.0;
  for (const auto& rep : results) {
    if (!rep.sim_ok) continue;
    ++sim_ok;
    psi_u_sum += rep.psi_u;
    psi_ue_sum += rep.psi_u_eta;
    mu2g_sum += rep.mu2_gmm;
    mu2f_sum += rep.mu2_fgiv;
    report.min_corr_z_us = std::min(report.min_corr_z_us, rep.corr_z_us);
  }
  report.sim_failures = opt.m_reps - sim_ok;
  require(sim_ok > 0, errc::excessive_failures, "every replication failed to simulate");
  report.psi_u_achieved = psi_u_sum / sim_ok;
  report.psi_u_eta_achieved = psi_ue_sum / sim_ok;
  report.mean_mu2_gmm = mu2g_sum / sim_ok;
  report.mean_mu2_fgiv = mu2f_sum / sim_ok;

  for (std::size_t i = 0; i < opt.estimators.size(); ++i) {
    McEstimatorSummary s;
    s.name = mc_estimator_name(opt.estimators[i]);
    s.truth = mc_estimator_is_demand(opt.estimators[i]) ? cfg.phi_d : cfg.phi_s;
    double sum = 0.0, sum_sq = 0.0, se_sum = 0.0;
    int t_rejections = 0, j_rejections = 0, j_count = 0;
    for (const auto& rep : results) {
      if (!rep.sim_ok || !rep.cells[i].ok) {
        ++s.n_failed;
        continue;
      }
      const auto& cell = rep.cells[i];
      ++s.n_ok;
      sum += cell.phi - s.truth;
      sum_sq += (cell.phi - s.truth) * (cell.phi - s.truth);
      se_sum += cell.se;
      t_rejections += cell.t_reject ? 1 : 0;
      if (cell.j_reject) {
        ++j_count;
        j_rejections += *cell.j_reject ? 1 : 0;
      }
    }
    s.failure_rate = static_cast<double>(s.n_failed) / static_cast<double>(opt.m_reps);
    require(s.failure_rate <= 0.10, errc::excessive_failures,
            s.name + " failed in more than 10% of replications");
    if (s.n_ok > 0) {
      s.bias = sum / s.n_ok;
      s.rmse = std::sqrt(sum_sq / s.n_ok);
      s.mean_se = se_sum / s.n_ok;
      s.t_size = static_cast<double>(t_rejections) / s.n_ok;
    }
    if (j_count > 0) s.j_size = static_cast<double>(j_rejections) / j_count;
    report.estimators.push_back(std::move(s));
  }
  return report;
}

inline McReport run_monte_carlo(const DgpConfig& cfg, int m_reps,
                                const std::vector<McEstimator>& estimators,
                                double nominal_size = 0.05, int threads = 1) {
  McOptions opt;
  opt.m_reps = m_reps;
  opt.estimators = estimators;
  opt.nominal_size = nominal_size;
  opt.threads = threads;
  return run_monte_carlo(cfg, opt);
}

}  // namespace fgiv
