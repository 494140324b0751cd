// Acceptance gate. Each criterion prints one [PASS]/[FAIL] line carrying the
// measured quantities and the pinned band they must land in; the exit status
// is the number of failed criteria. Pass criterion ids (1..13) as arguments
// to run a subset. Replication counts follow the reference rows, so the Monte
// Carlo criteria dominate the runtime; everything is seeded and the report is
// identical across thread counts.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fgiv/covariance.hpp"
#include "fgiv/estimators.hpp"
#include "fgiv/factor_model.hpp"
#include "fgiv/granularity.hpp"
#include "fgiv/json_io.hpp"
#include "fgiv/panel.hpp"
#include "fgiv/rng.hpp"
#include "fgiv/simulation.hpp"

#include "../support/fgl_oracle.hpp"

namespace {

using namespace fgiv;
using Clock = std::chrono::steady_clock;

int worker_threads() {
  const unsigned hw = std::thread::hardware_concurrency();
  return static_cast<int>(std::clamp(hw, 1u, 8u));
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Runs fn(0..m-1) across the worker pool; callers write into per-rep slots so
// the reduction stays schedule independent.
template <typename Fn>
void parallel_reps(int m, Fn fn) {
  std::atomic<int> next{0};
  auto work = [&] {
    for (int i = next.fetch_add(1); i < m; i = next.fetch_add(1)) fn(i);
  };
  std::vector<std::thread> pool;
  for (int k = 1; k < worker_threads(); ++k) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();
}

double correlation(const Vec& a, const Vec& b) {
  const Vec ac = a.array() - a.mean();
  const Vec bc = b.array() - b.mean();
  const double denom = std::sqrt(ac.squaredNorm() * bc.squaredNorm());
  return denom > 0.0 ? ac.dot(bc) / denom : 0.0;
}

// The five reference rows shared by both designs: mu keeps h(N, mu) at 0.12.
struct SizeRow {
  Index n;
  double mu;
};
constexpr SizeRow kRows[] = {{30, 0.92}, {50, 0.85}, {100, 0.80}, {200, 0.77}, {500, 0.75}};

DgpConfig row_config(Design design, Index n, double mu, std::uint64_t seed) {
  DgpConfig cfg;
  cfg.n = n;
  cfg.t = 400;
  cfg.mu = mu;
  cfg.r = 2;
  cfg.design = design;
  cfg.seed = seed;
  return cfg;
}

const McEstimatorSummary& cell(const McReport& rep, const std::string& name) {
  for (const auto& s : rep.estimators)
    if (s.name == name) return s;
  fail(errc::config_error, "report lacks estimator " + name);
}

struct Gate {
  std::set<int> only;
  int failures = 0;

  bool selected(int id) const { return only.empty() || only.count(id) > 0; }

  void report(int id, const std::string& name, bool pass, const std::string& detail) {
    if (!pass) ++failures;
    std::ostringstream head;
    head << "[" << (pass ? "PASS" : "FAIL") << "] C" << std::setw(2) << std::setfill('0') << id
         << " " << name;
    std::string h = head.str();
    if (h.size() < 44) h += std::string(44 - h.size(), ' ');
    std::cout << h << " " << detail << std::endl;
  }
};

std::string fmt(double x, int prec = 4) {
  std::ostringstream out;
  out << std::setprecision(prec) << x;
  return out.str();
}

// ---------------------------------------------------------------------------
// 1 + 2: concentration of the deterministic share grid
// ---------------------------------------------------------------------------

void criterion_herfindahl(Gate& gate) {
  const auto start = Clock::now();
  double lo = 1.0, hi = 0.0;
  for (const auto& row : kRows) {
    const double h = herfindahl(deterministic_shares(row.n, row.mu).shares);
    lo = std::min(lo, h);
    hi = std::max(hi, h);
  }
  const double elapsed = seconds_since(start);
  const bool pass = lo >= 0.11 && hi <= 0.13 && elapsed < 1.0;
  gate.report(1, "share-grid concentration", pass,
              "h range [" + fmt(lo) + ", " + fmt(hi) + "] within [0.11, 0.13] over five (N, mu) "
              "rows; " + fmt(elapsed, 3) + " s (limit 1 s)");
}

void criterion_tail_limit(Gate& gate) {
  const auto start = Clock::now();
  const double h = herfindahl(deterministic_shares(1000000, 0.5).shares);
  const double limit = asymptotic_herfindahl_limit(0.5);
  const double elapsed = seconds_since(start);
  const bool pass =
      std::abs(h - 0.4) < 0.01 && std::abs(limit - 0.4) <= 1e-6 && elapsed < 5.0;
  gate.report(2, "heavy-tail limit", pass,
              "h(1e6, 0.5) = " + fmt(h, 6) + " within 0.01 of 0.4; closed form " +
                  fmt(limit, 10) + " within 1e-6 of 0.4; " + fmt(elapsed, 3) + " s (limit 5 s)");
}

// ---------------------------------------------------------------------------
// 3 + 4: dense-design Monte Carlo row (N=100, T=400), shared report
// ---------------------------------------------------------------------------

struct DenseRow {
  McReport rep;
  double wall = 0.0;
};

const DenseRow& dense_row() {
  static const DenseRow row = [] {
    const auto start = Clock::now();
    McOptions opt;
    opt.m_reps = 1000;
    opt.rmax = 3;
    opt.threads = worker_threads();
    opt.estimators = {McEstimator::fgiv_demand, McEstimator::gk_demand,
                      McEstimator::gmm_demand,  McEstimator::gmm_demand_rmax,
                      McEstimator::fgiv_supply, McEstimator::gk_supply,
                      McEstimator::gmm_supply,  McEstimator::gmm_supply_rmax};
    DenseRow out;
    out.rep = run_monte_carlo(row_config(Design::d1, 100, 0.80, 101), opt);
    out.wall = seconds_since(start);
    return out;
  }();
  return row;
}

// RMSE anchors follow the generating estimator of each reference value: the
// demand-equation efficient cell generates the larger anchor (0.0196) and the
// supply-equation cell the smaller one (0.0039). Bias and test sizes attach
// to their own columns.
void criterion_dense_cells(Gate& gate) {
  const DenseRow& row = dense_row();
  const auto& gd = cell(row.rep, "gmm_demand");
  const auto& gs = cell(row.rep, "gmm_supply");
  const double bias_s = std::abs(gs.bias);
  const double projected = row.wall * worker_threads() / 8.0;

  bool pass = bias_s < 0.001;
  pass &= gd.rmse >= 0.015 && gd.rmse <= 0.025;
  pass &= gs.rmse >= 0.003 && gs.rmse <= 0.005;
  pass &= gd.t_size >= 0.03 && gd.t_size <= 0.10;
  pass &= gs.t_size >= 0.03 && gs.t_size <= 0.10;
  pass &= gd.j_size && *gd.j_size >= 0.03 && *gd.j_size <= 0.07;
  pass &= gs.j_size && *gs.j_size >= 0.03 && *gs.j_size <= 0.07;
  pass &= projected < 1800.0;

  gate.report(3, "dense-design efficient cells", pass,
              "|bias_s| = " + fmt(bias_s) + " < 0.001; rmse { demand " + fmt(gd.rmse) +
                  " in [0.015, 0.025], supply " + fmt(gs.rmse) +
                  " in [0.003, 0.005] }; t { " + fmt(gd.t_size, 3) + ", " + fmt(gs.t_size, 3) +
                  " } in [0.03, 0.10]; J { " + fmt(*gd.j_size, 3) + ", " + fmt(*gs.j_size, 3) +
                  " } in [0.03, 0.07]; M = 1000; wall " + fmt(row.wall, 4) + " s on " +
                  std::to_string(worker_threads()) + " threads, 8-thread projection " +
                  fmt(projected, 4) + " s (limit 1800 s)");
}

void criterion_overextraction(Gate& gate) {
  const DenseRow& row = dense_row();
  const auto& gd = cell(row.rep, "gmm_demand_rmax");
  const auto& gs = cell(row.rep, "gmm_supply_rmax");
  const bool pass = gd.j_size && gs.j_size && *gd.j_size >= 0.03 && *gd.j_size <= 0.08 &&
                    *gs.j_size >= 0.03 && *gs.j_size <= 0.08;
  gate.report(4, "overextraction robustness", pass,
              "rmax = 3 > r = 2 J sizes { demand " + fmt(*gd.j_size, 3) + ", supply " +
                  fmt(*gs.j_size, 3) + " } in [0.03, 0.08]");
}

// ---------------------------------------------------------------------------
// 5: banded-design rows at N in {30, 100, 500}
// ---------------------------------------------------------------------------

void criterion_banded_rows(Gate& gate) {
  McOptions opt;
  opt.m_reps = 1000;
  opt.threads = worker_threads();
  opt.estimators = {McEstimator::gmm_demand, McEstimator::gmm_supply, McEstimator::gk_supply};

  const McReport r30 = run_monte_carlo(row_config(Design::d2, 30, 0.92, 5030), opt);
  const McReport r100 = run_monte_carlo(row_config(Design::d2, 100, 0.80, 50100), opt);
  const McReport r500 = run_monte_carlo(row_config(Design::d2, 500, 0.75, 50500), opt);

  const double bias_s = cell(r500, "gmm_supply").bias;
  const double rmse_d = cell(r500, "gmm_demand").rmse;
  const double gk30 = cell(r30, "gk_supply").t_size, gm30 = cell(r30, "gmm_supply").t_size;
  const double gk100 = cell(r100, "gk_supply").t_size, gm100 = cell(r100, "gmm_supply").t_size;
  const double gk500 = cell(r500, "gk_supply").t_size, gm500 = cell(r500, "gmm_supply").t_size;

  const bool bias_ok = bias_s >= 0.0 && bias_s <= 0.002;
  const bool rmse_ok = rmse_d >= 0.010 && rmse_d <= 0.018;
  const bool order_ok = gk30 > gm30 && gk100 > gk500 && gm30 <= gk30 && gm100 <= gk100 &&
                        gm500 <= gk500;

  gate.report(5, "banded-design cells", bias_ok && rmse_ok && order_ok,
              "bias_s(500) = " + fmt(bias_s) + " in [0, 0.002]" + (bias_ok ? "" : " MISS") +
                  "; rmse_d(500) = " + fmt(rmse_d) + " in [0.010, 0.018]" +
                  (rmse_ok ? "" : " MISS") + "; baseline supply t { " + fmt(gk30, 3) + ", " +
                  fmt(gk100, 3) + ", " + fmt(gk500, 3) + " } vs efficient { " + fmt(gm30, 3) +
                  ", " + fmt(gm100, 3) + ", " + fmt(gm500, 3) +
                  " }: baseline exceeds efficient at N=30, declines 100 to 500, efficient <= "
                  "baseline per row" +
                  (order_ok ? "" : " MISS") + "; M = 1000 per row");
}

// ---------------------------------------------------------------------------
// 6: fidelity of the feasible instrument to its infeasible counterpart
// ---------------------------------------------------------------------------

void criterion_instrument_fidelity(Gate& gate) {
  constexpr int reps = 200;
  double min_corr = 1.0;
  int violations = 0;
  int cfg_index = 0;
  for (Design design : {Design::d1, Design::d2}) {
    for (const auto& row : kRows) {
      std::vector<double> corr_by_rep(reps, 0.0);
      const std::uint64_t base = hash64(987601, static_cast<std::uint64_t>(cfg_index));
      parallel_reps(reps, [&](int rep) {
        DgpConfig cfg =
            row_config(design, row.n, row.mu, hash64(base, static_cast<std::uint64_t>(rep)));
        const SimulatedMarket m = simulate_design(cfg);
        const ShareSeries shares = ShareSeries::make_fixed(m.truth.shares);
        const PipelineParts pipe = build_pipeline(m.panel, shares, 2);
        const AnnihilatorMatrix q_true =
            annihilator_matrix(augment_with_constant(m.truth.loadings));
        const Vec infeasible = m.truth.u * (q_true.q * m.truth.shares);
        corr_by_rep[static_cast<std::size_t>(rep)] = correlation(pipe.z.values, infeasible);
      });
      for (double c : corr_by_rep) {
        min_corr = std::min(min_corr, c);
        if (!(c > 0.9)) ++violations;
      }
      ++cfg_index;
    }
  }
  gate.report(6, "instrument fidelity", violations == 0,
              "corr(feasible, infeasible annihilated-shock aggregate) > 0.9 in every rep; min " +
                  fmt(min_corr) + ", violations " + std::to_string(violations) +
                  " of 2000 (both designs, five rows, 200 reps each)");
}

// ---------------------------------------------------------------------------
// 7 + 8: algebraic identities on random instances
// ---------------------------------------------------------------------------

void criterion_exogeneity_identity(Gate& gate) {
  Rng rng(700701);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const Index n = 5 + static_cast<Index>(rng.uniform() * 196.0);
    // the annihilator needs a null space, so r + 1 columns must leave n - r - 1 > 0
    const Index r = 1 + static_cast<Index>(rng.uniform() * static_cast<double>(std::min<Index>(4, n - 2)));
    const Index t_len = 40 + static_cast<Index>(rng.uniform() * 80.0);
    Panel panel{rng.normal_matrix(t_len, n), detail::unit_labels(n), detail::time_labels(t_len)};
    Vec s = rng.normal_vector(n).cwiseAbs();
    s /= s.sum();
    const PipelineParts pipe = build_pipeline(panel, ShareSeries::make_fixed(s), r);
    worst = std::max(worst, std::abs((pipe.q.q * s).sum()));
  }
  gate.report(7, "share exogeneity identity", worst <= 1e-10,
              "max |1' Q S| = " + fmt(worst, 3) +
                  " <= 1e-10 over 1000 instances (N in [5, 200], r in [1, 4])");
}

void criterion_just_identified_collapse(Gate& gate) {
  Rng rng(800801);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    DgpConfig cfg;
    cfg.n = 20 + static_cast<Index>(rng.uniform() * 60.0);
    cfg.t = 100 + static_cast<Index>(rng.uniform() * 200.0);
    cfg.mu = 0.75 + rng.uniform() * 0.2;
    cfg.seed = hash64(880011, static_cast<std::uint64_t>(k));
    const SimulatedMarket m = simulate_design(cfg);
    const PipelineParts pipe =
        build_pipeline(m.panel, ShareSeries::make_fixed(m.truth.shares), cfg.r);
    const ElasticityFit ratio = fgiv_demand(m.d, m.p, pipe.z);
    const ElasticityFit gmm = gmm_demand(m.d, m.p, pipe.z, FactorEstimate{});
    worst = std::max(worst, std::abs(ratio.phi() - gmm.phi()));
  }
  gate.report(8, "just-identified collapse", worst <= 1e-12,
              "max |phi_gmm - phi_ratio| = " + fmt(worst, 3) +
                  " <= 1e-12 with the instrument alone, 100 instances");
}

// ---------------------------------------------------------------------------
// 9: precision-matrix oracles
// ---------------------------------------------------------------------------

void criterion_precision_oracles(Gate& gate) {
  double worst_gap = 0.0;
  for (int k = 0; k < 50; ++k) {
    Rng rng(hash64(990091, static_cast<std::uint64_t>(k)));
    Mat resid = rng.normal_matrix(50, 3);
    for (Index j = 0; j < 3; ++j) resid.col(j) *= 0.5 + rng.uniform();
    const Mat sm = (resid.transpose() * resid) / 50.0;
    const bool weighted = k % 2 == 0;
    const Vec w = weighted ? Vec(sm.diagonal().cwiseSqrt()) : Vec(Vec::Ones(3));
    const PrecisionEstimate p = fgl_precision(resid, 0.1, weighted);
    const double lib = fgl_oracle::objective(sm, p.theta, 0.1, w);
    const double brute = fgl_oracle::brute_force_objective(sm, 0.1, w);
    worst_gap = std::max(worst_gap, std::abs(lib - brute));
  }
  const bool fgl_ok = worst_gap <= 1e-4;

  Rng rng(990092);
  Mat diag_resid = rng.normal_matrix(300, 8);
  for (Index j = 0; j < 8; ++j) diag_resid.col(j) *= 0.5 + 1.5 * rng.uniform();
  const PrecisionEstimate poet_diag = poet_covariance(diag_resid, 0, Shrink::soft, 8.0);
  double off_sigma = 0.0, off_theta = 0.0;
  for (Index i = 0; i < 8; ++i)
    for (Index j = 0; j < 8; ++j)
      if (i != j) {
        off_sigma = std::max(off_sigma, std::abs(poet_diag.sigma(i, j)));
        off_theta = std::max(off_theta, std::abs(poet_diag.theta(i, j)));
      }
  const bool diag_ok = off_sigma == 0.0 && off_theta <= 1e-15;

  const Mat iid_resid = Rng(990093).normal_matrix(2000, 50);
  const PrecisionEstimate poet_iid = poet_covariance(iid_resid, 0, Shrink::soft, 1.0);
  const double weight_gap = (poet_iid.e_weights.array() - 1.0 / 50.0).abs().maxCoeff();
  const bool weights_ok = weight_gap <= 1e-2;

  gate.report(9, "precision oracles", fgl_ok && diag_ok && weights_ok,
              "graphical objective gap max " + fmt(worst_gap, 3) +
                  " <= 1e-4 (50 instances); diagonal truth off-diagonals exactly 0 (max " +
                  fmt(off_sigma, 3) + "); iid E-weights within " + fmt(weight_gap, 3) +
                  " <= 1e-2 of 1/N at (50, 2000)");
}

// ---------------------------------------------------------------------------
// 10: factor space recovery and order selection
// ---------------------------------------------------------------------------

void criterion_factor_recovery(Gate& gate) {
  constexpr int space_reps = 50;
  std::vector<double> r2(space_reps, 0.0);
  parallel_reps(space_reps, [&](int rep) {
    DgpConfig cfg = row_config(Design::d1, 200, 0.77, hash64(1010, static_cast<std::uint64_t>(rep)));
    cfg.t = 200;
    const SimulatedMarket m = simulate_design(cfg);
    const FactorEstimate fe = pca_factors(demean_cross_section(m.panel), 2);
    const Mat& ft = m.truth.factors;
    const Eigen::LDLT<Eigen::MatrixXd> gram(Eigen::MatrixXd(ft.transpose() * ft));
    const Mat projected = ft * gram.solve(Eigen::MatrixXd(ft.transpose() * fe.factors));
    r2[static_cast<std::size_t>(rep)] =
        fe.factors.cwiseProduct(projected).sum() / fe.factors.squaredNorm();
  });
  const double min_r2 = *std::min_element(r2.begin(), r2.end());

  constexpr int sel_reps = 200;
  std::vector<int> er_hit(sel_reps, 0), gr_hit(sel_reps, 0);
  parallel_reps(sel_reps, [&](int rep) {
    const DgpConfig cfg =
        row_config(Design::d1, 100, 0.80, hash64(1011, static_cast<std::uint64_t>(rep)));
    const SimulatedMarket m = simulate_design(cfg);
    const FactorCountSelection sel = select_num_factors(demean_cross_section(m.panel), 8);
    er_hit[static_cast<std::size_t>(rep)] = sel.r_er == 2 ? 1 : 0;
    gr_hit[static_cast<std::size_t>(rep)] = sel.r_gr == 2 ? 1 : 0;
  });
  const double er_rate =
      std::accumulate(er_hit.begin(), er_hit.end(), 0) / static_cast<double>(sel_reps);
  const double gr_rate =
      std::accumulate(gr_hit.begin(), gr_hit.end(), 0) / static_cast<double>(sel_reps);

  const bool pass = min_r2 > 0.99 && er_rate >= 0.95 && gr_rate >= 0.95;
  gate.report(10, "factor recovery", pass,
              "trace-R2 min " + fmt(min_r2, 5) + " > 0.99 at (200, 200) over 50 reps; selection "
              "rate of r = 2 { ER " + fmt(er_rate, 3) + ", GR " + fmt(gr_rate, 3) +
                  " } >= 0.95 at (100, 400) over 200 reps");
}

// ---------------------------------------------------------------------------
// 11: root-T decay of the exclusion moment
// ---------------------------------------------------------------------------

void criterion_moment_decay(Gate& gate) {
  const std::vector<Index> spans = {200, 800, 3200};
  constexpr int reps = 200;
  std::vector<double> mean_abs(spans.size(), 0.0);
  for (std::size_t s = 0; s < spans.size(); ++s) {
    std::vector<double> moment(reps, 0.0);
    parallel_reps(reps, [&](int rep) {
      DgpConfig cfg = row_config(
          Design::d1, 100, 0.80,
          hash64(hash64(1100, static_cast<std::uint64_t>(s)), static_cast<std::uint64_t>(rep)));
      cfg.t = spans[s];
      const SimulatedMarket m = simulate_design(cfg);
      const PipelineParts pipe =
          build_pipeline(m.panel, ShareSeries::make_fixed(m.truth.shares), 2);
      const Vec composite = m.panel.values.rowwise().mean() - 0.1 * m.p.values;
      moment[static_cast<std::size_t>(rep)] =
          std::abs(pipe.z.values.dot(composite) / static_cast<double>(cfg.t));
    });
    mean_abs[s] = std::accumulate(moment.begin(), moment.end(), 0.0) / reps;
  }
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t s = 0; s < spans.size(); ++s) {
    const double x = std::log(static_cast<double>(spans[s])), y = std::log(mean_abs[s]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double m = static_cast<double>(spans.size());
  const double slope = (sxy - sx * sy / m) / (sxx - sx * sx / m);
  const bool pass = std::abs(slope + 0.5) <= 0.15;
  gate.report(11, "moment root-T decay", pass,
              "log-log slope of mean |T^-1 sum z_t e_t| over T in {200, 800, 3200} is " +
                  fmt(slope, 4) + ", within 0.15 of -0.5 (200 reps each)");
}

// ---------------------------------------------------------------------------
// 12: variance estimator self-consistency
// ---------------------------------------------------------------------------

void criterion_variance_consistency(Gate& gate) {
  bool exact_ok = true;
  for (int k = 0; k < 5; ++k) {
    DgpConfig cfg;
    cfg.n = 40;
    cfg.t = 160;
    cfg.seed = hash64(1200, static_cast<std::uint64_t>(k));
    const SimulatedMarket m = simulate_design(cfg);
    const PipelineParts pipe =
        build_pipeline(m.panel, ShareSeries::make_fixed(m.truth.shares), cfg.r);
    VarianceSpec hc;
    VarianceSpec hac0;
    hac0.kind = VarianceKind::hac;
    hac0.lags = 0;
    const ElasticityFit a = fgiv_demand(m.d, m.p, pipe.z, hc);
    const ElasticityFit b = fgiv_demand(m.d, m.p, pipe.z, hac0);
    exact_ok &= a.std_error == b.std_error && a.phi() == b.phi();
  }

  constexpr Index t_len = 100000;
  Rng rng(120012);
  Vec x(t_len);
  x(0) = rng.normal() / std::sqrt(1.0 - 0.25);
  for (Index t = 1; t < t_len; ++t) x(t) = 0.5 * x(t - 1) + rng.normal();
  const int lags = default_hac_lags(t_len);
  const double lrv = hac_variance(x, Vec::Ones(t_len), lags);
  const double rel = std::abs(lrv - 4.0) / 4.0;
  const bool oracle_ok = rel <= 0.15;

  gate.report(12, "variance self-consistency", exact_ok && oracle_ok,
              std::string("zero-lag kernel equals the white form exactly (5 fits): ") +
                  (exact_ok ? "yes" : "no") + "; AR(1) long-run variance " + fmt(lrv, 4) +
                  " vs 4.0, relative gap " + fmt(rel, 3) + " <= 0.15 at T = 1e5, " +
                  std::to_string(lags) + " lags");
}

// ---------------------------------------------------------------------------
// 13: thread-count determinism of the replication harness
// ---------------------------------------------------------------------------

void criterion_thread_determinism(Gate& gate) {
  DgpConfig cfg;
  cfg.n = 20;
  cfg.t = 80;
  cfg.seed = 1313;
  McOptions opt;
  opt.m_reps = 40;
  opt.estimators = {McEstimator::fgiv_demand, McEstimator::gmm_demand, McEstimator::gmm_supply};
  opt.threads = 1;
  const std::string serial = to_json(run_monte_carlo(cfg, opt)).dump(2);
  opt.threads = std::max(2, worker_threads());
  const std::string parallel = to_json(run_monte_carlo(cfg, opt)).dump(2);
  gate.report(13, "thread determinism", serial == parallel,
              std::string("reports byte-identical across --threads 1 and ") +
                  std::to_string(opt.threads) + ": " + (serial == parallel ? "yes" : "no") +
                  " (M = 40, three estimators)");
}

}  // namespace

int main(int argc, char** argv) {
  Gate gate;
  for (int i = 1; i < argc; ++i) gate.only.insert(std::atoi(argv[i]));

  std::cout << "acceptance gate: " << worker_threads() << " worker threads" << std::endl;
  const auto start = Clock::now();

  struct Entry {
    int id;
    const char* name;
    void (*run)(Gate&);
  };
  const Entry entries[] = {
      {1, "share-grid concentration", criterion_herfindahl},
      {2, "heavy-tail limit", criterion_tail_limit},
      {3, "dense-design efficient cells", criterion_dense_cells},
      {4, "overextraction robustness", criterion_overextraction},
      {5, "banded-design cells", criterion_banded_rows},
      {6, "instrument fidelity", criterion_instrument_fidelity},
      {7, "share exogeneity identity", criterion_exogeneity_identity},
      {8, "just-identified collapse", criterion_just_identified_collapse},
      {9, "precision oracles", criterion_precision_oracles},
      {10, "factor recovery", criterion_factor_recovery},
      {11, "moment root-T decay", criterion_moment_decay},
      {12, "variance self-consistency", criterion_variance_consistency},
      {13, "thread determinism", criterion_thread_determinism},
  };

  for (const auto& entry : entries) {
    if (!gate.selected(entry.id)) continue;
    try {
      entry.run(gate);
    } catch (const std::exception& e) {
      gate.report(entry.id, entry.name, false, std::string("threw: ") + e.what());
    }
  }

  std::cout << "total wall " << fmt(seconds_since(start), 4) << " s; failures "
            << gate.failures << std::endl;
  return gate.failures;
}
