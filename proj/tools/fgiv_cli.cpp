// Command-line front end: simulate factor-structured markets, estimate
// elasticities on CSV panels, run Monte Carlo studies, and compute
// concentration and tail diagnostics. Exit codes: 0 success, 1 runtime or
// estimation failure, 2 configuration or parse failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fgiv/covariance.hpp"
#include "fgiv/errors.hpp"
#include "fgiv/estimators.hpp"
#include "fgiv/factor_model.hpp"
#include "fgiv/granularity.hpp"
#include "fgiv/json_io.hpp"
#include "fgiv/panel.hpp"
#include "fgiv/simulation.hpp"
#include "fgiv/special_functions.hpp"

namespace {

using namespace fgiv;

int exit_code_for(errc c) {
  switch (c) {
    case errc::config_error:
    case errc::invalid_mu:
    case errc::mu_out_of_range:
    case errc::kmax_too_large:
    case errc::infeasible_targets:
    case errc::invalid_rho:
      return 2;
    default:
      return 1;
  }
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), errc::io_error, "cannot open " + path);
  return in;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), errc::io_error, "cannot open " + path + " for writing");
  return out;
}

void emit_json(const Json& j, const std::string& out_path) {
  if (out_path.empty())
    std::cout << j.dump(2) << '\n';
  else
    write_json_file(out_path, j);
}

CsvLayout parse_layout(const std::string& s) {
  require(s == "wide" || s == "long", errc::config_error, "--layout must be wide or long");
  return s == "wide" ? CsvLayout::wide_form : CsvLayout::long_form;
}

// "time,d,p" with the value columns located by header name
struct Aggregates {
  AggregateSeries d, p;
};

Aggregates load_aggregates(const std::string& path) {
  auto in = open_input(path);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), errc::io_error, "empty file: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();

  std::vector<std::string> header;
  std::stringstream hs(line);
  for (std::string cell; std::getline(hs, cell, ',');) header.push_back(cell);
  std::ptrdiff_t d_col = -1, p_col = -1;
  for (std::size_t k = 0; k < header.size(); ++k) {
    if (header[k] == "d") d_col = static_cast<std::ptrdiff_t>(k);
    if (header[k] == "p") p_col = static_cast<std::ptrdiff_t>(k);
  }
  require(d_col >= 0 && p_col >= 0, errc::config_error,
          path + ": header must name columns d and p");

  std::vector<double> dv, pv;
  for (std::size_t row = 2; std::getline(in, line); ++row) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
    require(cells.size() == header.size(), errc::missing_cell,
            path + ":" + std::to_string(row) + ": wrong number of cells");
    const auto parse = [&](std::ptrdiff_t k) {
      try {
        std::size_t used = 0;
        const double v = std::stod(cells[static_cast<std::size_t>(k)], &used);
        require(used == cells[static_cast<std::size_t>(k)].size(), errc::non_numeric_value,
                "trailing characters");
        return v;
      } catch (const std::exception&) {
        fail(errc::non_numeric_value,
             path + ":" + std::to_string(row) + ": not a number: " +
                 cells[static_cast<std::size_t>(k)]);
      }
    };
    dv.push_back(parse(d_col));
    pv.push_back(parse(p_col));
  }
  require(!dv.empty(), errc::io_error, path + ": no data rows");

  Aggregates out;
  out.d.values = Eigen::Map<const Vec>(dv.data(), static_cast<Index>(dv.size()));
  out.d.label = "d";
  out.p.values = Eigen::Map<const Vec>(pv.data(), static_cast<Index>(pv.size()));
  out.p.label = "p";
  return out;
}

// one value per line; a single leading non-numeric line is treated as a header
Vec read_sizes(const std::string& path) {
  auto in = open_input(path);
  std::vector<double> vals;
  std::string line;
  bool first = true;
  for (std::size_t row = 1; std::getline(in, line); ++row, first = false) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    try {
      std::size_t used = 0;
      const double v = std::stod(line, &used);
      require(used == line.size(), errc::non_numeric_value, "trailing characters");
      vals.push_back(v);
    } catch (const std::exception&) {
      if (first) continue;  // header line
      fail(errc::non_numeric_value, path + ":" + std::to_string(row) + ": not a number: " + line);
    }
  }
  require(vals.size() >= 2, errc::too_few_tail_observations, path + ": need at least 2 sizes");
  return Eigen::Map<const Vec>(vals.data(), static_cast<Index>(vals.size()));
}

// Replace each column of targets by its residual from OLS on [1 | controls].
void partial_out(Mat& targets, const Mat& controls) {
  const Index t_len = targets.rows();
  require(controls.rows() == t_len, errc::dimension_mismatch, "control length != T");
  Mat x(t_len, controls.cols() + 1);
  x.col(0).setOnes();
  x.rightCols(controls.cols()) = controls;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  require(qr.rank() == x.cols(), errc::singular_design, "collinear controls");
  targets -= x * qr.solve(targets);
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string config_path, out_dir = ".", design = "d1";
  DgpConfig cfg;
  CLI::App* cmd = nullptr;
};

void run_simulate(SimulateArgs& a) {
  DgpConfig cfg;
  if (!a.config_path.empty()) cfg = dgp_config_from_json(read_json_file(a.config_path));
  const auto touched = [&](const char* name) { return a.cmd->count(name) > 0; };
  if (touched("--n")) cfg.n = a.cfg.n;
  if (touched("--t")) cfg.t = a.cfg.t;
  if (touched("--mu")) cfg.mu = a.cfg.mu;
  if (touched("--r")) cfg.r = a.cfg.r;
  if (touched("--phi-s")) cfg.phi_s = a.cfg.phi_s;
  if (touched("--phi-d")) cfg.phi_d = a.cfg.phi_d;
  if (touched("--seed")) cfg.seed = a.cfg.seed;
  if (touched("--design")) {
    require(a.design == "d1" || a.design == "d2", errc::config_error, "--design must be d1 or d2");
    cfg.design = a.design == "d1" ? Design::d1 : Design::d2;
  }
  cfg.validate();

  const SimulatedMarket m = simulate_design(cfg);
  std::filesystem::create_directories(a.out_dir);
  const auto at = [&](const char* name) { return (std::filesystem::path(a.out_dir) / name).string(); };

  {
    auto out = open_output(at("panel.csv"));
    write_panel_csv_wide(out, m.panel);
  }
  {
    auto out = open_output(at("aggregates.csv"));
    write_aggregates_csv(out, m);
  }
  {
    auto out = open_output(at("shares.csv"));
    write_shares_csv(out, ShareSeries::make_fixed(m.truth.shares), m.panel.unit_ids);
  }
  Json truth = truth_to_json(m);
  truth["config"] = to_json(cfg);
  write_json_file(at("truth.json"), truth);
  std::cout << "wrote panel.csv, aggregates.csv, shares.csv, truth.json to " << a.out_dir << '\n';
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

struct EstimateArgs {
  std::string panel_path, aggregates_path, shares_path, layout = "wide";
  std::string equation, method, cov = "poet", shrink = "soft", out_path;
  std::vector<std::string> covariate_paths;
  std::string observed_loadings_path, controls_path;
  Index r = -1, kmax = 0;
  int hac_lags = -1, cv_folds = 5, max_iter = 100;
  double poet_c = 1.0, rho = 0.05, tol = 1e-6;
  bool lag_shares = false, cv = false, gk_unaugmented = false, fgl_unweighted = false;
  CLI::App* cmd = nullptr;
};

void run_estimate(EstimateArgs& a) {
  require(a.equation == "supply" || a.equation == "demand", errc::config_error,
          "--equation must be supply or demand");
  require(a.method == "fgiv" || a.method == "gmm" || a.method == "gk" || a.method == "fgmm" ||
              a.method == "misspec",
          errc::config_error, "--method must be one of fgiv, gmm, gk, fgmm, misspec");
  if (a.shares_path.empty()) {
    require(!a.lag_shares, errc::config_error,
            "--lag-shares needs time-varying shares; pass a shares file with --shares");
    require(a.method == "fgmm", errc::config_error, "--shares is required for this method");
  }

  const CsvLayout layout = parse_layout(a.layout);
  auto panel_in = open_input(a.panel_path);
  Panel panel = load_panel_csv(panel_in, layout);
  Aggregates agg = load_aggregates(a.aggregates_path);
  require(agg.d.size() == panel.n_periods(), errc::dimension_mismatch,
          "aggregate length != panel periods");

  ShareSeries shares;
  if (!a.shares_path.empty()) {
    auto in = open_input(a.shares_path);
    shares = load_shares_csv(in, CsvLayout::wide_form);
  }

  Json extra;  // diagnostics accumulated by the preprocessing steps

  if (!a.controls_path.empty()) {
    // a controls grid may hold a single series, so skip the panel validator
    auto in = open_input(a.controls_path);
    const auto controls = detail::read_grid(in, CsvLayout::wide_form);
    require(controls.values.allFinite(), errc::missing_cell, "controls hold non-finite cells");
    require(controls.values.rows() == panel.n_periods(), errc::dimension_mismatch,
            "controls length != panel periods");
    partial_out(panel.values, controls.values);
    Mat ap(agg.d.size(), 2);
    ap.col(0) = agg.d.values;
    ap.col(1) = agg.p.values;
    partial_out(ap, controls.values);
    agg.d.values = ap.col(0);
    agg.p.values = ap.col(1);
    extra["controls_partialled"] = controls.values.cols();
  }

  if (!a.observed_loadings_path.empty()) {
    // static loadings arrive as one row, so skip the panel validator here too
    auto in = open_input(a.observed_loadings_path);
    const auto o = detail::read_grid(in, CsvLayout::wide_form);
    require(o.values.allFinite(), errc::missing_cell, "loadings hold non-finite cells");
    require(o.values.cols() == panel.n_units(), errc::dimension_mismatch,
            "observed loading width != panel units");
    const auto obs = observed_loading_factor(demean_cross_section(panel), o.values);
    // remove the centered-loading component so later factor steps cannot
    // absorb it; the factor series itself is reported below
    for (Index t = 0; t < panel.n_periods(); ++t) {
      Vec ot = o.values.rows() > 1 ? Vec(o.values.row(t).transpose())
                                   : Vec(o.values.row(0).transpose());
      ot.array() -= ot.mean();
      panel.values.row(t) -= obs.factor.values(t) * ot.transpose();
    }
    extra["observed_factor"] = detail::vector_to_json(obs.factor.values);
  }

  Index r = a.r;
  if (r < 0) {
    const Index m = std::min(panel.n_periods(), panel.n_units());
    const Index kmax = a.kmax >= 1 ? a.kmax : std::min<Index>(8, m - 2);
    const auto sel = select_num_factors(demean_cross_section(panel), kmax);
    r = sel.r_gr;  // growth-ratio pick; both criteria reported
    extra["factor_selection"] =
        Json{{"kmax", kmax}, {"r_er", sel.r_er},         {"r_gr", sel.r_gr},
             {"chosen", r},  {"er_at_boundary", sel.er_at_boundary},
             {"gr_at_boundary", sel.gr_at_boundary}};
  }

  VarianceSpec vk;
  if (a.cmd->count("--hac-lags") > 0) vk = VarianceSpec{VarianceKind::hac, a.hac_lags};

  CovConfig cov;
  require(a.cov == "identity" || a.cov == "poet" || a.cov == "fgl", errc::config_error,
          "--cov must be identity, poet, or fgl");
  cov.method = a.cov == "identity" ? CovMethod::identity
               : a.cov == "poet"   ? CovMethod::poet
                                   : CovMethod::fgl;
  require(a.shrink == "soft" || a.shrink == "hard", errc::config_error,
          "--shrink must be soft or hard");
  cov.shrink = a.shrink == "soft" ? Shrink::soft : Shrink::hard;
  cov.c_const = a.poet_c;
  cov.rho = a.rho;
  cov.weighted = !a.fgl_unweighted;
  cov.cv = a.cv;
  cov.cv_folds = a.cv_folds;

  ElasticityFit fit;
  if (a.equation == "demand") {
    require(a.method != "misspec", errc::config_error,
            "misspec applies to the supply equation only");
    if (a.method == "fgmm") {
      require(r >= 1, errc::config_error, "fgmm needs r >= 1");
      const Panel demeaned = demean_cross_section(panel);
      fit = bn_fgmm_demand(agg.d, agg.p, pca_factors(demeaned, r), vk);
    } else {
      const PipelineParts pipe = build_pipeline(panel, shares, r, a.lag_shares);
      if (a.method == "fgiv")
        fit = fgiv_demand(agg.d, agg.p, pipe.z, vk);
      else if (a.method == "gmm")
        fit = gmm_demand(agg.d, agg.p, pipe.z, pipe.fe, vk);
      else
        fit = gk_baselines(panel, agg.p, agg.d, shares, pipe.fe, vk, !a.gk_unaugmented).demand;
    }
  } else {
    require(a.method != "fgmm", errc::config_error, "fgmm estimates the demand equation only");
    if (a.method == "fgiv") {
      if (a.covariate_paths.empty()) {
        fit = fgiv_supply_alg1(panel, agg.p, shares, r, cov, vk, a.tol, a.max_iter, a.lag_shares);
      } else {
        require(!a.lag_shares, errc::config_error,
                "--covariates cannot be combined with --lag-shares");
        std::vector<Panel> covariates;
        for (const auto& path : a.covariate_paths) {
          auto in = open_input(path);
          covariates.push_back(load_panel_csv(in, layout));
        }
        fit = fgiv_supply_alg2(panel, agg.p, shares, covariates, r, cov, vk, a.tol, a.max_iter);
      }
    } else if (a.method == "gmm") {
      fit = cov.method == CovMethod::fgl
                ? gmm_supply_alg3prime(panel, agg.p, agg.d, shares, r, cov, vk, a.tol, a.max_iter)
                : gmm_supply_alg3(panel, agg.p, agg.d, shares, r, cov, vk, a.tol, a.max_iter);
    } else if (a.method == "misspec") {
      fit = misspecified_supply(panel, agg.p, shares, r, vk, a.lag_shares);
    } else {
      const PipelineParts pipe = build_pipeline(panel, shares, r, false);
      fit = gk_baselines(panel, agg.p, agg.d, shares, pipe.fe, vk, !a.gk_unaugmented).supply;
    }
  }

  Json report = to_json(fit);
  report["equation"] = a.equation;
  report["method"] = a.method;
  report["cov"] = a.cov;
  report["r"] = r;
  for (auto& item : extra.items()) report[item.key()] = std::move(item.value());
  emit_json(report, a.out_path);
}

// ---------------------------------------------------------------------------
// mc
// ---------------------------------------------------------------------------

struct McArgs {
  std::string config_path, out_path = "mc_report.json", table_path, design = "d1";
  std::string estimators;  // comma separated
  DgpConfig cfg;
  int m_reps = 1000, threads = 1;
  Index rmax = -1;
  double nominal_size = 0.05;
  CLI::App* cmd = nullptr;
};

void run_mc(McArgs& a) {
  McConfig mc;
  if (!a.config_path.empty()) mc = mc_config_from_json(read_json_file(a.config_path));
  const auto touched = [&](const char* name) { return a.cmd->count(name) > 0; };
  if (touched("--n")) mc.dgp.n = a.cfg.n;
  if (touched("--t")) mc.dgp.t = a.cfg.t;
  if (touched("--mu")) mc.dgp.mu = a.cfg.mu;
  if (touched("--r")) mc.dgp.r = a.cfg.r;
  if (touched("--seed")) mc.dgp.seed = a.cfg.seed;
  if (touched("--design")) {
    require(a.design == "d1" || a.design == "d2", errc::config_error, "--design must be d1 or d2");
    mc.dgp.design = a.design == "d1" ? Design::d1 : Design::d2;
  }
  if (touched("--m-reps")) mc.options.m_reps = a.m_reps;
  if (touched("--threads")) mc.options.threads = a.threads;
  if (touched("--rmax")) mc.options.rmax = a.rmax;
  if (touched("--nominal-size")) mc.options.nominal_size = a.nominal_size;
  if (touched("--estimators")) {
    mc.options.estimators.clear();
    std::stringstream ss(a.estimators);
    for (std::string name; std::getline(ss, name, ',');)
      if (!name.empty()) mc.options.estimators.push_back(parse_mc_estimator(name));
  }
  if (mc.options.estimators.empty())
    mc.options.estimators = {McEstimator::fgiv_demand, McEstimator::gmm_demand,
                             McEstimator::gk_demand,   McEstimator::fgmm_demand,
                             McEstimator::fgiv_supply, McEstimator::gmm_supply,
                             McEstimator::gk_supply,   McEstimator::misspec_supply};
  mc.dgp.validate();

  const McReport report = run_monte_carlo(mc.dgp, mc.options);
  emit_json(to_json(report), a.out_path);
  if (!a.table_path.empty()) {
    auto out = open_output(a.table_path);
    write_mc_table_csv(out, report);
  }
}

// ---------------------------------------------------------------------------
// tail
// ---------------------------------------------------------------------------

struct TailArgs {
  std::string sizes_path, out_path, plot_path;
  double tail_fraction = 0.10, q_lo = 0.75, q_hi = 0.95;
};

void run_tail(TailArgs& a) {
  const Vec sizes = read_sizes(a.sizes_path);
  TailOptions opt;
  opt.tail_fraction = a.tail_fraction;
  opt.q_lo = a.q_lo;
  opt.q_hi = a.q_hi;

  const std::pair<const char*, TailMethod> methods[] = {
      {"mle", TailMethod::mle},
      {"ols_rank", TailMethod::ols_rank},
      {"percentile", TailMethod::percentile},
      {"modified_percentile", TailMethod::modified_percentile},
      {"geometric_percentile", TailMethod::geometric_percentile},
      {"wls", TailMethod::wls}};

  Json j;
  j["schema_version"] = "1";
  j["n"] = sizes.size();
  j["options"] = Json{{"tail_fraction", opt.tail_fraction}, {"q_lo", opt.q_lo}, {"q_hi", opt.q_hi}};
  Json est;
  for (const auto& [name, method] : methods) {
    try {
      est[name] = estimate_tail_index(sizes, method, opt);
    } catch (const Error&) {
      est[name] = nullptr;  // method not defined on this sample
    }
  }
  j["estimates"] = std::move(est);
  emit_json(j, a.out_path);

  if (!a.plot_path.empty()) {
    std::vector<double> desc(sizes.data(), sizes.data() + sizes.size());
    std::sort(desc.begin(), desc.end(), std::greater<>());
    auto out = open_output(a.plot_path);
    out << "log_rank,log_size\n";
    out.precision(17);
    for (std::size_t i = 0; i < desc.size(); ++i) {
      require(desc[i] > 0.0, errc::invalid_scale, "sizes must be positive for the log-log plot");
      out << std::log(static_cast<double>(i + 1)) << ',' << std::log(desc[i]) << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// herfindahl
// ---------------------------------------------------------------------------

struct HerfindahlArgs {
  std::string shares_path, out_path, plot_path;
  Index n = 0;
  double mu = 0.0;
  bool slowly_varying = false;
  CLI::App* cmd = nullptr;
};

const char* tail_case_name(TailCase c) {
  switch (c) {
    case TailCase::I: return "I";
    case TailCase::II: return "II";
    case TailCase::III: return "III";
    case TailCase::IV: return "IV";
    case TailCase::V: return "V";
    case TailCase::VI: return "VI";
  }
  return "?";
}

void run_herfindahl(HerfindahlArgs& a) {
  const bool have_mu = a.cmd->count("--mu") > 0;
  Vec shares;
  if (!a.shares_path.empty()) {
    auto in = open_input(a.shares_path);
    const ShareSeries s = load_shares_csv(in, CsvLayout::wide_form);
    require(!s.time_varying(), errc::config_error,
            "time-varying shares: pass a single-period file");
    shares = s.at(0);
  } else {
    require(a.n >= 2 && have_mu, errc::config_error,
            "pass either --shares or both --n and --mu");
    shares = deterministic_shares(a.n, a.mu).shares;
  }

  Json j;
  j["schema_version"] = "1";
  j["n"] = shares.size();
  j["h"] = herfindahl(shares);
  if (have_mu || a.slowly_varying) {
    if (have_mu) j["mu"] = a.mu;
    const TailRegime regime = classify_tail_regime(have_mu ? a.mu : 0.0, a.slowly_varying);
    j["regime"] = Json{{"case", tail_case_name(regime.regime)},
                       {"mu_lo", regime.mu_lo},
                       {"mu_hi", regime.mu_hi},
                       {"herfindahl_rate", regime.herfindahl_rate}};
    if (have_mu && a.mu > 0.0 && a.mu < 1.0) j["zeta_limit"] = asymptotic_herfindahl_limit(a.mu);
  }
  emit_json(j, a.out_path);

  if (!a.plot_path.empty()) {
    std::vector<double> desc(shares.data(), shares.data() + shares.size());
    std::sort(desc.begin(), desc.end(), std::greater<>());
    auto out = open_output(a.plot_path);
    out << "rank,share\n";
    out.precision(17);
    for (std::size_t i = 0; i < desc.size(); ++i) out << (i + 1) << ',' << desc[i] << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"granular instrumental variables toolkit"};
  app.require_subcommand(1);

  SimulateArgs sim;
  sim.cmd = app.add_subcommand("simulate", "draw a simulated market and write its files");
  sim.cmd->add_option("--config", sim.config_path, "JSON config; flags override its fields");
  sim.cmd->add_option("--n", sim.cfg.n, "number of units");
  sim.cmd->add_option("--t", sim.cfg.t, "number of periods");
  sim.cmd->add_option("--mu", sim.cfg.mu, "power-law tail index of the size grid");
  sim.cmd->add_option("--r", sim.cfg.r, "number of common factors");
  sim.cmd->add_option("--phi-s", sim.cfg.phi_s, "supply elasticity");
  sim.cmd->add_option("--phi-d", sim.cfg.phi_d, "demand elasticity");
  sim.cmd->add_option("--design", sim.design, "d1 (iid shocks) or d2 (banded covariance)");
  sim.cmd->add_option("--seed", sim.cfg.seed, "RNG seed");
  sim.cmd->add_option("--out", sim.out_dir, "output directory");

  EstimateArgs est;
  est.cmd = app.add_subcommand("estimate", "estimate an elasticity from CSV inputs");
  est.cmd->add_option("--panel", est.panel_path, "unit-level panel CSV")->required();
  est.cmd->add_option("--aggregates", est.aggregates_path, "CSV with columns time,d,p")->required();
  est.cmd->add_option("--shares", est.shares_path, "size-share CSV (one row = static)");
  est.cmd->add_option("--layout", est.layout, "panel CSV layout: wide or long");
  est.cmd->add_option("--equation", est.equation, "supply or demand")->required();
  est.cmd->add_option("--method", est.method, "fgiv, gmm, gk, fgmm, or misspec")->required();
  est.cmd->add_option("--cov", est.cov, "idiosyncratic covariance: identity, poet, or fgl");
  est.cmd->add_option("--r", est.r, "number of factors; omit to select automatically");
  est.cmd->add_option("--kmax", est.kmax, "largest candidate when selecting the factor count");
  est.cmd->add_option("--hac-lags", est.hac_lags,
                      "Bartlett lag cap; presence switches to HAC, negative uses the T-based rule");
  est.cmd->add_flag("--lag-shares", est.lag_shares, "instrument with previous-period shares");
  est.cmd->add_option("--covariates", est.covariate_paths,
                      "panel CSVs of exogenous covariates with a common slope");
  est.cmd->add_option("--observed-loadings", est.observed_loadings_path,
                      "loading CSV for a factor extracted by cross-sectional regression");
  est.cmd->add_option("--controls", est.controls_path,
                      "aggregate controls CSV partialled out of all series");
  est.cmd->add_option("--poet-c", est.poet_c, "threshold constant");
  est.cmd->add_option("--rho", est.rho, "graphical lasso penalty");
  est.cmd->add_option("--shrink", est.shrink, "soft or hard thresholding");
  est.cmd->add_flag("--cv", est.cv, "cross-validate the covariance tuning constant");
  est.cmd->add_option("--cv-folds", est.cv_folds, "cross-validation folds");
  est.cmd->add_flag("--gk-unaugmented", est.gk_unaugmented, "gk without factor augmentation");
  est.cmd->add_flag("--fgl-unweighted", est.fgl_unweighted, "unit penalty weights in fgl");
  est.cmd->add_option("--tol", est.tol, "iteration convergence tolerance");
  est.cmd->add_option("--max-iter", est.max_iter, "iteration cap");
  est.cmd->add_option("--out", est.out_path, "report path; omit for stdout");

  McArgs mc;
  mc.cmd = app.add_subcommand("mc", "Monte Carlo study over simulated markets");
  mc.cmd->add_option("--config", mc.config_path, "JSON config; flags override its fields");
  mc.cmd->add_option("--m-reps", mc.m_reps, "number of replications");
  mc.cmd->add_option("--threads", mc.threads, "worker threads");
  mc.cmd->add_option("--estimators", mc.estimators, "comma-separated estimator names");
  mc.cmd->add_option("--n", mc.cfg.n, "number of units");
  mc.cmd->add_option("--t", mc.cfg.t, "number of periods");
  mc.cmd->add_option("--mu", mc.cfg.mu, "power-law tail index");
  mc.cmd->add_option("--r", mc.cfg.r, "number of common factors");
  mc.cmd->add_option("--rmax", mc.rmax, "factor count for the _rmax variants");
  mc.cmd->add_option("--design", mc.design, "d1 or d2");
  mc.cmd->add_option("--seed", mc.cfg.seed, "base RNG seed");
  mc.cmd->add_option("--nominal-size", mc.nominal_size, "test size for rejection rates");
  mc.cmd->add_option("--out", mc.out_path, "JSON report path");
  mc.cmd->add_option("--table", mc.table_path, "CSV summary table path");

  TailArgs tail;
  auto* tail_cmd = app.add_subcommand("tail", "tail index estimates from a size file");
  tail_cmd->add_option("--sizes", tail.sizes_path, "one-column CSV of sizes")->required();
  tail_cmd->add_option("--tail-fraction", tail.tail_fraction, "top fraction used by mle/ols/wls");
  tail_cmd->add_option("--q-lo", tail.q_lo, "lower percentile anchor");
  tail_cmd->add_option("--q-hi", tail.q_hi, "upper percentile anchor");
  tail_cmd->add_option("--out", tail.out_path, "JSON path; omit for stdout");
  tail_cmd->add_option("--plot-data", tail.plot_path, "log rank vs log size CSV");

  HerfindahlArgs h;
  h.cmd = app.add_subcommand("herfindahl", "concentration index and tail regime");
  h.cmd->add_option("--shares", h.shares_path, "single-period share CSV");
  h.cmd->add_option("--n", h.n, "units in the deterministic power-law grid");
  h.cmd->add_option("--mu", h.mu, "tail index for the grid / regime classification");
  h.cmd->add_flag("--slowly-varying", h.slowly_varying, "classify the slowly-varying regime");
  h.cmd->add_option("--out", h.out_path, "JSON path; omit for stdout");
  h.cmd->add_option("--plot-data", h.plot_path, "rank vs share CSV");

  try {
    app.parse(argc, argv);
    if (app.got_subcommand(sim.cmd)) run_simulate(sim);
    if (app.got_subcommand(est.cmd)) run_estimate(est);
    if (app.got_subcommand(mc.cmd)) run_mc(mc);
    if (app.got_subcommand(tail_cmd)) run_tail(tail);
    if (app.got_subcommand(h.cmd)) run_herfindahl(h);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
