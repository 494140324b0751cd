#pragma once

#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fgiv/errors.hpp"
#include "fgiv/estimators.hpp"
#include "fgiv/simulation.hpp"
#include "fgiv/types.hpp"

namespace fgiv {

using Json = nlohmann::ordered_json;

namespace detail {

inline void reject_unknown_keys(const Json& j, std::initializer_list<const char*> allowed,
                                const std::string& ctx) {
  require(j.is_object(), errc::config_error, ctx + " must be a JSON object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : allowed) known |= item.key() == k;
    require(known, errc::config_error, "unknown key in " + ctx + ": " + item.key());
  }
}

template <typename T>
T get_field(const Json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(errc::config_error, std::string("field has the wrong type: ") + key);
  }
}

inline Json matrix_to_json(const Mat& m) {
  Json rows = Json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Json vector_to_json(const Vec& v) {
  Json out = Json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline Vec vector_from_json(const Json& j, const char* key) {
  require(j.is_array(), errc::config_error, std::string(key) + " must be an array");
  Vec v(static_cast<Index>(j.size()));
  Index i = 0;
  for (const auto& x : j) {
    require(x.is_number(), errc::config_error, std::string(key) + " must hold numbers");
    v(i++) = x.get<double>();
  }
  return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// file IO with parse-position reporting
// ---------------------------------------------------------------------------

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), errc::io_error, "cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 1, col = 1;
    const std::size_t stop = std::min(text.size(), e.byte > 0 ? e.byte - 1 : 0);
    for (std::size_t i = 0; i < stop; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    fail(errc::config_error, path + ":" + std::to_string(line) + ":" + std::to_string(col) +
                                 ": JSON parse error: " + e.what());
  }
}

inline void write_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), errc::io_error, "cannot open " + path + " for writing");
  out << j.dump(2) << '\n';
  require(out.good(), errc::io_error, "write failed: " + path);
}

// ---------------------------------------------------------------------------
// DgpConfig
// ---------------------------------------------------------------------------

inline Json to_json(const DgpConfig& cfg) {
  Json j;
  j["n"] = cfg.n;
  j["t"] = cfg.t;
  j["mu"] = cfg.mu;
  j["phi_s"] = cfg.phi_s;
  j["phi_d"] = cfg.phi_d;
  j["r"] = cfg.r;
  j["design"] = cfg.design == Design::d1 ? "d1" : "d2";
  j["psi_targets"] = Json{{"psi_u", cfg.psi_targets.psi_u},
                          {"psi_u_eta", cfg.psi_targets.psi_u_eta},
                          {"psi_u_eps", cfg.psi_targets.psi_u_eps()}};
  j["banded"] = Json{{"bandwidth", cfg.banded.bandwidth},
                     {"decay", cfg.banded.decay},
                     {"variance_low", cfg.banded.variance_low},
                     {"variance_high", cfg.banded.variance_high}};
  j["seed"] = cfg.seed;
  return j;
}

namespace detail {

constexpr std::initializer_list<const char*> kDgpKeys = {
    "n", "t", "mu", "phi_s", "phi_d", "r", "design", "psi_targets", "banded", "seed"};

inline void apply_dgp_fields(const Json& j, DgpConfig& cfg) {
  cfg.n = get_field<Index>(j, "n", cfg.n);
  cfg.t = get_field<Index>(j, "t", cfg.t);
  cfg.mu = get_field<double>(j, "mu", cfg.mu);
  cfg.phi_s = get_field<double>(j, "phi_s", cfg.phi_s);
  cfg.phi_d = get_field<double>(j, "phi_d", cfg.phi_d);
  cfg.r = get_field<Index>(j, "r", cfg.r);
  if (j.contains("design")) {
    const auto d = j.at("design").get<std::string>();
    require(d == "d1" || d == "d2", errc::config_error, "design must be d1 or d2");
    cfg.design = d == "d1" ? Design::d1 : Design::d2;
  }
  if (j.contains("psi_targets")) {
    const Json& p = j.at("psi_targets");
    reject_unknown_keys(p, {"psi_u", "psi_u_eta", "psi_u_eps"}, "psi_targets");
    cfg.psi_targets.psi_u = get_field<double>(p, "psi_u", cfg.psi_targets.psi_u);
    cfg.psi_targets.psi_u_eta = get_field<double>(p, "psi_u_eta", cfg.psi_targets.psi_u_eta);
    if (p.contains("psi_u_eps")) {
      const double given = p.at("psi_u_eps").get<double>();
      require(std::abs(given - cfg.psi_targets.psi_u_eps()) <= 1e-9, errc::config_error,
              "psi_u_eps is inconsistent with psi_u and psi_u_eta");
    }
  }
  if (j.contains("banded")) {
    const Json& b = j.at("banded");
    reject_unknown_keys(b, {"bandwidth", "decay", "variance_low", "variance_high"}, "banded");
    cfg.banded.bandwidth = get_field<Index>(b, "bandwidth", cfg.banded.bandwidth);
    cfg.banded.decay = get_field<double>(b, "decay", cfg.banded.decay);
    cfg.banded.variance_low = get_field<double>(b, "variance_low", cfg.banded.variance_low);
    cfg.banded.variance_high = get_field<double>(b, "variance_high", cfg.banded.variance_high);
  }
  cfg.seed = get_field<std::uint64_t>(j, "seed", cfg.seed);
}

}  // namespace detail

inline DgpConfig dgp_config_from_json(const Json& j, DgpConfig base = {}) {
  detail::reject_unknown_keys(j, detail::kDgpKeys, "config");
  detail::apply_dgp_fields(j, base);
  base.validate();
  return base;
}

// ---------------------------------------------------------------------------
// estimator configuration blocks
// ---------------------------------------------------------------------------

inline Json to_json(const CovConfig& cov) {
  Json j;
  j["method"] = cov.method == CovMethod::identity ? "identity"
                : cov.method == CovMethod::poet   ? "poet"
                                                  : "fgl";
  j["shrink"] = cov.shrink == Shrink::soft ? "soft" : "hard";
  j["c"] = cov.c_const;
  j["rho"] = cov.rho;
  j["weighted"] = cov.weighted;
  j["cv"] = cov.cv;
  j["cv_folds"] = cov.cv_folds;
  if (cov.cv_grid.size() > 0) j["cv_grid"] = detail::vector_to_json(cov.cv_grid);
  return j;
}

inline CovConfig cov_config_from_json(const Json& j, CovConfig base = {}) {
  detail::reject_unknown_keys(
      j, {"method", "shrink", "c", "rho", "weighted", "cv", "cv_folds", "cv_grid"}, "cov");
  if (j.contains("method")) {
    const auto m = j.at("method").get<std::string>();
    require(m == "identity" || m == "poet" || m == "fgl", errc::config_error,
            "cov.method must be identity, poet, or fgl");
    base.method = m == "identity" ? CovMethod::identity
                  : m == "poet"   ? CovMethod::poet
                                  : CovMethod::fgl;
  }
  if (j.contains("shrink")) {
    const auto s = j.at("shrink").get<std::string>();
    require(s == "soft" || s == "hard", errc::config_error, "cov.shrink must be soft or hard");
    base.shrink = s == "soft" ? Shrink::soft : Shrink::hard;
  }
  base.c_const = detail::get_field<double>(j, "c", base.c_const);
  base.rho = detail::get_field<double>(j, "rho", base.rho);
  base.weighted = detail::get_field<bool>(j, "weighted", base.weighted);
  base.cv = detail::get_field<bool>(j, "cv", base.cv);
  base.cv_folds = detail::get_field<int>(j, "cv_folds", base.cv_folds);
  if (j.contains("cv_grid")) base.cv_grid = detail::vector_from_json(j.at("cv_grid"), "cv_grid");
  return base;
}

inline Json to_json(const VarianceSpec& vk) {
  Json j;
  j["kind"] = vk.kind == VarianceKind::hc ? "hc" : "hac";
  j["lags"] = vk.lags;
  return j;
}

inline VarianceSpec variance_spec_from_json(const Json& j, VarianceSpec base = {}) {
  detail::reject_unknown_keys(j, {"kind", "lags"}, "variance");
  if (j.contains("kind")) {
    const auto k = j.at("kind").get<std::string>();
    require(k == "hc" || k == "hac", errc::config_error, "variance.kind must be hc or hac");
    base.kind = k == "hc" ? VarianceKind::hc : VarianceKind::hac;
  }
  base.lags = detail::get_field<int>(j, "lags", base.lags);
  return base;
}

// ---------------------------------------------------------------------------
// Monte Carlo configuration (DgpConfig fields plus harness fields, one object)
// ---------------------------------------------------------------------------

struct McConfig {
  DgpConfig dgp;
  McOptions options;
};

inline McConfig mc_config_from_json(const Json& j, McConfig base = {}) {
  detail::reject_unknown_keys(
      j,
      {"n", "t", "mu", "phi_s", "phi_d", "r", "design", "psi_targets", "banded", "seed",
       "m_reps", "estimators", "nominal_size", "threads", "rmax", "cov", "variance", "tol",
       "max_iter"},
      "mc config");
  detail::apply_dgp_fields(j, base.dgp);
  base.dgp.validate();

  auto& o = base.options;
  o.m_reps = detail::get_field<int>(j, "m_reps", o.m_reps);
  if (j.contains("estimators")) {
    o.estimators.clear();
    require(j.at("estimators").is_array(), errc::config_error, "estimators must be an array");
    for (const auto& e : j.at("estimators"))
      o.estimators.push_back(parse_mc_estimator(e.get<std::string>()));
  }
  o.nominal_size = detail::get_field<double>(j, "nominal_size", o.nominal_size);
  o.threads = detail::get_field<int>(j, "threads", o.threads);
  o.rmax = detail::get_field<Index>(j, "rmax", o.rmax);
  if (j.contains("cov")) o.cov = cov_config_from_json(j.at("cov"), o.cov);
  if (j.contains("variance")) o.vk = variance_spec_from_json(j.at("variance"), o.vk);
  o.tol = detail::get_field<double>(j, "tol", o.tol);
  o.max_iter = detail::get_field<int>(j, "max_iter", o.max_iter);
  return base;
}

// ---------------------------------------------------------------------------
// reports
// ---------------------------------------------------------------------------

inline Json to_json(const ElasticityFit& fit) {
  Json j;
  j["schema_version"] = "1";
  j["estimate"] = detail::vector_to_json(fit.estimate);
  Json names = Json::array();
  for (const auto& n : fit.coef_names) names.push_back(n);
  j["coef_names"] = std::move(names);
  j["std_errors"] = detail::vector_to_json(fit.std_errors);
  j["std_error"] = fit.std_error;
  j["variance_kind"] = fit.variance_kind == VarianceKind::hc ? "hc" : "hac";
  j["hac_lags"] = fit.hac_lags;
  j["t_stat"] = fit.t_stat;
  if (fit.j_stat) {
    j["j_stat"] = Json{{"value", fit.j_stat->value},
                       {"df", fit.j_stat->df},
                       {"p_value", fit.j_stat->p_value}};
  }
  j["first_stage"] = Json{{"f_stat", fit.first_stage.f_stat}, {"r2", fit.first_stage.r2}};
  j["iterations"] = fit.iterations;
  j["converged"] = fit.converged;
  j["weak_instrument"] = fit.weak_instrument;
  j["cov_failed"] = fit.cov_failed;
  j["ridge_applied"] = fit.ridge_applied;
  if (fit.beta.size() > 0) j["beta"] = detail::vector_to_json(fit.beta);
  if (fit.e_weights.size() > 0) j["e_weights"] = detail::vector_to_json(fit.e_weights);
  j["instrument_label"] = fit.instrument.label;
  return j;
}

// The report deliberately omits the thread count: outputs must be identical
// for any parallel schedule, and byte-comparing reports is the cheap check.
inline Json to_json(const McReport& rep) {
  Json j;
  j["schema_version"] = rep.schema_version;
  j["config"] = to_json(rep.config);
  j["m_reps"] = rep.m_reps;
  j["nominal_size"] = rep.nominal_size;
  j["rmax"] = rep.rmax;
  Json ests = Json::array();
  for (const auto& s : rep.estimators) {
    Json e;
    e["name"] = s.name;
    e["truth"] = s.truth;
    e["n_ok"] = s.n_ok;
    e["n_failed"] = s.n_failed;
    e["bias"] = s.bias;
    e["rmse"] = s.rmse;
    e["mean_se"] = s.mean_se;
    e["t_size"] = s.t_size;
    if (s.j_size) e["j_size"] = *s.j_size;
    e["failure_rate"] = s.failure_rate;
    ests.push_back(std::move(e));
  }
  j["estimators"] = std::move(ests);
  j["psi_u_achieved"] = rep.psi_u_achieved;
  j["psi_u_eta_achieved"] = rep.psi_u_eta_achieved;
  j["min_corr_z_us"] = rep.min_corr_z_us;
  j["mean_mu2_gmm"] = rep.mean_mu2_gmm;
  j["mean_mu2_fgiv"] = rep.mean_mu2_fgiv;
  j["sim_failures"] = rep.sim_failures;
  return j;
}

inline Json truth_to_json(const SimulatedMarket& m) {
  Json j;
  j["schema_version"] = "1";
  j["sigma2_u"] = m.truth.targets.sigma2_u;
  j["sigma2_lambda"] = m.truth.targets.sigma2_lambda;
  j["sigma2_eps"] = m.truth.targets.sigma2_eps;
  j["zero_lambda_variance"] = m.truth.targets.zero_lambda_variance;
  j["banded_retries"] = m.truth.banded_retries;
  j["shares"] = detail::vector_to_json(m.truth.shares);
  j["epsilon"] = detail::vector_to_json(m.truth.epsilon);
  j["u_s"] = detail::vector_to_json(Vec(m.truth.u * m.truth.shares));
  j["factors"] = detail::matrix_to_json(m.truth.factors);
  j["loadings"] = detail::matrix_to_json(m.truth.loadings);
  return j;
}

// ---------------------------------------------------------------------------
// CSV emitters
// ---------------------------------------------------------------------------

inline void write_aggregates_csv(std::ostream& out, const SimulatedMarket& m) {
  out << "time,d,p\n";
  out.precision(17);
  for (Index t = 0; t < m.d.values.size(); ++t)
    out << m.panel.time_ids[static_cast<std::size_t>(t)] << ',' << m.d.values(t) << ','
        << m.p.values(t) << '\n';
}

// One row per period (single row labelled "1" for static shares); round-trips
// through load_shares_csv, which maps a one-row file back to fixed mode.
inline void write_shares_csv(std::ostream& out, const ShareSeries& shares,
                             const std::vector<std::string>& unit_ids) {
  out << "time";
  for (const auto& u : unit_ids) out << ',' << u;
  out << '\n';
  out.precision(17);
  for (Index t = 0; t < shares.weights.rows(); ++t) {
    out << (t + 1);
    for (Index i = 0; i < shares.weights.cols(); ++i) out << ',' << shares.weights(t, i);
    out << '\n';
  }
}

inline void write_mc_table_csv(std::ostream& out, const McReport& rep) {
  out << "estimator,truth,bias,rmse,mean_se,t_size,j_size,n_ok,failure_rate\n";
  out.precision(17);
  for (const auto& s : rep.estimators) {
    out << s.name << ',' << s.truth << ',' << s.bias << ',' << s.rmse << ',' << s.mean_se << ','
        << s.t_size << ',';
    if (s.j_size) out << *s.j_size;
    out << ',' << s.n_ok << ',' << s.failure_rate << '\n';
  }
}

}  // namespace fgiv
