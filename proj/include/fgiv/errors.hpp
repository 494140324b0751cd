#pragma once

#include <stdexcept>
#include <string>

namespace fgiv {

// Every failure mode the library reports, shared across modules so callers
// can branch on a single code instead of parsing messages.
enum class errc {
  // csv / panel ingestion
  missing_cell,
  duplicate_cell,
  non_numeric_value,
  dimension_mismatch,
  // granularity
  invalid_mu,
  invalid_scale,
  not_normalized,
  mu_out_of_range,
  too_few_tail_observations,
  degenerate_sample,
  // factor model
  rank_too_large,
  eigen_failure,
  kmax_too_large,
  rank_deficient_loadings,
  zero_loading_period,
  singular_design,
  // covariance
  not_positive_definite,
  no_feasible_c,
  invalid_rho,
  // estimators
  weak_denominator,
  lag_without_time_varying_shares,
  singular_weight_matrix,
  lag_too_large,
  // simulation
  infeasible_targets,
  truth_unavailable,
  excessive_failures,
  // plumbing
  no_convergence,
  io_error,
  config_error,
};

inline const char* errc_name(errc c) {
  switch (c) {
    case errc::missing_cell: return "MissingCell";
    case errc::duplicate_cell: return "DuplicateCell";
    case errc::non_numeric_value: return "NonNumericValue";
    case errc::dimension_mismatch: return "DimensionMismatch";
    case errc::invalid_mu: return "InvalidMu";
    case errc::invalid_scale: return "InvalidScale";
    case errc::not_normalized: return "NotNormalized";
    case errc::mu_out_of_range: return "MuOutOfRange";
    case errc::too_few_tail_observations: return "TooFewTailObservations";
    case errc::degenerate_sample: return "DegenerateSample";
    case errc::rank_too_large: return "RankTooLarge";
    case errc::eigen_failure: return "EigenFailure";
    case errc::kmax_too_large: return "KmaxTooLarge";
    case errc::rank_deficient_loadings: return "RankDeficientLoadings";
    case errc::zero_loading_period: return "ZeroLoadingPeriod";
    case errc::singular_design: return "SingularDesign";
    case errc::not_positive_definite: return "NotPositiveDefinite";
    case errc::no_feasible_c: return "NoFeasibleC";
    case errc::invalid_rho: return "InvalidRho";
    case errc::weak_denominator: return "WeakDenominator";
    case errc::lag_without_time_varying_shares: return "LagWithoutTimeVaryingShares";
    case errc::singular_weight_matrix: return "SingularWeightMatrix";
    case errc::lag_too_large: return "LagTooLarge";
    case errc::infeasible_targets: return "InfeasibleTargets";
    case errc::truth_unavailable: return "TruthUnavailable";
    case errc::excessive_failures: return "ExcessiveFailures";
    case errc::no_convergence: return "NoConvergence";
    case errc::io_error: return "IoError";
    case errc::config_error: return "ConfigError";
  }
  return "UnknownError";
}

class Error : public std::runtime_error {
 public:
  Error(errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}
  errc code() const noexcept { return code_; }

 private:
  errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool cond, errc code, const std::string& msg) {
  if (!cond) fail(code, msg);
}

}  // namespace fgiv
