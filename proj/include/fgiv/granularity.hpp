#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fgiv/errors.hpp"
#include "fgiv/rng.hpp"
#include "fgiv/special_functions.hpp"
#include "fgiv/types.hpp"

namespace fgiv {

// ---------------------------------------------------------------------------
// size distributions
// ---------------------------------------------------------------------------

struct SizeDistribution {
  Vec raw_sizes;               // positive, descending for the deterministic grid
  Vec shares;                  // raw_sizes / sum, sums to 1
  std::optional<double> mu;    // tail index used to generate, when known
};

namespace detail {
inline SizeDistribution from_raw(Vec raw, std::optional<double> mu) {
  require((raw.array() > 0.0).all(), errc::invalid_scale, "sizes must be positive");
  SizeDistribution d;
  d.shares = raw / raw.sum();
  d.raw_sizes = std::move(raw);
  d.mu = mu;
  return d;
}
}  // namespace detail

// Size grid with unit i holding (i/N)^(-1/mu); strictly decreasing in i.
inline SizeDistribution deterministic_shares(Index n, double mu) {
  require(n >= 2, errc::dimension_mismatch, "need n >= 2");
  require(mu > 0.0, errc::invalid_mu, "mu must be positive");
  Vec raw(n);
  const double nd = static_cast<double>(n);
  for (Index i = 0; i < n; ++i)
    raw(i) = std::pow(static_cast<double>(i + 1) / nd, -1.0 / mu);
  return detail::from_raw(std::move(raw), mu);
}

// i.i.d. draws with P(S > s) = (s / scale)^(-mu) for s >= scale, by inverting
// the cdf on open-interval uniforms (so draws are finite and >= scale).
inline SizeDistribution sample_pareto_sizes(Index n, double mu, double scale, std::uint64_t seed) {
  require(n >= 2, errc::dimension_mismatch, "need n >= 2");
  require(mu > 0.0, errc::invalid_mu, "mu must be positive");
  require(scale > 0.0, errc::invalid_scale, "scale must be positive");
  Rng rng(seed);
  Vec raw(n);
  for (Index i = 0; i < n; ++i) raw(i) = scale * std::pow(rng.uniform_open(), -1.0 / mu);
  return detail::from_raw(std::move(raw), mu);
}

// ---------------------------------------------------------------------------
// herfindahl index and its large-N behavior
// ---------------------------------------------------------------------------

inline double herfindahl(const Vec& shares) {
  require(shares.size() >= 1, errc::dimension_mismatch, "empty share vector");
  require((shares.array() >= 0.0).all(), errc::not_normalized, "negative share");
  require(std::abs(shares.sum() - 1.0) <= 1e-10, errc::not_normalized, "shares must sum to 1");
  return shares.squaredNorm();
}

// Limit of the Herfindahl index under the deterministic power-law grid with
// tail index mu in (0,1): zeta(2/mu) / zeta(1/mu)^2.
inline double asymptotic_herfindahl_limit(double mu) {
  require(mu > 0.0 && mu < 1.0, errc::mu_out_of_range, "limit defined for mu in (0,1)");
  const double z1 = riemann_zeta(1.0 / mu);
  const double z2 = riemann_zeta(2.0 / mu);
  return z2 / (z1 * z1);
}

// ---------------------------------------------------------------------------
// tail regimes
// ---------------------------------------------------------------------------

enum class TailCase { I, II, III, IV, V, VI };

struct TailRegime {
  TailCase regime;
  double mu_lo, mu_hi;          // interval of mu covered by the regime
  std::string herfindahl_rate;  // symbolic decay rate of the Herfindahl index
};

// Boundary points are closed on the singleton rows: mu=2 -> II, mu=1 -> IV.
// Case VI models a slowly varying (mu -> 0) distribution and is reachable only
// through the explicit flag, never from a numeric mu.
inline TailRegime classify_tail_regime(double mu, bool slowly_varying = false) {
  if (slowly_varying) return {TailCase::VI, 0.0, 0.0, "Theta_p(1)"};
  require(mu > 0.0, errc::invalid_mu, "mu must be positive (use the slowly-varying flag for VI)");
  constexpr double inf = std::numeric_limits<double>::infinity();
  if (mu > 2.0) return {TailCase::I, 2.0, inf, "1/sqrt(N)"};
  if (mu == 2.0) return {TailCase::II, 2.0, 2.0, "sqrt(log(N)/N)"};
  if (mu > 1.0) return {TailCase::III, 1.0, 2.0, "N^{-(1-1/mu)}"};
  if (mu == 1.0) return {TailCase::IV, 1.0, 1.0, "1/log(N)"};
  return {TailCase::V, 0.0, 1.0, "Theta_p(1)"};
}

// ---------------------------------------------------------------------------
// tail index estimation
// ---------------------------------------------------------------------------

enum class TailMethod { mle, ols_rank, percentile, modified_percentile, geometric_percentile, wls };

struct TailOptions {
  double tail_fraction = 0.10;  // top fraction used by mle / ols_rank / wls
  double q_lo = 0.75;           // percentile method anchor pair
  double q_hi = 0.95;
};

namespace detail {

// empirical quantile at probability p: order statistic ceil(p*n), ascending
inline double empirical_quantile(const std::vector<double>& ascending, double p) {
  const auto n = static_cast<double>(ascending.size());
  auto idx = static_cast<std::ptrdiff_t>(std::ceil(p * n)) - 1;
  idx = std::clamp<std::ptrdiff_t>(idx, 0, static_cast<std::ptrdiff_t>(ascending.size()) - 1);
  return ascending[static_cast<std::size_t>(idx)];
}

inline double percentile_pair_estimate(const std::vector<double>& ascending, double p_lo,
                                       double p_hi) {
  const double x_lo = empirical_quantile(ascending, p_lo);
  const double x_hi = empirical_quantile(ascending, p_hi);
  require(x_hi > x_lo && x_lo > 0.0, errc::degenerate_sample,
          "quantiles do not separate; cannot estimate tail");
  return std::log((1.0 - p_lo) / (1.0 - p_hi)) / std::log(x_hi / x_lo);
}

// least squares of log(rank - 1/2) on log(size) over the top-k tail;
// slope is -mu. Weighted variant multiplies observation i by weight w_i.
inline double rank_size_slope(const std::vector<double>& descending, std::size_t k,
                              bool rank_weighted) {
  double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double w = rank_weighted ? static_cast<double>(i + 1) : 1.0;
    const double x = std::log(descending[i]);
    const double y = std::log(static_cast<double>(i + 1) - 0.5);
    sw += w;
    sx += w * x;
    sy += w * y;
    sxx += w * x * x;
    sxy += w * x * y;
  }
  const double den = sxx - sx * sx / sw;
  require(std::abs(den) > 1e-30, errc::degenerate_sample, "zero log-size spread");
  return (sxy - sx * sy / sw) / den;
}

}  // namespace detail

inline double estimate_tail_index(const Vec& sizes, TailMethod method, TailOptions opt = {}) {
  require(sizes.size() >= 2, errc::too_few_tail_observations, "need at least 2 sizes");
  require((sizes.array() > 0.0).all(), errc::invalid_scale, "sizes must be positive");
  std::vector<double> asc(sizes.data(), sizes.data() + sizes.size());
  std::sort(asc.begin(), asc.end());
  require(asc.front() < asc.back(), errc::degenerate_sample, "all sizes equal");
  std::vector<double> desc(asc.rbegin(), asc.rend());

  const auto n = desc.size();
  auto k = static_cast<std::size_t>(std::floor(opt.tail_fraction * static_cast<double>(n)));
  k = std::min(k, n - 1);  // keep one observation below the cutoff for mle

  switch (method) {
    case TailMethod::mle: {
      // Hill estimator on the top-k order statistics above cutoff X_(k+1)
      require(k >= 10, errc::too_few_tail_observations,
              "tail fraction leaves fewer than 10 observations");
      double s = 0.0;
      for (std::size_t i = 0; i < k; ++i) s += std::log(desc[i] / desc[k]);
      require(s > 0.0, errc::degenerate_sample, "zero log-spread in tail");
      return static_cast<double>(k) / s;
    }
    case TailMethod::ols_rank:
    case TailMethod::wls: {
      require(k >= 10, errc::too_few_tail_observations,
              "tail fraction leaves fewer than 10 observations");
      return -detail::rank_size_slope(desc, k, method == TailMethod::wls);
    }
    case TailMethod::percentile:
      require(n >= 10, errc::too_few_tail_observations, "need at least 10 observations");
      return detail::percentile_pair_estimate(asc, opt.q_lo, opt.q_hi);
    case TailMethod::modified_percentile:
      require(n >= 10, errc::too_few_tail_observations, "need at least 10 observations");
      return detail::percentile_pair_estimate(asc, 0.5, 0.9);
    case TailMethod::geometric_percentile: {
      // geometric mean over a fixed grid of quantile anchor pairs
      require(n >= 10, errc::too_few_tail_observations, "need at least 10 observations");
      const double lows[] = {0.50, 0.60, 0.70, 0.80};
      const double highs[] = {0.90, 0.95, 0.99};
      double log_sum = 0.0;
      int cnt = 0;
      for (double lo : lows)
        for (double hi : highs) {
          log_sum += std::log(detail::percentile_pair_estimate(asc, lo, hi));
          ++cnt;
        }
      return std::exp(log_sum / cnt);
    }
  }
  fail(errc::config_error, "unknown tail method");
}

}  // namespace fgiv
