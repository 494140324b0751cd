#include <catch2/catch_amalgamated.hpp>

#include <utility>
#include <vector>

#include "fgiv/granularity.hpp"
#include "helpers.hpp"

using namespace fgiv;

TEST_CASE("deterministic power-law shares are a valid, descending grid") {
  const SizeDistribution d = deterministic_shares(50, 0.85);
  REQUIRE(d.shares.sum() == Catch::Approx(1.0).margin(1e-12));
  REQUIRE((d.shares.array() > 0.0).all());
  for (Index i = 1; i < d.raw_sizes.size(); ++i)
    REQUIRE(d.raw_sizes(i) < d.raw_sizes(i - 1));
  REQUIRE(d.mu.has_value());
  REQUIRE(*d.mu == 0.85);
}

TEST_CASE("calibrated (n, mu) grid pairs hold concentration near 0.12") {
  const std::vector<std::pair<Index, double>> pairs = {
      {30, 0.92}, {50, 0.85}, {100, 0.80}, {200, 0.77}, {500, 0.75}};
  for (const auto& [n, mu] : pairs) {
    const double h = herfindahl(deterministic_shares(n, mu).shares);
    INFO("n=" << n << " mu=" << mu << " h=" << h);
    REQUIRE(h >= 0.11);
    REQUIRE(h <= 0.13);
  }
}

TEST_CASE("equal shares give herfindahl 1/n") {
  const Vec w = Vec::Constant(25, 1.0 / 25.0);
  REQUIRE(herfindahl(w) == Catch::Approx(0.04).epsilon(1e-12));
}

TEST_CASE("herfindahl validates its input") {
  Vec w(3);
  w << 0.6, 0.6, -0.2;
  REQUIRE_THROWS_MATCHES(herfindahl(w), Error, ErrcMatches(errc::not_normalized));
  w << 0.5, 0.3, 0.3;
  REQUIRE_THROWS_MATCHES(herfindahl(w), Error, ErrcMatches(errc::not_normalized));
}

TEST_CASE("large-n concentration approaches the zeta-ratio limit for mu < 1") {
  // at mu = 1/2 the limit is zeta(4)/zeta(2)^2 = (pi^4/90)/(pi^2/6)^2 = 0.4
  const double lim = asymptotic_herfindahl_limit(0.5);
  REQUIRE(lim == Catch::Approx(0.4).margin(1e-9));
  const double h = herfindahl(deterministic_shares(1000000, 0.5).shares);
  REQUIRE(std::abs(h - lim) < 0.01);

  // the finite-n index decreases toward the limit from above
  const double h_small = herfindahl(deterministic_shares(1000, 0.5).shares);
  REQUIRE(h_small > h);
  REQUIRE(h > lim);
}

TEST_CASE("zeta-ratio limit rejects mu outside (0,1)") {
  REQUIRE_THROWS_MATCHES(asymptotic_herfindahl_limit(1.0), Error,
                         ErrcMatches(errc::mu_out_of_range));
  REQUIRE_THROWS_MATCHES(asymptotic_herfindahl_limit(0.0), Error,
                         ErrcMatches(errc::mu_out_of_range));
}

TEST_CASE("tail regime classification covers the full mu axis") {
  SECTION("open regimes") {
    REQUIRE(classify_tail_regime(3.5).regime == TailCase::I);
    REQUIRE(classify_tail_regime(3.5).herfindahl_rate == "1/sqrt(N)");
    REQUIRE(classify_tail_regime(1.4).regime == TailCase::III);
    REQUIRE(classify_tail_regime(1.4).herfindahl_rate == "N^{-(1-1/mu)}");
    REQUIRE(classify_tail_regime(0.8).regime == TailCase::V);
    REQUIRE(classify_tail_regime(0.8).herfindahl_rate == "Theta_p(1)");
  }
  SECTION("boundary singletons are closed") {
    const TailRegime two = classify_tail_regime(2.0);
    REQUIRE(two.regime == TailCase::II);
    REQUIRE(two.herfindahl_rate == "sqrt(log(N)/N)");
    REQUIRE(two.mu_lo == two.mu_hi);
    const TailRegime one = classify_tail_regime(1.0);
    REQUIRE(one.regime == TailCase::IV);
    REQUIRE(one.herfindahl_rate == "1/log(N)");
  }
  SECTION("interval endpoints bracket the input") {
    const TailRegime r = classify_tail_regime(1.4);
    REQUIRE(r.mu_lo <= 1.4);
    REQUIRE(r.mu_hi >= 1.4);
  }
  SECTION("slowly varying case is flag-only") {
    REQUIRE(classify_tail_regime(0.0, true).regime == TailCase::VI);
    REQUIRE(classify_tail_regime(5.0, true).regime == TailCase::VI);
    REQUIRE_THROWS_MATCHES(classify_tail_regime(0.0), Error, ErrcMatches(errc::invalid_mu));
    REQUIRE_THROWS_MATCHES(classify_tail_regime(-1.0), Error, ErrcMatches(errc::invalid_mu));
  }
}

TEST_CASE("pareto sampler honors scale, seed, and tail index") {
  const SizeDistribution a = sample_pareto_sizes(5000, 1.5, 2.0, 42);
  REQUIRE((a.raw_sizes.array() >= 2.0).all());
  const SizeDistribution b = sample_pareto_sizes(5000, 1.5, 2.0, 42);
  REQUIRE((a.raw_sizes - b.raw_sizes).cwiseAbs().maxCoeff() == 0.0);
  const SizeDistribution c = sample_pareto_sizes(5000, 1.5, 2.0, 43);
  REQUIRE((a.raw_sizes - c.raw_sizes).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("hill estimator recovers the tail index of a pareto sample") {
  const SizeDistribution d = sample_pareto_sizes(20000, 1.5, 1.0, 7);
  const double est = estimate_tail_index(d.raw_sizes, TailMethod::mle);
  REQUIRE(est == Catch::Approx(1.5).margin(0.15));
}

TEST_CASE("rank regression recovers the exponent of the deterministic grid") {
  const SizeDistribution d = deterministic_shares(2000, 1.2);
  const double ols = estimate_tail_index(d.raw_sizes, TailMethod::ols_rank);
  REQUIRE(ols == Catch::Approx(1.2).margin(0.05));
  const double wls = estimate_tail_index(d.raw_sizes, TailMethod::wls);
  REQUIRE(wls == Catch::Approx(1.2).margin(0.05));
}

TEST_CASE("percentile estimators recover the exponent of the deterministic grid") {
  const SizeDistribution d = deterministic_shares(20000, 1.1);
  TailOptions opt;
  const double pct = estimate_tail_index(d.raw_sizes, TailMethod::percentile, opt);
  REQUIRE(pct == Catch::Approx(1.1).epsilon(0.05));
  const double mod = estimate_tail_index(d.raw_sizes, TailMethod::modified_percentile, opt);
  REQUIRE(mod == Catch::Approx(1.1).epsilon(0.05));
  const double geo = estimate_tail_index(d.raw_sizes, TailMethod::geometric_percentile, opt);
  REQUIRE(geo == Catch::Approx(1.1).epsilon(0.05));
}

TEST_CASE("tail estimation rejects unusable samples") {
  SECTION("all equal") {
    const Vec w = Vec::Constant(100, 3.0);
    REQUIRE_THROWS_MATCHES(estimate_tail_index(w, TailMethod::mle), Error,
                           ErrcMatches(errc::degenerate_sample));
  }
  SECTION("nonpositive sizes") {
    Vec w(12);
    w << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, -1;
    REQUIRE_THROWS_MATCHES(estimate_tail_index(w, TailMethod::mle), Error,
                           ErrcMatches(errc::invalid_scale));
  }
  SECTION("tail fraction leaves too few points") {
    const SizeDistribution d = deterministic_shares(50, 1.0);  // 10% of 50 = 5 < 10
    REQUIRE_THROWS_MATCHES(estimate_tail_index(d.raw_sizes, TailMethod::mle), Error,
                           ErrcMatches(errc::too_few_tail_observations));
  }
  SECTION("fewer than two observations") {
    const Vec w = Vec::Constant(1, 5.0);
    REQUIRE_THROWS_MATCHES(estimate_tail_index(w, TailMethod::percentile), Error,
                           ErrcMatches(errc::too_few_tail_observations));
  }
}

TEST_CASE("tail estimators respect custom options") {
  const SizeDistribution d = sample_pareto_sizes(20000, 2.0, 1.0, 99);
  TailOptions wide;
  wide.tail_fraction = 0.25;
  const double est_wide = estimate_tail_index(d.raw_sizes, TailMethod::mle, wide);
  REQUIRE(est_wide == Catch::Approx(2.0).margin(0.2));
  TailOptions anchors;
  anchors.q_lo = 0.60;
  anchors.q_hi = 0.90;
  const double est_pct = estimate_tail_index(d.raw_sizes, TailMethod::percentile, anchors);
  REQUIRE(est_pct == Catch::Approx(2.0).margin(0.2));
}
