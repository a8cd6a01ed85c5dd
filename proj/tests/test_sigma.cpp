#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "martrep/linalg.hpp"
#include "martrep/sft.hpp"
#include "martrep/sigma.hpp"
#include "support/fixtures.hpp"
#include "support/gen.hpp"

using namespace martrep;

namespace {

// independent oracle: E1(x) = -gamma - ln x + sum_{k>=1} (-1)^{k+1} x^k/(k k!)
double expint_series(double x) {
  double sum = 0, xk = 1, fact = 1;
  for (int k = 1; k <= 60; ++k) {
    xk *= x;
    fact *= k;
    sum += ((k % 2) ? 1.0 : -1.0) * xk / (k * fact);
  }
  return -0.57721566490153286060 - std::log(x) + sum;
}

StoppingTime grid_stop(const ScenarioTree& t, int level) {
  StoppingTime s(t.node_count());
  for (int i = 0; i < t.node_count(); ++i) s.flag[i] = t.time(i) >= level;
  return s;
}

// a process that is a martingale under both measures at once
AdaptedProcess double_martingale(Prng& rng, const ScenarioTree& t, const MeasureVector& p,
                                 const MeasureVector& q) {
  std::vector<Rat> pm = p.node_mass(t), qm = q.node_mass(t);
  AdaptedProcess m(t.node_count(), Rat(1));
  for (int u = 0; u < t.node_count(); ++u) {
    if (t.is_leaf(u)) continue;
    const auto& kids = t.children(u);
    RatMatrix a(2, static_cast<int>(kids.size()));
    for (std::size_t c = 0; c < kids.size(); ++c) {
      a.at(0, static_cast<int>(c)) = pm[kids[c]];
      a.at(1, static_cast<int>(c)) = qm[kids[c]];
    }
    auto basis = kernel_basis(a);
    std::vector<Rat> delta(kids.size(), Rat(0));
    for (const auto& dir : basis) {
      Rat w = testgen::random_grid_rat(rng, -2, 2);
      for (std::size_t c = 0; c < kids.size(); ++c) delta[c] += w * dir[c];
    }
    for (std::size_t c = 0; c < kids.size(); ++c) m.v[kids[c]] = m.v[u] + delta[c];
  }
  return m;
}

}  // namespace

TEST_CASE("sigma witness: martingale, drifting asset, constant") {
  ScenarioTree t = fixtures::binomial();
  AdaptedProcess x = fixtures::binomial_asset(t);

  SigmaWitness good = sigma_witness(t, fixtures::measure(t, {Rat(1, 3), Rat(2, 3)}), x);
  CHECK(good.verdict);
  CHECK(good.phi.v[0] == Rat(1));

  SigmaWitness bad = sigma_witness(t, fixtures::measure(t, {Rat(1, 2), Rat(1, 2)}), x);
  CHECK(!bad.verdict);
  CHECK(bad.witness_node == t.index_of("root"));
  CHECK(bad.drift == Rat(1, 4));

  AdaptedProcess c(t.node_count(), Rat(9));
  CHECK(sigma_witness(t, fixtures::measure(t, {Rat(1, 9), Rat(8, 9)}), c).verdict);
}

TEST_CASE("any strictly positive scaler works exactly when the identity does") {
  Prng rng(21);
  for (int rep = 0; rep < 30; ++rep) {
    ScenarioTree t = testgen::random_tree(rng, 3, 3);
    MeasureVector q = testgen::random_positive_measure(rng, t);
    AdaptedProcess x = rng.coin() ? testgen::random_martingale(rng, t, q)
                                  : testgen::random_adapted(rng, t);
    PredictableProcess phi(t.node_count(), Rat(1));
    for (int u = 0; u < t.node_count(); ++u)
      if (!t.is_leaf(u)) phi.v[u] = Rat(rng.uniform_int(1, 7), rng.uniform_int(1, 3));
    const bool scaled_mart = is_martingale(t, q, stoch_integral(t, phi, x)).ok;
    REQUIRE(scaled_mart == sigma_witness(t, q, x).verdict);
  }
}

TEST_CASE("ladder weights: single window, two windows, bad ladders") {
  ScenarioTree t = fixtures::two_period();

  PredictableProcess h1 =
      ladder_weights(t, {grid_stop(t, 0), grid_stop(t, 3)}, {Rat(0)});
  for (int u = 0; u < t.node_count(); ++u)
    if (!t.is_leaf(u)) CHECK(h1.v[u] == Rat(1, 2));

  PredictableProcess h2 = ladder_weights(
      t, {grid_stop(t, 0), grid_stop(t, 1), grid_stop(t, 3)}, {Rat(1), Rat(3)});
  CHECK(h2.v[t.index_of("root")] == Rat(1, 4));    // window 1: 1/(2 * 2)
  CHECK(h2.v[t.index_of("u")] == Rat(1, 16));      // window 2: 1/(4 * 4)
  CHECK(h2.v[t.index_of("d")] == Rat(1, 16));

  CHECK_THROWS_AS(ladder_weights(t, {}, {}), Error);
  try {
    ladder_weights(t, {grid_stop(t, 0), grid_stop(t, 1)}, {Rat(0)});  // no saturation
    FAIL("expected BadLadder");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::bad_ladder);
  }
}

TEST_CASE("ladder-weighted martingales stay martingales") {
  Prng rng(22);
  for (int rep = 0; rep < 20; ++rep) {
    ScenarioTree t = testgen::random_tree(rng, 3, 3);
    MeasureVector q = testgen::random_positive_measure(rng, t);
    AdaptedProcess n = testgen::random_martingale(rng, t, q);
    std::vector<StoppingTime> ladder{grid_stop(t, 0), grid_stop(t, 1),
                                     grid_stop(t, t.horizon() + 1)};
    PredictableProcess h = ladder_weights(t, ladder, {Rat(1, 2), Rat(2)});
    for (int u = 0; u < t.node_count(); ++u)
      if (!t.is_leaf(u)) REQUIRE((h.v[u] > 0 && h.v[u] <= Rat(1, 2)));
    REQUIRE(is_martingale(t, q, stoch_integral(t, h, n)).ok);
  }
}

TEST_CASE("sums of sigma-martingales: scalers combine by pointwise minimum") {
  ScenarioTree t = fixtures::binomial();
  MeasureVector q = fixtures::measure(t, {Rat(1, 3), Rat(2, 3)});
  AdaptedProcess x = fixtures::binomial_asset(t);
  SigmaWitness w = sigma_witness(t, q, x);
  REQUIRE(w.verdict);

  SigmaSumResult same_scaler = sigma_sum(t, q, x, w, x, w, Rat(1), Rat(1));
  CHECK(same_scaler.xi.v[0] == Rat(1));
  CHECK(same_scaler.combined.verdict);

  SigmaWitness w2 = w, w3 = w;
  w2.phi = PredictableProcess(t.node_count(), Rat(2));
  w3.phi = PredictableProcess(t.node_count(), Rat(3));
  SigmaSumResult mixed = sigma_sum(t, q, x, w2, x, w3, Rat(1), Rat(2));
  CHECK(mixed.xi.v[0] == Rat(2));
  CHECK(mixed.eta[0].v[0] == Rat(1));
  CHECK(mixed.eta[1].v[0] == Rat(2, 3));
  CHECK(mixed.combined.verdict);

  SigmaSumResult cancel = sigma_sum(t, q, x, w, x, w, Rat(1), Rat(-1));
  for (const Rat& v : cancel.combined.integral.v) CHECK(v == 0);
  CHECK(cancel.combined.verdict);

  SigmaWitness broken = w;
  broken.phi.v[0] = Rat(-1);
  try {
    sigma_sum(t, q, x, broken, x, w, Rat(1), Rat(1));
    FAIL("expected InvalidWitness");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::invalid_witness);
  }
}

TEST_CASE("integrand transfer between scaled drivers") {
  ScenarioTree t = fixtures::binomial();
  AdaptedProcess x = fixtures::binomial_asset(t);

  // identity scalers: transfer is the identity
  std::vector<PredictableProcess> ones{PredictableProcess(t.node_count(), Rat(1))};
  std::vector<PredictableProcess> r{PredictableProcess(t.node_count(), Rat(1, 3))};
  auto same = transfer_integrands(t, r, ones, {x}, /*to_scaled=*/false);
  CHECK(same[0].v[0] == Rat(1, 3));

  // phi = 2: integrand over the scaled driver maps to twice itself over the base
  std::vector<PredictableProcess> twos{PredictableProcess(t.node_count(), Rat(2))};
  auto base = transfer_integrands(t, r, twos, {x}, /*to_scaled=*/false);
  CHECK(base[0].v[0] == Rat(2, 3));

  // round trip reproduces the integrands exactly
  Prng rng(23);
  for (int rep = 0; rep < 20; ++rep) {
    ScenarioTree tr = testgen::random_tree(rng, 3, 3);
    std::vector<AdaptedProcess> assets{testgen::random_adapted(rng, tr),
                                       testgen::random_adapted(rng, tr)};
    std::vector<PredictableProcess> phi;
    for (int j = 0; j < 2; ++j) {
      PredictableProcess pj(tr.node_count(), Rat(1));
      for (int u = 0; u < tr.node_count(); ++u)
        if (!tr.is_leaf(u)) pj.v[u] = Rat(rng.uniform_int(1, 6), rng.uniform_int(1, 3));
      phi.push_back(std::move(pj));
    }
    std::vector<PredictableProcess> f{testgen::random_predictable(rng, tr),
                                      testgen::random_predictable(rng, tr)};
    auto over_scaled = transfer_integrands(tr, f, phi, assets, /*to_scaled=*/true);
    auto back = transfer_integrands(tr, over_scaled, phi, assets, /*to_scaled=*/false);
    for (int j = 0; j < 2; ++j)
      for (int u = 0; u < tr.node_count(); ++u)
        if (!tr.is_leaf(u)) REQUIRE(back[j].v[u] == f[j].v[u]);
  }
}

TEST_CASE("measure-change report: identical measures are fully trivial") {
  ScenarioTree t = fixtures::binomial();
  MeasureVector p = fixtures::measure(t, {Rat(1, 2), Rat(1, 2)});
  Prng rng(24);
  AdaptedProcess m = testgen::random_martingale(rng, t, p);
  MeasureChangeReport rep = measure_change_report(t, m, p, p);
  CHECK(rep.base_martingale);
  CHECK(rep.q_martingale);
  CHECK(rep.product_p_martingale);
  CHECK(rep.equiv_one);
  CHECK(rep.equiv_two);
  CHECK(rep.holds_three);
  CHECK(rep.holds_four);
}

TEST_CASE("measure-change report on the skewed binomial") {
  // M = (1; 2, 1/2) is a Q-martingale for Q = (1/3, 2/3) but not a
  // P-martingale for P = (1/2, 1/2). The product equivalence holds either
  // way; the covariation conclusion needs the P-martingale premise and
  // demonstrably fails without it: [M, Z] has P-drift -1/4 here.
  ScenarioTree t = fixtures::binomial();
  MeasureVector p = fixtures::measure(t, {Rat(1, 2), Rat(1, 2)});
  MeasureVector q = fixtures::measure(t, {Rat(1, 3), Rat(2, 3)});
  AdaptedProcess m = fixtures::binomial_asset(t);
  MeasureChangeReport rep = measure_change_report(t, m, q, p);
  CHECK(!rep.base_martingale);
  CHECK(rep.q_martingale);
  CHECK(rep.product_p_martingale);
  CHECK(rep.equiv_one);
  CHECK(rep.equiv_two);
  CHECK(rep.hypothesis_three);
  CHECK(!rep.conclusion_three);
}

TEST_CASE("measure-change report detects one-sided martingality") {
  // P-martingale that is not a Q-martingale: product with the density
  // process must lose P-martingality in exactly the same cases.
  ScenarioTree t = fixtures::trinomial();
  MeasureVector p = fixtures::measure(t, {Rat(1, 3), Rat(1, 3), Rat(1, 3)});
  MeasureVector q = fixtures::measure(t, {Rat(1, 2), Rat(1, 4), Rat(1, 4)});
  AdaptedProcess m(t.node_count());
  m.v[t.index_of("root")] = 1;
  m.v[t.index_of("a")] = 2;  // P-mean 1, Q-mean 5/4
  m.v[t.index_of("b")] = 1;
  m.v[t.index_of("c")] = 0;
  MeasureChangeReport rep = measure_change_report(t, m, q, p);
  CHECK(rep.base_martingale);
  CHECK(!rep.q_martingale);
  CHECK(!rep.product_p_martingale);
  CHECK(rep.equiv_one);
  CHECK(rep.equiv_two);
  CHECK(rep.holds_three);  // vacuous here
}

TEST_CASE("covariation conclusion holds whenever both martingale properties do") {
  ScenarioTree t = fixtures::trinomial();
  MeasureVector p = fixtures::measure(t, {Rat(1, 3), Rat(1, 3), Rat(1, 3)});
  MeasureVector q = fixtures::measure(t, {Rat(1, 2), Rat(1, 4), Rat(1, 4)});
  Prng rng(25);
  AdaptedProcess m = double_martingale(rng, t, p, q);
  MeasureChangeReport rep = measure_change_report(t, m, q, p);
  REQUIRE(rep.base_martingale);
  REQUIRE(rep.q_martingale);
  CHECK(rep.conclusion_three);
  CHECK(rep.holds_three);
}

TEST_CASE("measure-change equivalences hold across random instances") {
  Prng rng(26);
  int nonvacuous = 0;
  for (int rep = 0; rep < 60; ++rep) {
    ScenarioTree t = testgen::random_tree(rng, 3, 3);
    MeasureVector p = testgen::random_positive_measure(rng, t);
    MeasureVector q = testgen::random_positive_measure(rng, t);
    AdaptedProcess m = rng.coin() ? testgen::random_martingale(rng, t, p)
                                  : double_martingale(rng, t, p, q);
    MeasureChangeReport r = measure_change_report(t, m, q, p);
    REQUIRE(r.equiv_one);
    REQUIRE(r.equiv_two);
    if (r.base_martingale) REQUIRE(r.holds_three);
    if (r.base_martingale && r.hypothesis_three) ++nonvacuous;
  }
  REQUIRE(nonvacuous > 0);  // the implication is exercised, not just vacuous
}

TEST_CASE("non-equivalent measures are rejected") {
  ScenarioTree t = fixtures::binomial();
  MeasureVector p = fixtures::measure(t, {Rat(1, 2), Rat(1, 2)});
  MeasureVector q = fixtures::measure(t, {Rat(1), Rat(0)});
  AdaptedProcess m(t.node_count(), Rat(1));
  try {
    measure_change_report(t, m, q, p);
    FAIL("expected NotEquivalent");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::not_equivalent);
  }
}

TEST_CASE("truncated expectation quadrature against the series oracle") {
  const double i3 = emery_truncated_expectation(1e-3, 1.0);
  CHECK(std::fabs(i3 - (expint_series(1e-3) - expint_series(1.0))) <= 1e-9);
  CHECK(std::fabs(i3 - 6.1122) <= 1e-3);

  const double i8 = emery_truncated_expectation(1e-8, 1.0);
  CHECK(std::fabs(i8 - (expint_series(1e-8) - expint_series(1.0))) <= 1e-9);
  CHECK(std::fabs(i8 - 17.624) <= 1e-2);

  CHECK(emery_truncated_expectation(0.5, 0.5) == 0.0);
  CHECK_THROWS_AS(emery_truncated_expectation(2.0, 1.0), Error);
  CHECK_THROWS_AS(emery_truncated_expectation(0.0, 1.0), Error);
}

TEST_CASE("truncated expectation: monotonicity and the logarithmic lower bound") {
  double prev = 0;
  for (int k = 2; k <= 8; ++k) {
    const double eps = std::pow(10.0, -k);
    const double v = emery_truncated_expectation(eps, 1.0);
    CHECK(v >= std::exp(-1.0) * std::log(1.0 / eps));
    CHECK(v >= prev);  // nonincreasing in eps means nondecreasing as eps falls
    prev = v;
  }
}

TEST_CASE("jump-example Monte Carlo brackets the quadrature") {
  EmeryModel model;
  model.eps = 1e-3;
  model.cap = 1.0;
  model.samples = 100000;
  model.seed = 42;
  EmeryStats stats = emery_simulate(model);
  CHECK(std::fabs(stats.mean - stats.quadrature) <= 3.0 * stats.stderr_);
  CHECK(stats.sigma_residual <= 1e-12);
  CHECK(stats.stderr_ > 0);
}

TEST_CASE("Monte Carlo results are independent of the shard count") {
  EmeryModel a;
  a.eps = 1e-3;
  a.cap = 1.0;
  a.samples = 20000;
  a.seed = 7;
  a.shards = 1;
  EmeryModel b = a;
  b.shards = 3;
  EmeryModel c = a;
  c.shards = 8;
  EmeryStats sa = emery_simulate(a), sb = emery_simulate(b), sc = emery_simulate(c);
  REQUIRE(sa.mean == sb.mean);
  REQUIRE(sa.mean == sc.mean);
  REQUIRE(sa.stderr_ == sb.stderr_);
  REQUIRE(sa.stderr_ == sc.stderr_);
  REQUIRE(sa.sigma_residual == sc.sigma_residual);
}

TEST_CASE("divergence probe exceeds any requested bound") {
  DivergenceWitness w10 = emery_divergence_probe(10.0, 1.0);
  CHECK(w10.value > 10.0);
  CHECK(w10.eps > 0.0);
  CHECK(w10.eps < 1e-3);

  DivergenceWitness w100 = emery_divergence_probe(100.0, 1.0);
  CHECK(w100.value > 100.0);
  CHECK(w100.eps > 0.0);
}

TEST_CASE("collapse probe: bounded tree processes with a witness are martingales") {
  Prng rng(27);
  for (int rep = 0; rep < 20; ++rep) {
    ScenarioTree t = testgen::random_tree(rng, 3, 3);
    MeasureVector q = testgen::random_positive_measure(rng, t);
    AdaptedProcess m = testgen::random_martingale(rng, t, q);
    std::vector<StoppingTime> ladder{grid_stop(t, 1), grid_stop(t, t.horizon() + 1)};
    CollapseProbe probe = sigma_collapse_probe(t, q, m, ladder);
    REQUIRE(probe.martingale);
    for (double e : probe.qv_expectations) REQUIRE(std::isfinite(e));
  }
}

TEST_CASE("sigma verdict equals the martingale verdict across a corpus") {
  std::vector<MarketInstance> corpus = corpus_generate(99, {3, 3, 2, 40});
  for (const MarketInstance& m : corpus) {
    EmmSet set = emm_affine_hull(m.tree, m.assets);
    for (const AdaptedProcess& x : m.assets) {
      REQUIRE(sigma_witness(m.tree, set.reference, x).verdict ==
              is_martingale(m.tree, set.reference, x).ok);
      REQUIRE(sigma_witness(m.tree, m.P, x).verdict == is_martingale(m.tree, m.P, x).ok);
    }
  }
}
