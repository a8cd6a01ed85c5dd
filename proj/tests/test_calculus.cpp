#include <catch2/catch_amalgamated.hpp>

#include "martrep/calculus.hpp"
#include "support/fixtures.hpp"
#include "support/gen.hpp"

using namespace martrep;

namespace {

// Independent oracle: stochastic integral evaluated by the explicit ancestor
// sum rather than the forward recursion used by the library.
AdaptedProcess oracle_integral(const ScenarioTree& t, const PredictableProcess& f,
                               const AdaptedProcess& X) {
  AdaptedProcess out(t.node_count());
  for (int i = 0; i < t.node_count(); ++i) {
    Rat acc(0);
    for (int s = 1; s <= t.time(i); ++s) {
      int prev = t.ancestor_at(i, s - 1);
      int cur = t.ancestor_at(i, s);
      acc += f.v[prev] * (X.v[cur] - X.v[prev]);
    }
    out.v[i] = acc;
  }
  return out;
}

}  // namespace

TEST_CASE("conditional expectation: weighted average, constants, terminal time") {
  ScenarioTree t = fixtures::binomial();
  MeasureVector q = fixtures::measure(t, {Rat(1, 3), Rat(2, 3)});

  // (1/3)*1 + (2/3)*0 = 1/3 at the root
  AdaptedProcess z = condexp(t, q, {Rat(1), Rat(0)}, 0);
  CHECK(z.v[t.index_of("root")] == Rat(1, 3));
  CHECK(z.v[t.index_of("u")] == Rat(1, 3));  // F_0 variable extended along paths

  AdaptedProcess c = condexp(t, q, {Rat(7), Rat(7)}, 0);
  for (const Rat& v : c.v) CHECK(v == Rat(7));

  AdaptedProcess terminal = condexp(t, q, {Rat(1), Rat(0)}, t.horizon());
  CHECK(terminal.v[t.index_of("u")] == Rat(1));
  CHECK(terminal.v[t.index_of("d")] == Rat(0));
}

TEST_CASE("conditional expectation on zero-mass nodes: throw or zero by flag") {
  ScenarioTree t = fixtures::binomial();
  MeasureVector q = fixtures::measure(t, {Rat(1), Rat(0)});
  try {
    condexp(t, q, {Rat(1), Rat(5)}, 1);
    FAIL("expected ZeroMassNode");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::zero_mass_node);
    CHECK(e.node() == "d");
  }
  AdaptedProcess z = condexp(t, q, {Rat(1), Rat(5)}, 1, /*zero_mass_as_zero=*/true);
  CHECK(z.v[t.index_of("d")] == Rat(0));
  CHECK(z.v[t.index_of("u")] == Rat(1));
}

TEST_CASE("martingale test: exact verdict and worst violation") {
  ScenarioTree t = fixtures::binomial();
  AdaptedProcess x = fixtures::binomial_asset(t);

  CHECK(is_martingale(t, fixtures::measure(t, {Rat(1, 3), Rat(2, 3)}), x).ok);

  auto v = is_martingale(t, fixtures::measure(t, {Rat(1, 2), Rat(1, 2)}), x);
  CHECK(!v.ok);
  CHECK(v.worst_node == t.index_of("root"));
  CHECK(v.worst_violation == Rat(1, 4));

  AdaptedProcess constant(t.node_count(), Rat(3));
  CHECK(is_martingale(t, fixtures::measure(t, {Rat(1, 9), Rat(8, 9)}), constant).ok);
}

TEST_CASE("stochastic integral: telescoping, zero, single step") {
  ScenarioTree t = fixtures::binomial();
  AdaptedProcess x = fixtures::binomial_asset(t);

  PredictableProcess one(t.node_count(), Rat(1));
  AdaptedProcess tele = stoch_integral(t, one, x);
  for (int i = 0; i < t.node_count(); ++i) CHECK(tele.v[i] == x.v[i] - x.v[0]);

  PredictableProcess zero(t.node_count(), Rat(0));
  for (const Rat& v : stoch_integral(t, zero, x).v) CHECK(v == 0);

  PredictableProcess f(t.node_count(), Rat(2, 3));
  AdaptedProcess ix = stoch_integral(t, f, x);
  CHECK(ix.v[t.index_of("root")] == Rat(0));
  CHECK(ix.v[t.index_of("u")] == Rat(2, 3));
  CHECK(ix.v[t.index_of("d")] == Rat(-1, 3));
}

TEST_CASE("quadratic covariation: constants, squared increments") {
  ScenarioTree t = fixtures::binomial();
  AdaptedProcess x = fixtures::binomial_asset(t);

  AdaptedProcess constant(t.node_count(), Rat(5));
  for (const Rat& v : quad_covar(t, constant, constant).v) CHECK(v == 0);

  AdaptedProcess qv = quad_covar(t, x, x);
  CHECK(qv.v[t.index_of("root")] == Rat(0));
  CHECK(qv.v[t.index_of("u")] == Rat(1));
  CHECK(qv.v[t.index_of("d")] == Rat(1, 4));
}

TEST_CASE("covariation of two integrals against the same integrator") {
  // [ (f.X), (g.X) ] = (fg) . [X,X] on random two-period trees, exactly.
  Prng rng(2024);
  for (int rep = 0; rep < 25; ++rep) {
    ScenarioTree t = testgen::random_tree(rng, 2, 3);
    AdaptedProcess x = testgen::random_adapted(rng, t);
    PredictableProcess f = testgen::random_predictable(rng, t);
    PredictableProcess g = testgen::random_predictable(rng, t);
    AdaptedProcess lhs = quad_covar(t, stoch_integral(t, f, x), stoch_integral(t, g, x));
    PredictableProcess fg(t.node_count());
    for (int i = 0; i < t.node_count(); ++i) fg.v[i] = f.v[i] * g.v[i];
    AdaptedProcess rhs = stoch_integral(t, fg, quad_covar(t, x, x));
    REQUIRE(lhs.v == rhs.v);
  }
}

TEST_CASE("stopped process: identity, freeze at zero, freeze below a node") {
  ScenarioTree t = fixtures::two_period();
  Prng rng(7);
  AdaptedProcess x = testgen::random_adapted(rng, t);

  StoppingTime horizon(t.node_count());  // never flagged: tau == T
  CHECK(stop_process(t, x, horizon).v == x.v);

  StoppingTime zero(t.node_count());
  zero.flag[0] = 1;
  for (const Rat& v : stop_process(t, x, zero).v) CHECK(v == x.v[0]);

  StoppingTime at_u(t.node_count());
  at_u.flag[t.index_of("u")] = 1;
  AdaptedProcess s = stop_process(t, x, at_u);
  CHECK(s.v[t.index_of("uu")] == x.v[t.index_of("u")]);
  CHECK(s.v[t.index_of("ud")] == x.v[t.index_of("u")]);
  CHECK(s.v[t.index_of("du")] == x.v[t.index_of("du")]);
  CHECK(s.v[t.index_of("dd")] == x.v[t.index_of("dd")]);
}

TEST_CASE("first hitting stop: saturation, immediate hit, left limit") {
  ScenarioTree t2 = fixtures::two_period();
  AdaptedProcess low(t2.node_count(), Rat(0));

  // never hits, integer level: cap at min(k, T)
  StoppingTime s1 = first_hitting_stop(t2, low, Rat(1));
  for (int leaf : t2.leaves()) CHECK(s1.value_at_leaf(t2, leaf) == 1);
  StoppingTime s5 = first_hitting_stop(t2, low, Rat(5));
  for (int leaf : t2.leaves()) CHECK(s5.value_at_leaf(t2, leaf) == 2);

  // root already at the level: stops immediately
  AdaptedProcess high(t2.node_count(), Rat(9));
  StoppingTime s0 = first_hitting_stop(t2, high, Rat(1));
  for (int leaf : t2.leaves()) CHECK(s0.value_at_leaf(t2, leaf) == 0);

  // [X,X] of the binomial asset against level 1/2: stops at u, not under d
  ScenarioTree t = fixtures::binomial();
  AdaptedProcess qv = quad_covar(t, fixtures::binomial_asset(t), fixtures::binomial_asset(t));
  StoppingTime s = first_hitting_stop(t, qv, Rat(1, 2));
  CHECK(s.flag[t.index_of("u")] == 1);
  CHECK(s.value_at_leaf(t, t.index_of("u")) == 1);
  CHECK(s.value_at_leaf(t, t.index_of("d")) == t.horizon());

  // left-limit trigger: parent at the level flags the child one step later
  ScenarioTree tw = fixtures::two_period();
  AdaptedProcess u(tw.node_count(), Rat(0));
  u.v[tw.index_of("u")] = 3;
  u.v[tw.index_of("uu")] = 0;
  StoppingTime sl = first_hitting_stop(tw, u, Rat(3));
  CHECK(sl.flag[tw.index_of("uu")] == 1);
}

TEST_CASE("integral linearity and associativity hold exactly") {
  Prng rng(99);
  for (int rep = 0; rep < 25; ++rep) {
    ScenarioTree t = testgen::random_tree(rng, 3, 3);
    AdaptedProcess x = testgen::random_adapted(rng, t);
    PredictableProcess f = testgen::random_predictable(rng, t);
    PredictableProcess g = testgen::random_predictable(rng, t);
    Rat a = testgen::random_grid_rat(rng), b = testgen::random_grid_rat(rng);

    PredictableProcess comb(t.node_count());
    for (int i = 0; i < t.node_count(); ++i) comb.v[i] = a * f.v[i] + b * g.v[i];
    AdaptedProcess lhs = stoch_integral(t, comb, x);
    AdaptedProcess fa = stoch_integral(t, f, x), gb = stoch_integral(t, g, x);
    for (int i = 0; i < t.node_count(); ++i)
      REQUIRE(lhs.v[i] == a * fa.v[i] + b * gb.v[i]);

    // g . (f . X) = (gf) . X
    AdaptedProcess inner = stoch_integral(t, f, x);
    AdaptedProcess nested = stoch_integral(t, g, inner);
    PredictableProcess gf(t.node_count());
    for (int i = 0; i < t.node_count(); ++i) gf.v[i] = g.v[i] * f.v[i];
    REQUIRE(nested.v == stoch_integral(t, gf, x).v);
  }
}

TEST_CASE("martingale preservation and optional stopping") {
  Prng rng(1234);
  for (int rep = 0; rep < 25; ++rep) {
    ScenarioTree t = testgen::random_tree(rng, 3, 3);
    MeasureVector q = testgen::random_positive_measure(rng, t);
    AdaptedProcess m = testgen::random_martingale(rng, t, q);
    REQUIRE(is_martingale(t, q, m).ok);

    PredictableProcess f = testgen::random_predictable(rng, t);
    REQUIRE(is_admissible_integrand(t, f, m));
    REQUIRE(is_martingale(t, q, stoch_integral(t, f, m)).ok);

    StoppingTime tau = testgen::random_stopping_time(rng, t);
    REQUIRE(is_martingale(t, q, stop_process(t, m, tau)).ok);
  }
}

TEST_CASE("covariation pull-through: [f.X, Y] = f.[X,Y]") {
  Prng rng(555);
  for (int rep = 0; rep < 25; ++rep) {
    ScenarioTree t = testgen::random_tree(rng, 3, 3);
    AdaptedProcess x = testgen::random_adapted(rng, t);
    AdaptedProcess y = testgen::random_adapted(rng, t);
    PredictableProcess f = testgen::random_predictable(rng, t);
    AdaptedProcess lhs = quad_covar(t, stoch_integral(t, f, x), y);
    AdaptedProcess rhs = stoch_integral(t, f, quad_covar(t, x, y));
    REQUIRE(lhs.v == rhs.v);
  }
}

TEST_CASE("tower property of conditional expectations") {
  Prng rng(31);
  for (int rep = 0; rep < 20; ++rep) {
    ScenarioTree t = testgen::random_tree(rng, 3, 3);
    MeasureVector q = testgen::random_positive_measure(rng, t);
    std::vector<Rat> xi(t.leaf_count());
    for (auto& v : xi) v = testgen::random_grid_rat(rng);
    for (int tp = 0; tp <= t.horizon(); ++tp) {
      for (int ts = 0; ts <= tp; ++ts) {
        AdaptedProcess inner = condexp(t, q, xi, tp);
        AdaptedProcess nested = condexp(t, q, terminal_values(t, inner), ts);
        AdaptedProcess direct = condexp(t, q, xi, ts);
        REQUIRE(nested.v == direct.v);
      }
    }
  }
}

TEST_CASE("forward recursion matches the explicit ancestor-sum formula") {
  Prng rng(808);
  for (int rep = 0; rep < 20; ++rep) {
    ScenarioTree t = testgen::random_tree(rng, 3, 4);
    AdaptedProcess x = testgen::random_adapted(rng, t);
    PredictableProcess f = testgen::random_predictable(rng, t);
    REQUIRE(stoch_integral(t, f, x).v == oracle_integral(t, f, x).v);
  }
}

TEST_CASE("quadratic variation is nondecreasing along paths") {
  Prng rng(4242);
  for (int rep = 0; rep < 20; ++rep) {
    ScenarioTree t = testgen::random_tree(rng, 3, 3);
    AdaptedProcess x = testgen::random_adapted(rng, t);
    AdaptedProcess qv = quad_covar(t, x, x);
    for (int i = 1; i < t.node_count(); ++i) REQUIRE(qv.v[i] >= qv.v[t.parent(i)]);
  }
}
