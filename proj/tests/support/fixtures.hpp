#pragma once

// Small hand-checked fixtures shared across suites.

#include <map>
#include <string>
#include <vector>

#include "martrep/tree.hpp"

namespace fixtures {

using martrep::AdaptedProcess;
using martrep::MeasureVector;
using martrep::Rat;
using martrep::ScenarioTree;

/// One-period binomial: root with children u, d at probability 1/2 each.
inline ScenarioTree binomial() {
  return ScenarioTree::build(
      1, {{"root", ""}, {"u", "root"}, {"d", "root"}},
      {{"u", Rat(1, 2)}, {"d", Rat(1, 2)}});
}

/// Asset (1; 2, 1/2) on the binomial.
inline AdaptedProcess binomial_asset(const ScenarioTree& t) {
  AdaptedProcess x(t.node_count());
  x.v[t.index_of("root")] = 1;
  x.v[t.index_of("u")] = 2;
  x.v[t.index_of("d")] = Rat(1, 2);
  return x;
}

/// One-period trinomial: children a, b, c at probability 1/3 each.
inline ScenarioTree trinomial() {
  return ScenarioTree::build(
      1, {{"root", ""}, {"a", "root"}, {"b", "root"}, {"c", "root"}},
      {{"a", Rat(1, 3)}, {"b", Rat(1, 3)}, {"c", Rat(1, 3)}});
}

/// Asset (1; 2, 1, 1/2) on the trinomial.
inline AdaptedProcess trinomial_asset(const ScenarioTree& t) {
  AdaptedProcess x(t.node_count());
  x.v[t.index_of("root")] = 1;
  x.v[t.index_of("a")] = 2;
  x.v[t.index_of("b")] = 1;
  x.v[t.index_of("c")] = Rat(1, 2);
  return x;
}

/// Two-period binary tree with uniform branch probabilities.
inline ScenarioTree two_period() {
  return ScenarioTree::build(2,
                             {{"root", ""},
                              {"u", "root"},
                              {"d", "root"},
                              {"uu", "u"},
                              {"ud", "u"},
                              {"du", "d"},
                              {"dd", "d"}},
                             {{"u", Rat(1, 2)},
                              {"d", Rat(1, 2)},
                              {"uu", Rat(1, 2)},
                              {"ud", Rat(1, 2)},
                              {"du", Rat(1, 2)},
                              {"dd", Rat(1, 2)}});
}

inline MeasureVector measure(const ScenarioTree& tree, std::vector<Rat> masses) {
  MeasureVector q(tree.leaf_count());
  q.leaf_mass = std::move(masses);
  return q;
}

}  // namespace fixtures
