#pragma once

#include <optional>
#include <vector>

#include "martrep/tree.hpp"

namespace martrep {

// Exact discrete stochastic calculus on scenario trees. Everything here is a
// pure function of its inputs and works in exact rational arithmetic; no
// tolerances.

/// Conditional expectation E_Q[xi | F_t] of a leaf-indexed claim, returned as
/// a full adapted process: nodes at times <= t carry E[xi | F_time(node)]
/// restricted through time t semantics below; nodes strictly below time t
/// carry the value of their time-t ancestor (the F_t-measurable variable,
/// extended along paths).
///
/// A node whose subtree has zero Q-mass leaves the conditional expectation
/// undefined; with `zero_mass_as_zero` the absolutely-continuous convention
/// (value 0) is applied, otherwise ZeroMassNode is thrown.
inline AdaptedProcess condexp(const ScenarioTree& tree, const MeasureVector& Q,
                              const std::vector<Rat>& xi, int t,
                              bool zero_mass_as_zero = false) {
  if (static_cast<int>(xi.size()) != tree.leaf_count())
    throw Error(Errc::invariant_error, "claim has wrong leaf count");
  Q.validate(tree);
  std::vector<Rat> mass = Q.node_mass(tree);
  std::vector<Rat> wsum(tree.node_count(), Rat(0));
  for (int k = 0; k < tree.leaf_count(); ++k)
    wsum[tree.leaves()[k]] = Q.leaf_mass[k] * xi[k];
  for (int i = tree.node_count() - 1; i > 0; --i) wsum[tree.parent(i)] += wsum[i];

  AdaptedProcess out(tree.node_count());
  for (int i = 0; i < tree.node_count(); ++i) {
    if (tree.time(i) > t) continue;  // filled from the time-t ancestor below
    if (mass[i] == 0) {
      if (!zero_mass_as_zero)
        throw Error(Errc::zero_mass_node, "conditional expectation undefined", tree.id(i));
      out.v[i] = 0;
    } else {
      out.v[i] = wsum[i] / mass[i];
    }
  }
  for (int i = 1; i < tree.node_count(); ++i)
    if (tree.time(i) > t) out.v[i] = out.v[tree.parent(i)];
  return out;
}

/// The martingale Z_t = E_Q[xi | F_t] evaluated at each node's own time.
inline AdaptedProcess density_process(const ScenarioTree& tree, const MeasureVector& Q,
                                      const std::vector<Rat>& xi,
                                      bool zero_mass_as_zero = false) {
  return condexp(tree, Q, xi, tree.horizon(), zero_mass_as_zero);
}

struct MartingaleVerdict {
  bool ok = true;
  int worst_node = -1;       // node with the largest one-step discrepancy
  Rat worst_violation = 0;   // |E_Q[X_{t+1}|node] - X_node|, exact
};

/// Exact one-step martingale test under Q. Requires Q strictly positive
/// unless `abs_continuous` is set, in which case zero-mass families are
/// skipped (conditioning there is vacuous).
inline MartingaleVerdict is_martingale(const ScenarioTree& tree, const MeasureVector& Q,
                                       const AdaptedProcess& X,
                                       bool abs_continuous = false) {
  Q.validate(tree);
  if (!abs_continuous && !Q.strictly_positive())
    throw Error(Errc::zero_mass_node,
                "martingale test needs a strictly positive measure "
                "(or absolutely-continuous mode)");
  std::vector<Rat> mass = Q.node_mass(tree);
  MartingaleVerdict verdict;
  for (int u = 0; u < tree.node_count(); ++u) {
    if (tree.is_leaf(u)) continue;
    if (mass[u] == 0) continue;  // only reachable in abs-continuous mode
    Rat expect(0);
    for (int c : tree.children(u)) expect += mass[c] * X.v[c];
    Rat gap = rat_abs(expect / mass[u] - X.v[u]);
    if (gap != 0) {
      if (verdict.ok || gap > verdict.worst_violation) {
        verdict.worst_node = u;
        verdict.worst_violation = gap;
      }
      verdict.ok = false;
    }
  }
  return verdict;
}

/// No-op admissibility check: on a finite tree every predictable process is
/// integrable against every adapted integrator, so this always passes. It is
/// exposed so call sites state the precondition they rely on.
inline bool is_admissible_integrand(const ScenarioTree& tree, const PredictableProcess& f,
                                    const AdaptedProcess& X) {
  return f.size() == tree.node_count() && X.size() == tree.node_count();
}

/// Discrete stochastic integral (f . X)_t = sum_{s<=t} f_{s-1} (X_s - X_{s-1}),
/// zero at the root.
inline AdaptedProcess stoch_integral(const ScenarioTree& tree, const PredictableProcess& f,
                                     const AdaptedProcess& X) {
  AdaptedProcess out(tree.node_count());
  for (int i = 1; i < tree.node_count(); ++i) {
    int p = tree.parent(i);
    out.v[i] = out.v[p] + f.v[p] * (X.v[i] - X.v[p]);
  }
  return out;
}

inline RealAdapted stoch_integral(const ScenarioTree& tree, const RealPredictable& f,
                                  const RealAdapted& X) {
  RealAdapted out(tree.node_count());
  for (int i = 1; i < tree.node_count(); ++i) {
    int p = tree.parent(i);
    out.v[i] = out.v[p] + f.v[p] * (X.v[i] - X.v[p]);
  }
  return out;
}

/// Pathwise quadratic covariation [X,Y]_t = sum of increment products.
inline AdaptedProcess quad_covar(const ScenarioTree& tree, const AdaptedProcess& X,
                                 const AdaptedProcess& Y) {
  AdaptedProcess out(tree.node_count());
  for (int i = 1; i < tree.node_count(); ++i) {
    int p = tree.parent(i);
    out.v[i] = out.v[p] + (X.v[i] - X.v[p]) * (Y.v[i] - Y.v[p]);
  }
  return out;
}

inline RealAdapted quad_covar(const ScenarioTree& tree, const RealAdapted& X,
                              const RealAdapted& Y) {
  RealAdapted out(tree.node_count());
  for (int i = 1; i < tree.node_count(); ++i) {
    int p = tree.parent(i);
    out.v[i] = out.v[p] + (X.v[i] - X.v[p]) * (Y.v[i] - Y.v[p]);
  }
  return out;
}

/// Stopped process X_{t ^ tau}.
inline AdaptedProcess stop_process(const ScenarioTree& tree, const AdaptedProcess& X,
                                   const StoppingTime& tau) {
  AdaptedProcess out(tree.node_count());
  std::vector<std::uint8_t> frozen(tree.node_count(), 0);
  out.v[0] = X.v[0];
  frozen[0] = tau.flag[0];
  for (int i = 1; i < tree.node_count(); ++i) {
    int p = tree.parent(i);
    if (frozen[p]) {
      out.v[i] = out.v[p];
      frozen[i] = 1;
    } else {
      out.v[i] = X.v[i];
      frozen[i] = tau.flag[i] ? 1 : 0;
    }
  }
  return out;
}

/// First time U reaches level k, with the discrete left-limit convention
/// (U_{t-1} >= k also triggers at t) and a level cap: the stop happens no
/// later than ceil(k) ^ T. At integer levels, the only ones the k = 1, 2,
/// ... ladders use, the ceiling and floor readings of the cap coincide.
inline StoppingTime first_hitting_stop(const ScenarioTree& tree, const AdaptedProcess& U,
                                       const Rat& k) {
  long long cap_ll;
  {
    BigInt f = ceil_rat(k);
    if (f < 0) f = 0;
    if (f > tree.horizon()) f = tree.horizon();
    cap_ll = f.convert_to<long long>();
  }
  const int cap = static_cast<int>(cap_ll);
  StoppingTime tau(tree.node_count());
  for (int i = 0; i < tree.node_count(); ++i) {
    bool hit = U.v[i] >= k;
    int p = tree.parent(i);
    if (p >= 0 && U.v[p] >= k) hit = true;  // left-limit trigger
    if (tree.time(i) >= cap) hit = true;    // saturation
    tau.flag[i] = hit ? 1 : 0;
  }
  return tau;
}

/// E_Q[X_T] over leaves, exact.
inline Rat leaf_expectation(const ScenarioTree& tree, const MeasureVector& Q,
                            const std::vector<Rat>& xi) {
  Rat s(0);
  for (int k = 0; k < tree.leaf_count(); ++k) s += Q.leaf_mass[k] * xi[k];
  return s;
}

/// Terminal values of an adapted process as a leaf-indexed vector.
inline std::vector<Rat> terminal_values(const ScenarioTree& tree, const AdaptedProcess& X) {
  std::vector<Rat> xi(tree.leaf_count());
  for (int k = 0; k < tree.leaf_count(); ++k) xi[k] = X.v[tree.leaves()[k]];
  return xi;
}

/// Value of an adapted process at path time min(t(leaf), tau(path)), i.e. the
/// terminal value of the stopped process, per leaf.
inline std::vector<Rat> stopped_terminal_values(const ScenarioTree& tree,
                                                const AdaptedProcess& X,
                                                const StoppingTime& tau) {
  return terminal_values(tree, stop_process(tree, X, tau));
}

}  // namespace martrep
