#pragma once

#include <utility>
#include <vector>

#include "martrep/calculus.hpp"
#include "martrep/linalg.hpp"
#include "martrep/tree.hpp"

namespace martrep {

enum class MeasureMode { equivalent, abs_continuous };

/// The set of martingale measures of a tree market, described as an affine
/// slice of the leaf simplex: one reference measure plus mass-zero directions
/// spanning the solution space of the exact linear constraints.
struct EmmSet {
  int dimension = 0;
  MeasureVector reference;
  std::vector<std::vector<Rat>> affine_basis;  // leaf-indexed, total mass 0
  bool strictly_positive_point_exists = false;
};

namespace detail {

// Vertices (basic feasible solutions) of the local branch polytope at node u:
//   { q >= 0 : sum_c q_c = 1, sum_c q_c dX^j(c) = 0 for all assets j }
// restricted to the children listed in `cols`. Children counts are small
// (branching factor), so subset enumeration is exact and cheap.
inline std::vector<std::vector<Rat>> local_polytope_vertices(
    const ScenarioTree& tree, const std::vector<AdaptedProcess>& assets, int u,
    const std::vector<int>& cols) {
  const int m = static_cast<int>(cols.size());
  const int d = static_cast<int>(assets.size());
  if (m > 20) throw Error(Errc::oversize, "branching factor too large", tree.id(u));

  std::vector<std::vector<Rat>> vertices;
  auto push_unique = [&](std::vector<Rat> v) {
    for (const auto& w : vertices)
      if (w == v) return;
    vertices.push_back(std::move(v));
  };

  for (std::uint32_t mask = 1; mask < (1u << m); ++mask) {
    std::vector<int> support;
    for (int c = 0; c < m; ++c)
      if (mask & (1u << c)) support.push_back(c);
    const int s = static_cast<int>(support.size());
    RatMatrix A(1 + d, s);
    std::vector<Rat> b(1 + d, Rat(0));
    b[0] = 1;
    for (int c = 0; c < s; ++c) {
      const int child = cols[support[c]];
      A.at(0, c) = 1;
      for (int j = 0; j < d; ++j)
        A.at(1 + j, c) = assets[j].v[child] - assets[j].v[u];
    }
    // A vertex is a basic solution: the support columns must be independent.
    RatMatrix Acopy = A;
    if (static_cast<int>(rref(Acopy).size()) != s) continue;
    auto x = solve_linear(A, b);
    if (!x) continue;
    bool nonneg = true;
    for (const Rat& q : *x)
      if (q < 0) {
        nonneg = false;
        break;
      }
    if (!nonneg) continue;
    std::vector<Rat> full(m, Rat(0));
    for (int c = 0; c < s; ++c) full[support[c]] = (*x)[c];
    push_unique(std::move(full));
  }
  return vertices;
}

inline std::vector<Rat> average(const std::vector<std::vector<Rat>>& pts) {
  std::vector<Rat> avg(pts.front().size(), Rat(0));
  for (const auto& p : pts)
    for (std::size_t i = 0; i < p.size(); ++i) avg[i] += p[i];
  const Rat inv = Rat(1) / Rat(static_cast<long long>(pts.size()));
  for (Rat& x : avg) x *= inv;
  return avg;
}

// Global equality system in leaf masses: unit total mass plus, per non-leaf
// node and asset, sum over leaves of pi(leaf) * (X(child above leaf) - X(u)).
inline RatMatrix emm_constraint_matrix(const ScenarioTree& tree,
                                       const std::vector<AdaptedProcess>& assets) {
  const int L = tree.leaf_count();
  std::vector<int> rows_nonleaf;
  for (int u = 0; u < tree.node_count(); ++u)
    if (!tree.is_leaf(u)) rows_nonleaf.push_back(u);
  RatMatrix A(1 + static_cast<int>(rows_nonleaf.size() * assets.size()), L);
  for (int k = 0; k < L; ++k) A.at(0, k) = 1;
  int row = 1;
  for (int u : rows_nonleaf) {
    for (std::size_t j = 0; j < assets.size(); ++j) {
      for (int k = 0; k < L; ++k) {
        const int leaf = tree.leaves()[k];
        if (tree.ancestor_at(leaf, tree.time(u)) != u) continue;
        const int child = tree.ancestor_at(leaf, tree.time(u) + 1);
        A.at(row, k) = assets[j].v[child] - assets[j].v[u];
      }
      ++row;
    }
  }
  return A;
}

}  // namespace detail

/// Solves the exact martingale-measure system and reports its affine hull.
/// The reference point is built node by node: each non-leaf node contributes
/// the average of the vertices of its local branch polytope, which is a
/// relative-interior branch distribution; multiplying down the tree yields a
/// feasible measure that is strictly positive exactly when one exists.
/// Throws Infeasible when no nonnegative solution exists.
inline EmmSet emm_affine_hull(const ScenarioTree& tree,
                              const std::vector<AdaptedProcess>& assets,
                              MeasureMode mode = MeasureMode::equivalent) {
  for (const auto& X : assets)
    if (X.size() != tree.node_count())
      throw Error(Errc::invariant_error, "asset not adapted to this tree");

  // Local analysis. supports[u]: the subtree under u can carry positive mass.
  const int n = tree.node_count();
  std::vector<std::uint8_t> supports(n, 0);
  std::vector<std::vector<Rat>> branch(n);           // chosen branch distribution
  bool positive_everywhere = true;
  for (int u = n - 1; u >= 0; --u) {
    if (tree.is_leaf(u)) {
      supports[u] = 1;
      continue;
    }
    const auto& kids = tree.children(u);
    // Strict positivity needs a relative-interior point over all children
    // (subtrees below get their own checks).
    auto all_vertices = detail::local_polytope_vertices(tree, assets, u, kids);
    std::vector<Rat> full_avg;
    bool local_positive = false;
    if (!all_vertices.empty()) {
      full_avg = detail::average(all_vertices);
      local_positive = true;
      for (const Rat& q : full_avg)
        if (q <= 0) local_positive = false;
    }
    if (!local_positive) positive_everywhere = false;

    // The mass-carrying branch distribution may only feed children whose own
    // subtrees can carry mass.
    std::vector<int> alive;
    std::vector<int> alive_pos;
    for (std::size_t c = 0; c < kids.size(); ++c)
      if (supports[kids[c]]) {
        alive.push_back(kids[c]);
        alive_pos.push_back(static_cast<int>(c));
      }
    const bool all_alive = alive.size() == kids.size();
    if (all_alive && !all_vertices.empty()) {
      branch[u] = std::move(full_avg);
    } else if (!alive.empty()) {
      auto vertices = detail::local_polytope_vertices(tree, assets, u, alive);
      if (!vertices.empty()) {
        auto avg = detail::average(vertices);
        branch[u].assign(kids.size(), Rat(0));
        for (std::size_t c = 0; c < alive.size(); ++c)
          branch[u][alive_pos[c]] = avg[c];
      }
    }
    supports[u] = branch[u].empty() ? 0 : 1;
  }
  if (!supports[0]) throw Error(Errc::infeasible, "no absolutely continuous martingale measure");

  // Reference measure: path products of the chosen branch distributions.
  std::vector<Rat> path(n, Rat(0));
  path[0] = 1;
  for (int u = 0; u < n; ++u) {
    if (tree.is_leaf(u) || path[u] == 0) continue;
    const auto& kids = tree.children(u);
    if (branch[u].empty()) continue;  // unreachable: supports[u] held
    for (std::size_t c = 0; c < kids.size(); ++c) path[kids[c]] = path[u] * branch[u][c];
  }
  EmmSet out;
  out.reference = MeasureVector(tree.leaf_count());
  for (int k = 0; k < tree.leaf_count(); ++k)
    out.reference.leaf_mass[k] = path[tree.leaves()[k]];
  out.reference.validate(tree);
  out.strictly_positive_point_exists = positive_everywhere;
  if (mode == MeasureMode::equivalent && positive_everywhere &&
      !out.reference.strictly_positive())
    throw Error(Errc::invariant_error, "reference point lost positivity");  // bug trap
  for (std::size_t j = 0; j < assets.size(); ++j)
    if (!is_martingale(tree, out.reference, assets[j], /*abs_continuous=*/true).ok)
      throw Error(Errc::invariant_error, "reference point violates a constraint");  // bug trap

  RatMatrix A = detail::emm_constraint_matrix(tree, assets);
  out.affine_basis = kernel_basis(A);
  out.dimension = static_cast<int>(out.affine_basis.size());
  return out;
}

/// Whether the equivalent (sigma-)martingale measure is unique. Decided from
/// the affine hull; throws NoEsmm when no strictly positive measure exists.
inline bool is_unique_esmm(const ScenarioTree& tree,
                           const std::vector<AdaptedProcess>& assets) {
  EmmSet set = emm_affine_hull(tree, assets, MeasureMode::equivalent);
  if (!set.strictly_positive_point_exists)
    throw Error(Errc::no_esmm, "no equivalent martingale measure");
  return set.dimension == 0;
}

/// Whether P is an extreme point of the martingale-measure set. P must be a
/// strictly positive martingale measure for every asset. Decided by the rank
/// of the homogeneous constraint system (mass-zero directions), computed with
/// a fraction-free elimination that is independent of emm_affine_hull's
/// echelon reduction, so the two routes cross-check each other.
inline bool is_extreme(const MeasureVector& P, const ScenarioTree& tree,
                       const std::vector<AdaptedProcess>& assets) {
  P.validate(tree, /*require_positive=*/true);
  for (std::size_t j = 0; j < assets.size(); ++j) {
    if (!is_martingale(tree, P, assets[j]).ok)
      throw Error(Errc::not_martingale_measure,
                  "asset " + std::to_string(j) + " is not a martingale under P");
  }
  RatMatrix A = detail::emm_constraint_matrix(tree, assets);
  return rank_bareiss(A) == tree.leaf_count();
}

/// Splits P into the pair with densities 1 +- c*xi. Requires E_P[xi] = 0,
/// strict positivity of P, and c|xi| < 1/2 everywhere; then both parts are
/// strictly positive probability measures, and P is exactly their midpoint.
inline std::pair<MeasureVector, MeasureVector> split_measure(const ScenarioTree& tree,
                                                             const MeasureVector& P,
                                                             const std::vector<Rat>& xi,
                                                             const Rat& c) {
  if (static_cast<int>(xi.size()) != tree.leaf_count())
    throw Error(Errc::invariant_error, "claim has wrong leaf count");
  if (!P.strictly_positive())
    throw Error(Errc::bad_density, "P must be strictly positive");
  if (leaf_expectation(tree, P, xi) != 0)
    throw Error(Errc::bad_density, "xi must have zero mean under P");
  for (int k = 0; k < tree.leaf_count(); ++k) {
    if (rat_abs(c * xi[k]) >= Rat(1, 2))
      throw Error(Errc::bad_density, "c|xi| must stay below 1/2",
                  tree.id(tree.leaves()[k]));
  }
  MeasureVector plus(tree.leaf_count()), minus(tree.leaf_count());
  for (int k = 0; k < tree.leaf_count(); ++k) {
    plus.leaf_mass[k] = P.leaf_mass[k] * (Rat(1) + c * xi[k]);
    minus.leaf_mass[k] = P.leaf_mass[k] * (Rat(1) - c * xi[k]);
  }
  plus.validate(tree, true);
  minus.validate(tree, true);
  return {plus, minus};
}

/// Verifies that the lambda-mixture of two martingale measures is again a
/// martingale measure (exactly). Inputs are validated; the verdict is for the
/// mixture.
inline bool convexity_probe(const MeasureVector& Q1, const MeasureVector& Q2,
                            const Rat& lambda, const ScenarioTree& tree,
                            const std::vector<AdaptedProcess>& assets) {
  if (lambda < 0 || lambda > 1)
    throw Error(Errc::invariant_error, "lambda must lie in [0, 1]");
  for (const auto& X : assets) {
    if (!is_martingale(tree, Q1, X, /*abs_continuous=*/true).ok ||
        !is_martingale(tree, Q2, X, /*abs_continuous=*/true).ok)
      throw Error(Errc::not_martingale_measure, "input measure fails the martingale test");
  }
  MeasureVector mix(tree.leaf_count());
  for (int k = 0; k < tree.leaf_count(); ++k)
    mix.leaf_mass[k] = lambda * Q1.leaf_mass[k] + (Rat(1) - lambda) * Q2.leaf_mass[k];
  for (const auto& X : assets)
    if (!is_martingale(tree, mix, X, /*abs_continuous=*/true).ok) return false;
  return true;
}

}  // namespace martrep
