#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "martrep/calculus.hpp"
#include "martrep/linalg.hpp"
#include "martrep/tree.hpp"

namespace martrep {

/// Small dense double matrix, row major. Sized for asset counts (d <= 8).
struct DMat {
  int n = 0;
  std::vector<double> a;

  DMat() = default;
  explicit DMat(int size) : n(size), a(static_cast<std::size_t>(size) * size, 0.0) {}
  double& at(int r, int c) { return a[static_cast<std::size_t>(r) * n + c]; }
  double at(int r, int c) const { return a[static_cast<std::size_t>(r) * n + c]; }

  static DMat identity(int size) {
    DMat m(size);
    for (int i = 0; i < size; ++i) m.at(i, i) = 1.0;
    return m;
  }
};

/// Per-cell covariation data: one cell per non-leaf node (the step out of
/// it). Gamma and lambda live on the exact rational track; C is kept on both
/// tracks; B and D are floats from the eigen-selection.
struct CellDiag {
  int node = -1;
  bool active = false;  // the step lies within [0, tau]
  RatMatrix gamma;      // d x d, symmetric PSD, exact
  Rat lambda = 0;       // trace of gamma
  RatMatrix c_exact;    // gamma / lambda (0 when lambda = 0)
  DMat c;
  DMat b;                  // rows orthonormal
  std::vector<double> d;   // eigenvalues, descending, >= 0
  double res_row_orth = 0, res_col_orth = 0, res_diag = 0;
};

struct CellSystem {
  int dim = 0;                  // number of assets
  std::vector<CellDiag> cells;  // indexed by node id; leaves stay inactive
};

namespace detail {

inline Rat rat_det3(const RatMatrix& m, const std::vector<int>& idx) {
  const int k = static_cast<int>(idx.size());
  auto e = [&](int r, int c) { return m.at(idx[r], idx[c]); };
  if (k == 1) return e(0, 0);
  if (k == 2) return e(0, 0) * e(1, 1) - e(0, 1) * e(1, 0);
  return e(0, 0) * (e(1, 1) * e(2, 2) - e(1, 2) * e(2, 1)) -
         e(0, 1) * (e(1, 0) * e(2, 2) - e(1, 2) * e(2, 0)) +
         e(0, 2) * (e(1, 0) * e(2, 1) - e(1, 1) * e(2, 0));
}

}  // namespace detail

/// Deterministic eigendecomposition of a symmetric PSD matrix: C = B^T D B
/// with the rows of B orthonormal eigenvectors. Fixed cyclic Jacobi sweeps,
/// eigenvalues sorted descending, each eigenvector's sign set so its first
/// component above 1e-12 is positive, exact eigenvalue ties broken by
/// descending lexicographic row order. Identical input bits give identical
/// output bits. Eigenvalues in [-1e-12, 0) are clipped to zero; anything
/// below that raises NotPSD.
inline std::pair<DMat, std::vector<double>> eigen_select(const DMat& C) {
  const int n = C.n;
  if (n == 0) return {DMat(0), {}};
  if (n > 8) throw Error(Errc::oversize, "eigen selection supports up to 8 assets");
  double scale = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) scale = std::max(scale, std::fabs(C.at(i, j)));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (std::fabs(C.at(i, j) - C.at(j, i)) > 1e-12 * std::max(1.0, scale))
        throw Error(Errc::not_symmetric, "matrix is not symmetric");

  if (scale == 0.0) return {DMat::identity(n), std::vector<double>(n, 0.0)};

  DMat a = C;
  // symmetrize exactly so the sweeps preserve symmetry bit for bit
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double v = 0.5 * (a.at(i, j) + a.at(j, i));
      a.at(i, j) = v;
      a.at(j, i) = v;
    }
  DMat v = DMat::identity(n);
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a.at(p, q) * a.at(p, q);
    if (off <= 1e-30 * scale * scale) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a.at(p, q);
        if (std::fabs(apq) <= 1e-300) continue;
        const double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a.at(k, p), akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a.at(p, k), aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = v.at(k, p), vkq = v.at(k, q);
          v.at(k, p) = c * vkp - s * vkq;
          v.at(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  struct Row {
    double value;
    std::vector<double> vec;
  };
  std::vector<Row> rows(n);
  for (int k = 0; k < n; ++k) {
    rows[k].value = a.at(k, k);
    rows[k].vec.resize(n);
    for (int j = 0; j < n; ++j) rows[k].vec[j] = v.at(j, k);
    for (int j = 0; j < n; ++j) {
      if (std::fabs(rows[k].vec[j]) > 1e-12) {
        if (rows[k].vec[j] < 0)
          for (double& x : rows[k].vec) x = -x;
        break;
      }
    }
  }
  std::sort(rows.begin(), rows.end(), [](const Row& x, const Row& y) {
    if (x.value != y.value) return x.value > y.value;
    return x.vec > y.vec;  // descending lexicographic on exact ties
  });

  DMat b(n);
  std::vector<double> d(n);
  for (int k = 0; k < n; ++k) {
    double lam = rows[k].value;
    if (lam < 0) {
      if (lam < -1e-12) throw Error(Errc::not_psd, "negative eigenvalue " + std::to_string(lam));
      lam = 0.0;
    }
    d[k] = lam;
    for (int j = 0; j < n; ++j) b.at(k, j) = rows[k].vec[j];
  }
  return {b, d};
}

/// Covariation measures per predictable cell under Q, capped at tau:
/// Gamma_ij(cell u) = sum over children c of Q(subtree c) dM^i(c) dM^j(c),
/// exact; Lambda = trace. PSD per cell is asserted (principal minors for
/// d <= 3, eigenvalue check above).
inline CellSystem gamma_measures(const ScenarioTree& tree,
                                 const std::vector<AdaptedProcess>& assets,
                                 const StoppingTime& tau, const MeasureVector& Q) {
  Q.validate(tree);
  const int d = static_cast<int>(assets.size());
  CellSystem sys;
  sys.dim = d;
  sys.cells.assign(tree.node_count(), CellDiag{});
  std::vector<Rat> mass = Q.node_mass(tree);
  std::vector<int> reached = tau.reached_time(tree);

  for (int u = 0; u < tree.node_count(); ++u) {
    CellDiag& cell = sys.cells[u];
    cell.node = u;
    cell.gamma = RatMatrix(d, d);
    cell.c_exact = RatMatrix(d, d);
    if (tree.is_leaf(u)) continue;
    cell.active = reached[u] == StoppingTime::kNotYet;
    if (!cell.active) continue;
    for (int c : tree.children(u)) {
      for (int i = 0; i < d; ++i) {
        const Rat di = assets[i].v[c] - assets[i].v[u];
        for (int j = i; j < d; ++j) {
          const Rat dj = assets[j].v[c] - assets[j].v[u];
          cell.gamma.at(i, j) += mass[c] * di * dj;
        }
      }
    }
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < i; ++j) cell.gamma.at(i, j) = cell.gamma.at(j, i);
    for (int i = 0; i < d; ++i) cell.lambda += cell.gamma.at(i, i);

    // PSD trap: exact principal minors for small d, numeric otherwise.
    if (d <= 3) {
      for (std::uint32_t m = 1; m < (1u << d); ++m) {
        std::vector<int> idx;
        for (int i = 0; i < d; ++i)
          if (m & (1u << i)) idx.push_back(i);
        if (detail::rat_det3(cell.gamma, idx) < 0)
          throw Error(Errc::not_psd, "covariation cell minor negative", tree.id(u));
      }
    } else {
      DMat g(d);
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) g.at(i, j) = to_double(cell.gamma.at(i, j));
      auto [B, D] = eigen_select(g);
      (void)B;
      for (double lam : D)
        if (lam < -1e-9) throw Error(Errc::not_psd, "covariation cell not PSD", tree.id(u));
    }
  }
  return sys;
}

/// Ratio matrices C = Gamma / Lambda per active cell (0 when Lambda = 0),
/// exact, then handed to the float track. |c_ij| <= 1 and unit trace hold by
/// construction and are validated on the rational side.
inline void rn_matrix(CellSystem& sys, const ScenarioTree& tree) {
  const int d = sys.dim;
  for (CellDiag& cell : sys.cells) {
    cell.c = DMat(d);
    if (cell.active && cell.lambda > 0) {
      Rat trace(0);
      for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) {
          cell.c_exact.at(i, j) = cell.gamma.at(i, j) / cell.lambda;
          if (rat_abs(cell.c_exact.at(i, j)) > 1)
            throw Error(Errc::not_psd, "ratio entry above one", tree.id(cell.node));
          cell.c.at(i, j) = to_double(cell.c_exact.at(i, j));
        }
        trace += cell.c_exact.at(i, i);
      }
      if (trace != 1)
        throw Error(Errc::not_psd, "ratio trace not one", tree.id(cell.node));
    }
  }
}

/// Full per-cell pipeline: Gamma/Lambda, ratio matrix, eigen selection, and
/// the orthogonality/diagonality residuals.
inline CellSystem diagonalize_cells(const ScenarioTree& tree,
                                    const std::vector<AdaptedProcess>& assets,
                                    const StoppingTime& tau, const MeasureVector& Q) {
  CellSystem sys = gamma_measures(tree, assets, tau, Q);
  rn_matrix(sys, tree);
  const int d = sys.dim;
  for (CellDiag& cell : sys.cells) {
    if (!cell.active || cell.lambda == 0) {
      cell.b = DMat::identity(d);
      cell.d.assign(d, 0.0);
      continue;
    }
    auto [b, dd] = eigen_select(cell.c);
    cell.b = std::move(b);
    cell.d = std::move(dd);
    for (int i = 0; i < d; ++i) {
      for (int k = 0; k < d; ++k) {
        double row = 0, col = 0, diag = 0;
        for (int j = 0; j < d; ++j) {
          row += cell.b.at(i, j) * cell.b.at(k, j);
          col += cell.b.at(j, i) * cell.b.at(j, k);
          for (int l = 0; l < d; ++l)
            diag += cell.b.at(i, j) * cell.c.at(j, l) * cell.b.at(k, l);
        }
        const double target = (i == k) ? 1.0 : 0.0;
        cell.res_row_orth = std::max(cell.res_row_orth, std::fabs(row - target));
        cell.res_col_orth = std::max(cell.res_col_orth, std::fabs(col - target));
        if (i == k)
          cell.res_diag = std::max(cell.res_diag, std::fabs(diag - cell.d[i]));
        else
          cell.res_diag = std::max(cell.res_diag, std::fabs(diag));
      }
    }
  }
  return sys;
}

/// Rotated drivers N^k = sum_l (b^{kl} . M^l), float track. Cells beyond tau
/// use the identity rotation, so the N^k stay martingales globally.
inline std::vector<RealAdapted> orthogonalize(const ScenarioTree& tree,
                                              const std::vector<AdaptedProcess>& assets,
                                              const CellSystem& sys) {
  const int d = sys.dim;
  std::vector<RealAdapted> n(d, RealAdapted(tree.node_count()));
  for (int i = 1; i < tree.node_count(); ++i) {
    const int p = tree.parent(i);
    const DMat& b = sys.cells[p].b;
    for (int k = 0; k < d; ++k) {
      double acc = n[k].v[p];
      for (int l = 0; l < d; ++l)
        acc += b.at(k, l) * to_double(Rat(assets[l].v[i] - assets[l].v[p]));
      n[k].v[i] = acc;
    }
  }
  return n;
}

struct OrthReport {
  double lhs = 0;       // E_Q[sum_{i,k} int h^i h^k d[N^i, N^k]]
  double rhs = 0;       // diagonal-only version
  double gap = 0;       // |lhs - rhs|
  double max_cross = 0; // max over i != k of |E_Q[int h^i h^k d[N^i, N^k]]|
};

inline OrthReport verify_orthogonality(const ScenarioTree& tree,
                                       const std::vector<RealAdapted>& n,
                                       const StoppingTime& tau,
                                       const std::vector<double>& q_leaf,
                                       const std::vector<RealPredictable>& h) {
  const int d = static_cast<int>(n.size());
  OrthReport rep;
  std::vector<std::vector<double>> cross(d, std::vector<double>(d, 0.0));
  for (int kk = 0; kk < tree.leaf_count(); ++kk) {
    const int leaf = tree.leaves()[kk];
    const int stop = tau.value_at_leaf(tree, leaf);
    for (int s = 1; s <= std::min(tree.horizon(), stop); ++s) {
      const int prev = tree.ancestor_at(leaf, s - 1);
      const int cur = tree.ancestor_at(leaf, s);
      for (int i = 0; i < d; ++i) {
        const double dni = n[i].v[cur] - n[i].v[prev];
        for (int k = 0; k < d; ++k) {
          const double dnk = n[k].v[cur] - n[k].v[prev];
          cross[i][k] += q_leaf[kk] * h[i].v[prev] * h[k].v[prev] * dni * dnk;
        }
      }
    }
  }
  for (int i = 0; i < d; ++i) {
    for (int k = 0; k < d; ++k) {
      rep.lhs += cross[i][k];
      if (i == k)
        rep.rhs += cross[i][k];
      else
        rep.max_cross = std::max(rep.max_cross, std::fabs(cross[i][k]));
    }
  }
  rep.gap = std::fabs(rep.lhs - rep.rhs);
  return rep;
}

/// Integrand rotation g^k = sum_j f^j b^{kj} per cell (and its inverse via
/// the transposed rotation). Round trips reproduce the input within float
/// precision because the rows and columns of each B are orthonormal.
inline std::vector<RealPredictable> rotate_integrands(const ScenarioTree& tree,
                                                      const std::vector<RealPredictable>& f,
                                                      const CellSystem& sys) {
  const int d = sys.dim;
  std::vector<RealPredictable> g(d, RealPredictable(tree.node_count()));
  for (int u = 0; u < tree.node_count(); ++u) {
    if (tree.is_leaf(u)) continue;
    const DMat& b = sys.cells[u].b;
    for (int k = 0; k < d; ++k) {
      double acc = 0;
      for (int j = 0; j < d; ++j) acc += f[j].v[u] * b.at(k, j);
      g[k].v[u] = acc;
    }
  }
  return g;
}

inline std::vector<RealPredictable> rotate_integrands(const ScenarioTree& tree,
                                                      const std::vector<PredictableProcess>& f,
                                                      const CellSystem& sys) {
  std::vector<RealPredictable> fr;
  fr.reserve(f.size());
  for (const auto& fj : f) {
    RealPredictable r(tree.node_count());
    for (int u = 0; u < tree.node_count(); ++u) r.v[u] = to_double(fj.v[u]);
    fr.push_back(std::move(r));
  }
  return rotate_integrands(tree, fr, sys);
}

inline std::vector<RealPredictable> inverse_rotate_integrands(
    const ScenarioTree& tree, const std::vector<RealPredictable>& g,
    const CellSystem& sys) {
  const int d = sys.dim;
  std::vector<RealPredictable> f(d, RealPredictable(tree.node_count()));
  for (int u = 0; u < tree.node_count(); ++u) {
    if (tree.is_leaf(u)) continue;
    const DMat& b = sys.cells[u].b;
    for (int j = 0; j < d; ++j) {
      double acc = 0;
      for (int k = 0; k < d; ++k) acc += g[k].v[u] * b.at(k, j);
      f[j].v[u] = acc;
    }
  }
  return f;
}

}  // namespace martrep
