#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "martrep/calculus.hpp"
#include "martrep/diagonalization.hpp"
#include "martrep/linalg.hpp"
#include "martrep/tree.hpp"

namespace martrep {

// ---------------------------------------------------------------------------
// One-stage representation and the fund construction
// ---------------------------------------------------------------------------

/// Result of solving dZ = sum_j g^j dM^j node by node. When the per-node
/// system is inconsistent the witness node and the exact unmatched increment
/// direction (the least-squares residual over that node's children) are
/// reported instead.
struct OneStageOutcome {
  bool ok = false;
  std::vector<PredictableProcess> integrands;
  int witness_node = -1;
  std::vector<Rat> unmatched;  // residual per child of the witness node
};

/// Solves, per non-leaf node, sum_j g^j(u) dM^j(child) = dZ(child) over the
/// children. Under-determined nodes get the minimum-Euclidean-norm solution
/// (fixed pivoting, so results are deterministic). Z and the assets must be
/// martingales under Q.
inline OneStageOutcome represent_one_stage(const ScenarioTree& tree,
                                           const AdaptedProcess& Z,
                                           const std::vector<AdaptedProcess>& assets,
                                           const MeasureVector& Q) {
  if (!is_martingale(tree, Q, Z, /*abs_continuous=*/true).ok)
    throw Error(Errc::not_martingale_measure, "target is not a martingale under Q");
  for (std::size_t j = 0; j < assets.size(); ++j)
    if (!is_martingale(tree, Q, assets[j], /*abs_continuous=*/true).ok)
      throw Error(Errc::not_martingale_measure,
                  "asset " + std::to_string(j) + " is not a martingale under Q");

  const int d = static_cast<int>(assets.size());
  OneStageOutcome out;
  out.integrands.assign(d, PredictableProcess(tree.node_count()));
  for (int u = 0; u < tree.node_count(); ++u) {
    if (tree.is_leaf(u)) continue;
    const auto& kids = tree.children(u);
    RatMatrix A(static_cast<int>(kids.size()), d);
    std::vector<Rat> b(kids.size());
    for (std::size_t r = 0; r < kids.size(); ++r) {
      for (int j = 0; j < d; ++j) A.at(static_cast<int>(r), j) = assets[j].v[kids[r]] - assets[j].v[u];
      b[r] = Z.v[kids[r]] - Z.v[u];
    }
    auto g = min_norm_solve(A, b);
    if (!g) {
      out.ok = false;
      out.witness_node = u;
      out.unmatched = least_squares_residual(A, b);
      return out;
    }
    for (int j = 0; j < d; ++j) out.integrands[j].v[u] = (*g)[j];
  }
  out.ok = true;
  return out;
}

/// Fund construction: splits integrands g^j into a bounded part h^j = g^j /
/// scale with scale = 1 + sum_j |g^j|, and the fund V = sum_j (h^j . M^j).
/// The identity (scale . V) = sum_j (g^j . M^j) holds exactly.
struct Fundification {
  PredictableProcess scale;                     // >= 1 everywhere
  std::vector<PredictableProcess> bounded;      // |h^j| <= 1
  AdaptedProcess fund;                          // V
};

inline Fundification fundify(const ScenarioTree& tree,
                             const std::vector<PredictableProcess>& g,
                             const std::vector<AdaptedProcess>& assets) {
  const int d = static_cast<int>(assets.size());
  Fundification out;
  out.scale = PredictableProcess(tree.node_count(), Rat(1));
  out.bounded.assign(d, PredictableProcess(tree.node_count()));
  for (int u = 0; u < tree.node_count(); ++u) {
    if (tree.is_leaf(u)) continue;
    Rat s(1);
    for (int j = 0; j < d; ++j) s += rat_abs(g[j].v[u]);
    out.scale.v[u] = s;
    for (int j = 0; j < d; ++j) out.bounded[j].v[u] = g[j].v[u] / s;
  }
  out.fund = AdaptedProcess(tree.node_count());
  for (int j = 0; j < d; ++j) {
    AdaptedProcess part = stoch_integral(tree, out.bounded[j], assets[j]);
    for (int i = 0; i < tree.node_count(); ++i) out.fund.v[i] += part.v[i];
  }
  // integrability of the scale against the fund: automatic here, stated to
  // mirror the precondition the identity below rides on
  if (!is_admissible_integrand(tree, out.scale, out.fund))
    throw Error(Errc::invariant_error, "scale not admissible against the fund");
  // exact cross-check: (scale . V) reproduces sum_j (g^j . M^j)
  AdaptedProcess direct(tree.node_count());
  for (int j = 0; j < d; ++j) {
    AdaptedProcess part = stoch_integral(tree, g[j], assets[j]);
    for (int i = 0; i < tree.node_count(); ++i) direct.v[i] += part.v[i];
  }
  AdaptedProcess rescaled = stoch_integral(tree, out.scale, out.fund);
  if (rescaled.v != direct.v)
    throw Error(Errc::invariant_error, "fund identity failed");  // bug trap
  return out;
}

/// Two-stage representation: target = initial_value + (outer . fund) with
/// fund = sum_j (fund_integrand^j . M^j), all exact.
struct RepresentationResult {
  Rat initial_value;
  std::vector<PredictableProcess> fund_integrands;
  AdaptedProcess fund;
  PredictableProcess outer_integrand;
  AdaptedProcess reconstructed;
};

struct ClaimMembership {
  bool representable = false;
  int witness_node = -1;
  std::vector<Rat> unmatched;
  std::vector<PredictableProcess> one_stage;  // direct integrands, when ok
  std::optional<RepresentationResult> result;
};

/// Whether a terminal claim lies in the two-stage representable cone of the
/// assets under P: forms the martingale Z_t = E_P[xi | F_t], solves the
/// one-stage system and funds the integrands. Assets must be P-martingales.
inline ClaimMembership claim_representable(const ScenarioTree& tree,
                                           const std::vector<Rat>& xi,
                                           const std::vector<AdaptedProcess>& assets,
                                           const MeasureVector& P) {
  AdaptedProcess Z = density_process(tree, P, xi, /*zero_mass_as_zero=*/true);
  OneStageOutcome one = represent_one_stage(tree, Z, assets, P);
  ClaimMembership out;
  if (!one.ok) {
    out.witness_node = one.witness_node;
    out.unmatched = std::move(one.unmatched);
    return out;
  }
  out.representable = true;
  out.one_stage = one.integrands;
  Fundification f = fundify(tree, one.integrands, assets);
  RepresentationResult rep;
  rep.initial_value = Z.v[0];
  rep.fund_integrands = std::move(f.bounded);
  rep.fund = std::move(f.fund);
  rep.outer_integrand = std::move(f.scale);
  AdaptedProcess gain = stoch_integral(tree, rep.outer_integrand, rep.fund);
  rep.reconstructed = AdaptedProcess(tree.node_count());
  for (int i = 0; i < tree.node_count(); ++i)
    rep.reconstructed.v[i] = rep.initial_value + gain.v[i];
  if (rep.reconstructed.v != Z.v)
    throw Error(Errc::invariant_error, "two-stage replay failed");  // bug trap
  out.result = std::move(rep);
  return out;
}

// ---------------------------------------------------------------------------
// Gluing representations across a stopping-time ladder
// ---------------------------------------------------------------------------

/// One piece: the representation of the target stopped at the k-th rung,
/// outer integrand f^k against the piece fund sum_j (phi^{k,j} . M^j), with
/// `bound` >= |phi^{k,j}| everywhere.
struct GluePiece {
  PredictableProcess outer;
  std::vector<PredictableProcess> fund_integrands;
  Rat bound;
};

struct GlueResult {
  PredictableProcess outer;                 // spliced f
  std::vector<PredictableProcess> eta;      // spliced fund integrands, |eta^j| <= 1
  AdaptedProcess fund;                      // Y = sum_j (eta^j . M^j)
  AdaptedProcess replay;                    // Z_0 + (f . Y), equals Z pathwise
};

/// Splices per-rung representations into one: on the k-th window the fund
/// integrands are phi^{k,j} / bound_k and the outer integrand is bound_k *
/// f^k, so the products cancel exactly and the spliced pair replays the
/// target across the whole ladder.
inline GlueResult glue_representations(const ScenarioTree& tree,
                                       const std::vector<GluePiece>& pieces,
                                       const std::vector<StoppingTime>& ladder,
                                       const AdaptedProcess& Z,
                                       const std::vector<AdaptedProcess>& assets) {
  const int d = static_cast<int>(assets.size());
  if (ladder.size() < 2 || pieces.size() + 1 != ladder.size())
    throw Error(Errc::bad_ladder, "need stopping times sigma_0..sigma_K with one piece per window");
  // sigma_0 == 0, monotone, sigma_K == horizon, pathwise.
  std::vector<std::vector<int>> stop_at(ladder.size());
  for (std::size_t k = 0; k < ladder.size(); ++k) {
    stop_at[k].resize(tree.leaf_count());
    for (int l = 0; l < tree.leaf_count(); ++l)
      stop_at[k][l] = ladder[k].value_at_leaf(tree, tree.leaves()[l]);
  }
  for (int l = 0; l < tree.leaf_count(); ++l) {
    if (stop_at[0][l] != 0)
      throw Error(Errc::bad_ladder, "sigma_0 must vanish identically");
    if (stop_at.back()[l] != tree.horizon())
      throw Error(Errc::bad_ladder, "sigma_K must saturate at the horizon");
    for (std::size_t k = 1; k < ladder.size(); ++k)
      if (stop_at[k][l] < stop_at[k - 1][l])
        throw Error(Errc::bad_ladder, "stopping times are not monotone");
  }
  // validate the pieces
  for (std::size_t k = 0; k < pieces.size(); ++k) {
    const GluePiece& piece = pieces[k];
    if (static_cast<int>(piece.fund_integrands.size()) != d)
      throw Error(Errc::mismatched_piece, "piece " + std::to_string(k + 1) + " has wrong width");
    if (piece.bound <= 0)
      throw Error(Errc::mismatched_piece, "piece bound must be positive");
    for (int u = 0; u < tree.node_count(); ++u) {
      if (tree.is_leaf(u)) continue;
      for (int j = 0; j < d; ++j)
        if (rat_abs(piece.fund_integrands[j].v[u]) > piece.bound)
          throw Error(Errc::mismatched_piece,
                      "piece " + std::to_string(k + 1) + " exceeds its bound", tree.id(u));
    }
    AdaptedProcess y(tree.node_count());
    for (int j = 0; j < d; ++j) {
      AdaptedProcess part = stoch_integral(tree, piece.fund_integrands[j], assets[j]);
      for (int i = 0; i < tree.node_count(); ++i) y.v[i] += part.v[i];
    }
    AdaptedProcess x = stoch_integral(tree, piece.outer, y);
    AdaptedProcess stopped = stop_process(tree, Z, ladder[k + 1]);
    for (int i = 0; i < tree.node_count(); ++i)
      if (Z.v[0] + x.v[i] != stopped.v[i])
        throw Error(Errc::mismatched_piece,
                    "piece " + std::to_string(k + 1) + " does not replay its window",
                    tree.id(i));
  }

  // window index per non-leaf node: first k with sigma_k still running there
  std::vector<std::vector<int>> reached(ladder.size());
  for (std::size_t k = 0; k < ladder.size(); ++k) reached[k] = ladder[k].reached_time(tree);

  GlueResult out;
  out.outer = PredictableProcess(tree.node_count());
  out.eta.assign(d, PredictableProcess(tree.node_count()));
  for (int u = 0; u < tree.node_count(); ++u) {
    if (tree.is_leaf(u)) continue;
    int window = -1;
    for (std::size_t k = 1; k < ladder.size(); ++k) {
      if (reached[k][u] == StoppingTime::kNotYet) {
        window = static_cast<int>(k);
        break;
      }
    }
    if (window < 0) continue;  // step beyond sigma_K: contributes nothing
    const GluePiece& piece = pieces[window - 1];
    out.outer.v[u] = piece.bound * piece.outer.v[u];
    for (int j = 0; j < d; ++j) out.eta[j].v[u] = piece.fund_integrands[j].v[u] / piece.bound;
  }
  out.fund = AdaptedProcess(tree.node_count());
  for (int j = 0; j < d; ++j) {
    AdaptedProcess part = stoch_integral(tree, out.eta[j], assets[j]);
    for (int i = 0; i < tree.node_count(); ++i) out.fund.v[i] += part.v[i];
  }
  AdaptedProcess gain = stoch_integral(tree, out.outer, out.fund);
  out.replay = AdaptedProcess(tree.node_count());
  AdaptedProcess target = stop_process(tree, Z, ladder.back());
  for (int i = 0; i < tree.node_count(); ++i) {
    out.replay.v[i] = Z.v[0] + gain.v[i];
    if (out.replay.v[i] != target.v[i])
      throw Error(Errc::mismatched_piece, "glued replay failed", tree.id(i));  // bug trap
  }
  return out;
}

// ---------------------------------------------------------------------------
// Subsequence selection and truncation
// ---------------------------------------------------------------------------

struct SubsequenceSelection {
  std::vector<int> indices;          // positions into the candidate list, strictly increasing
  AdaptedProcess dominating;         // U = |Z| + sum_j |Y^j - Z|
  std::vector<StoppingTime> sigma;   // level stops k = 1, 2, ... until saturation
  std::vector<Rat> sup_bound;        // E_P[sup_{s <= sigma_k} U_s], exact (finite)
};

/// Picks a subsequence with E_P|Z^{n_j}_{t_j} - Z_{t_j}| <= 2^{-j} at grid
/// times t_j = min(j, T), builds the dominating process and its level stops.
inline SubsequenceSelection select_subsequence(const ScenarioTree& tree,
                                               const MeasureVector& P,
                                               const std::vector<AdaptedProcess>& candidates,
                                               const AdaptedProcess& Z, int count) {
  if (count < 1) throw Error(Errc::bad_params, "need at least one subsequence term");
  std::vector<Rat> mass = P.node_mass(tree);
  auto err_at = [&](const AdaptedProcess& y, int t) {
    Rat e(0);
    for (int i = 0; i < tree.node_count(); ++i)
      if (tree.time(i) == t) e += mass[i] * rat_abs(y.v[i] - Z.v[i]);
    return e;
  };
  SubsequenceSelection out;
  int prev = -1;
  for (int j = 1; j <= count; ++j) {
    const int t = std::min(j, tree.horizon());
    const Rat budget(BigInt(1), BigInt(1) << j);
    int chosen = -1;
    for (int n = prev + 1; n < static_cast<int>(candidates.size()); ++n) {
      if (err_at(candidates[n], t) <= budget) {
        chosen = n;
        break;
      }
    }
    if (chosen < 0)
      throw Error(Errc::no_subsequence,
                  "cannot satisfy the 2^-j error schedule at term " + std::to_string(j));
    out.indices.push_back(chosen);
    prev = chosen;
  }

  out.dominating = AdaptedProcess(tree.node_count());
  for (int i = 0; i < tree.node_count(); ++i) {
    Rat u = rat_abs(Z.v[i]);
    for (int idx : out.indices) u += rat_abs(candidates[idx].v[i] - Z.v[i]);
    out.dominating.v[i] = u;
  }
  Rat max_u(0);
  for (const Rat& u : out.dominating.v) max_u = std::max(max_u, u);
  const long long k_max =
      std::max<long long>(tree.horizon(), ceil_rat(max_u).convert_to<long long>() + 1);
  for (long long k = 1; k <= k_max; ++k) {
    StoppingTime sk = first_hitting_stop(tree, out.dominating, Rat(k));
    // E_P[sup up to sigma_k] is finite by construction; recorded for traces.
    Rat bound(0);
    for (int l = 0; l < tree.leaf_count(); ++l) {
      const int leaf = tree.leaves()[l];
      const int stop = sk.value_at_leaf(tree, leaf);
      Rat sup(0);
      for (int t = 0; t <= stop; ++t)
        sup = std::max(sup, out.dominating.v[tree.ancestor_at(leaf, t)]);
      bound += P.leaf_mass[l] * sup;
    }
    out.sup_bound.push_back(bound);
    bool saturated = true;
    for (int l = 0; l < tree.leaf_count() && saturated; ++l)
      saturated = sk.value_at_leaf(tree, tree.leaves()[l]) == tree.horizon();
    out.sigma.push_back(std::move(sk));
    if (saturated && k >= tree.horizon()) break;
  }
  return out;
}

struct TruncationResult {
  long long level = 1;           // smallest k meeting the budget
  PredictableProcess truncated;  // f * 1_{|f| <= k}
  double tail = 0;               // E_P[sqrt(int |f|^2 1_{|f|>k} d[X,X])] at the level
};

/// Smallest integer truncation level k >= 1 whose removed tail satisfies
/// E_P[sqrt(int_0^tau |f|^2 1_{|f|>k} d[X,X])] <= eps. Exact comparison when
/// eps = 0; float evaluation of the square-root expectation otherwise. Some
/// k always works on a finite tree (k >= max |f| empties the tail).
inline TruncationResult truncate_integrand(const ScenarioTree& tree, const MeasureVector& P,
                                           const PredictableProcess& f, const AdaptedProcess& X,
                                           const StoppingTime& tau, const Rat& eps) {
  if (eps < 0) throw Error(Errc::bad_params, "negative tolerance");
  Rat max_abs(0);
  for (int u = 0; u < tree.node_count(); ++u)
    if (!tree.is_leaf(u)) max_abs = std::max(max_abs, rat_abs(f.v[u]));
  const long long k_max =
      std::max<long long>(1, ceil_rat(max_abs).convert_to<long long>());

  for (long long k = 1;; ++k) {
    std::vector<Rat> tail_qv(tree.leaf_count(), Rat(0));
    for (int l = 0; l < tree.leaf_count(); ++l) {
      const int leaf = tree.leaves()[l];
      const int stop = tau.value_at_leaf(tree, leaf);
      Rat acc(0);
      for (int s = 1; s <= std::min(stop, tree.horizon()); ++s) {
        const int prev = tree.ancestor_at(leaf, s - 1);
        const int cur = tree.ancestor_at(leaf, s);
        if (rat_abs(f.v[prev]) > k) {
          const Rat dx = X.v[cur] - X.v[prev];
          acc += f.v[prev] * f.v[prev] * dx * dx;
        }
      }
      tail_qv[l] = acc;
    }
    bool ok;
    double tail = 0;
    if (eps == 0) {
      ok = true;
      for (const Rat& v : tail_qv)
        if (v != 0) ok = false;
    } else {
      for (int l = 0; l < tree.leaf_count(); ++l)
        tail += to_double(P.leaf_mass[l]) * std::sqrt(to_double(tail_qv[l]));
      ok = tail <= to_double(eps);
    }
    if (ok || k >= k_max) {
      TruncationResult out;
      out.level = k;
      out.tail = tail;
      out.truncated = PredictableProcess(tree.node_count());
      for (int u = 0; u < tree.node_count(); ++u)
        if (!tree.is_leaf(u) && rat_abs(f.v[u]) <= k) out.truncated.v[u] = f.v[u];
      if (!ok)
        throw Error(Errc::invariant_error, "tail did not vanish at max |f|");  // bug trap
      return out;
    }
  }
}

// ---------------------------------------------------------------------------
// Change of measure with an exponential density
// ---------------------------------------------------------------------------

struct ExpMeasure {
  std::vector<double> leaf_weight;  // normalized, strictly positive
  MeasureVector rational;           // best rational approximants, exact unit mass
  double normalizer = 1.0;          // E_P[exp(-eta)]
};

namespace detail {

/// Best rational approximation of x in [0,1] with denominator <= max_den
/// (continued fraction convergent plus the final semiconvergent). Positive
/// inputs below the grid resolution round up to 1/max_den, never to zero.
inline Rat rat_from_double(double x, long long max_den) {
  if (x <= 0) return Rat(0);
  if (x >= 1) return Rat(1);
  if (x < 1.0 / static_cast<double>(max_den)) return Rat(1, max_den);
  long long p0 = 0, q0 = 1, p1 = 1, q1 = 0;
  double frac = x;
  for (int iter = 0; iter < 64; ++iter) {
    const double a_floor = std::floor(frac);
    if (a_floor > 4.0e15) break;  // next convergent far past max_den; keep p1/q1
    long long a = static_cast<long long>(a_floor);
    long long p2 = a * p1 + p0, q2 = a * q1 + q0;
    if (q2 > max_den || q2 < 0) {
      // final semiconvergent
      const long long room = (max_den - q0) / std::max<long long>(q1, 1);
      if (room > 0 && 2 * room >= a) {
        p2 = room * p1 + p0;
        q2 = room * q1 + q0;
        return Rat(p2, q2);
      }
      break;
    }
    p0 = p1;
    q0 = q1;
    p1 = p2;
    q1 = q2;
    const double rem = frac - a_floor;
    if (rem < 1e-18) break;
    frac = 1.0 / rem;
  }
  return Rat(p1, std::max<long long>(q1, 1));
}

}  // namespace detail

/// Q(leaf) = P(leaf) exp(-eta(leaf)) normalized. This is the one float-valued
/// measure in the system; a rational approximant with exact unit mass rides
/// along for downstream exact arithmetic at tolerance.
inline ExpMeasure exp_measure(const ScenarioTree& tree, const std::vector<double>& eta,
                              const MeasureVector& P) {
  if (static_cast<int>(eta.size()) != tree.leaf_count())
    throw Error(Errc::invariant_error, "eta has wrong leaf count");
  for (double e : eta)
    if (!(e >= 0) || !std::isfinite(e))
      throw Error(Errc::invariant_error, "eta must be nonnegative and finite");
  ExpMeasure out;
  out.leaf_weight.resize(tree.leaf_count());
  double total = 0;
  for (int l = 0; l < tree.leaf_count(); ++l) {
    out.leaf_weight[l] = to_double(P.leaf_mass[l]) * std::exp(-eta[l]);
    total += out.leaf_weight[l];
  }
  out.normalizer = total;
  for (double& w : out.leaf_weight) w /= total;

  out.rational = MeasureVector(tree.leaf_count());
  Rat sum(0);
  int largest = 0;
  for (int l = 0; l < tree.leaf_count(); ++l) {
    out.rational.leaf_mass[l] = detail::rat_from_double(out.leaf_weight[l], 1'000'000'000'000LL);
    sum += out.rational.leaf_mass[l];
    if (out.leaf_weight[l] > out.leaf_weight[largest]) largest = l;
  }
  out.rational.leaf_mass[largest] += Rat(1) - sum;  // restore exact unit mass
  out.rational.validate(tree, /*require_positive=*/true);
  return out;
}

// ---------------------------------------------------------------------------
// Reconstruction pipeline
// ---------------------------------------------------------------------------

/// A bounded-integrand certificate: U = sum_j (integrand^j . M^j).
struct CbApproximant {
  std::vector<PredictableProcess> integrands;
};

struct ReconstructOptions {
  double float_tol = 1e-9;
  int stable_run = 3;  // consecutive equal tail values that define the limit
};

struct PipelineTrace {
  std::vector<double> schedule_error;  // E_P[sqrt([U^n - Z]_tau)] per n
  std::vector<double> zeta, eta;       // per leaf
  double alpha = 0;                    // E_Q[eta^2]
  ExpMeasure q;
  CellSystem cells;
  std::vector<RealAdapted> rotated_assets;                      // N^k
  std::vector<std::vector<RealPredictable>> rotated_integrands; // per n, per k
  std::vector<RealPredictable> rotated_limits;                  // g^k
  std::vector<PredictableProcess> limit_integrands;             // exact, per asset
  double pair_bound_slack = 0;   // max of E_Q[[U^n - U^m]] - 4^{-m} alpha over n >= m
  double float_qv_residual = 0;  // max leaf value of [Y_rot - Z]_tau
};

struct ReconstructResult {
  Rat initial_value;
  PredictableProcess h;                        // 1 + sum_j |limit^j|, >= 1
  std::vector<PredictableProcess> directions;  // limit^j / h, |.| <= 1
  AdaptedProcess fund;                         // X = sum_j (direction^j . M^j)
  AdaptedProcess replay;                       // Z_0 + (h . X), equals Z exactly
  PipelineTrace trace;
};

/// Runs the full reconstruction: schedule validation, the exponential change
/// of measure built from the error ladder, covariation diagonalization under
/// the new measure, integrand rotation, cell-wise limits (the eventual value
/// once the tail is constant; anything else is NonConvergent), and the final
/// normalized representation. Estimates run on the float track under Q; the
/// returned representation and its replay are exact rationals under P.
inline ReconstructResult reconstruct(const ScenarioTree& tree, const MeasureVector& P,
                                     const AdaptedProcess& Z,
                                     const std::vector<CbApproximant>& approximants,
                                     const StoppingTime& tau,
                                     const std::vector<AdaptedProcess>& assets,
                                     const ReconstructOptions& opt = {}) {
  const int d = static_cast<int>(assets.size());
  const int n_levels = static_cast<int>(approximants.size());
  if (n_levels == 0) throw Error(Errc::bad_params, "need at least one approximant");
  P.validate(tree, /*require_positive=*/true);
  for (const auto& m : assets)
    if (!is_martingale(tree, P, m).ok)
      throw Error(Errc::not_martingale_measure, "assets must be martingales under P");
  if (!is_martingale(tree, P, Z).ok)
    throw Error(Errc::not_martingale_measure, "target must be a martingale under P");
  if (stop_process(tree, Z, tau).v != Z.v)
    throw Error(Errc::invariant_error, "target must already be stopped at tau");

  std::vector<int> reached = tau.reached_time(tree);
  auto cell_active = [&](int u) { return reached[u] == StoppingTime::kNotYet; };

  // approximants, integrands zeroed beyond tau (harmless normalization)
  std::vector<std::vector<PredictableProcess>> fs(n_levels);
  std::vector<AdaptedProcess> u_val(n_levels);
  for (int n = 0; n < n_levels; ++n) {
    if (static_cast<int>(approximants[n].integrands.size()) != d)
      throw Error(Errc::bad_params, "approximant " + std::to_string(n + 1) + " has wrong width");
    fs[n].assign(d, PredictableProcess(tree.node_count()));
    for (int j = 0; j < d; ++j)
      for (int u = 0; u < tree.node_count(); ++u)
        if (!tree.is_leaf(u) && cell_active(u)) fs[n][j].v[u] = approximants[n].integrands[j].v[u];
    u_val[n] = AdaptedProcess(tree.node_count());
    for (int j = 0; j < d; ++j) {
      AdaptedProcess part = stoch_integral(tree, fs[n][j], assets[j]);
      for (int i = 0; i < tree.node_count(); ++i) u_val[n].v[i] += part.v[i];
    }
  }

  ReconstructResult res;
  PipelineTrace& trace = res.trace;

  // per-leaf stopped quadratic variations (exact), then the error schedule
  auto leaf_qv = [&](const AdaptedProcess& a, const AdaptedProcess& b) {
    AdaptedProcess diff(tree.node_count());
    for (int i = 0; i < tree.node_count(); ++i) diff.v[i] = a.v[i] - b.v[i];
    AdaptedProcess qv = quad_covar(tree, diff, diff);
    return terminal_values(tree, qv);  // integrands vanish beyond tau, so [.]_T = [.]_tau
  };
  AdaptedProcess z_centered(tree.node_count());
  for (int i = 0; i < tree.node_count(); ++i) z_centered.v[i] = Z.v[i] - Z.v[0];

  std::vector<std::vector<Rat>> qv_err(n_levels);
  for (int n = 0; n < n_levels; ++n) {
    qv_err[n] = leaf_qv(u_val[n], z_centered);
    double err = 0;
    for (int l = 0; l < tree.leaf_count(); ++l)
      err += to_double(P.leaf_mass[l]) * std::sqrt(to_double(qv_err[n][l]));
    trace.schedule_error.push_back(err);
    if (err > std::pow(4.0, -(n + 1)) * (1.0 + 1e-9))
      throw Error(Errc::schedule_violation,
                  "approximant " + std::to_string(n + 1) + " misses its 4^-n budget");
  }

  // zeta, eta, and the exponential change of measure
  trace.zeta.assign(tree.leaf_count(), 0.0);
  trace.eta.assign(tree.leaf_count(), 0.0);
  std::vector<Rat> qv_z = leaf_qv(Z, AdaptedProcess(tree.node_count()));
  std::vector<std::vector<Rat>> qv_m(d);
  {
    AdaptedProcess zero(tree.node_count());
    for (int j = 0; j < d; ++j) {
      AdaptedProcess stopped = stop_process(tree, assets[j], tau);
      qv_m[j] = leaf_qv(stopped, zero);
    }
  }
  for (int l = 0; l < tree.leaf_count(); ++l) {
    for (int n = 0; n < n_levels; ++n)
      trace.zeta[l] += std::pow(2.0, n + 1) * std::sqrt(to_double(qv_err[n][l]));
    trace.eta[l] = trace.zeta[l] + std::sqrt(to_double(qv_z[l]));
    for (int j = 0; j < d; ++j) trace.eta[l] += std::sqrt(to_double(qv_m[j][l]));
  }
  trace.q = exp_measure(tree, trace.eta, P);
  trace.alpha = 0;
  for (int l = 0; l < tree.leaf_count(); ++l)
    trace.alpha += trace.q.leaf_weight[l] * trace.eta[l] * trace.eta[l];

  // pairwise bound E_Q[[U^n - U^m]_tau] <= 4^-m alpha for n >= m
  trace.pair_bound_slack = -std::numeric_limits<double>::infinity();
  for (int m = 0; m < n_levels; ++m) {
    for (int n = m; n < n_levels; ++n) {
      std::vector<Rat> qv_nm = leaf_qv(u_val[n], u_val[m]);
      double lhs = 0;
      for (int l = 0; l < tree.leaf_count(); ++l)
        lhs += trace.q.leaf_weight[l] * to_double(qv_nm[l]);
      trace.pair_bound_slack =
          std::max(trace.pair_bound_slack, lhs - std::pow(4.0, -(m + 1)) * trace.alpha);
    }
  }

  // diagonalization under the rational track of Q
  trace.cells = diagonalize_cells(tree, assets, tau, trace.q.rational);
  trace.rotated_assets = orthogonalize(tree, assets, trace.cells);
  trace.rotated_integrands.reserve(n_levels);
  for (int n = 0; n < n_levels; ++n)
    trace.rotated_integrands.push_back(rotate_integrands(tree, fs[n], trace.cells));

  // cell-wise limits: the tail of the integrand sequence must be constant
  // (exactly, on the rational track) on every cell that matters
  const int run = std::min(opt.stable_run, n_levels);
  trace.limit_integrands.assign(d, PredictableProcess(tree.node_count()));
  for (int u = 0; u < tree.node_count(); ++u) {
    if (tree.is_leaf(u)) continue;
    for (int j = 0; j < d; ++j)
      trace.limit_integrands[j].v[u] = fs[n_levels - 1][j].v[u];
    if (!cell_active(u) || trace.cells.cells[u].lambda == 0) continue;
    for (int n = n_levels - run; n < n_levels; ++n)
      for (int j = 0; j < d; ++j)
        if (fs[n][j].v[u] != fs[n_levels - 1][j].v[u])
          throw Error(Errc::non_convergent,
                      "integrand sequence has not stabilized on cell " + tree.id(u) +
                          " (need " + std::to_string(run) + " constant tail values)",
                      tree.id(u));
  }
  trace.rotated_limits = rotate_integrands(tree, trace.limit_integrands, trace.cells);

  // exact track: normalized two-stage representation in asset coordinates
  res.initial_value = Z.v[0];
  res.h = PredictableProcess(tree.node_count(), Rat(1));
  res.directions.assign(d, PredictableProcess(tree.node_count()));
  for (int u = 0; u < tree.node_count(); ++u) {
    if (tree.is_leaf(u)) continue;
    Rat s(1);
    for (int j = 0; j < d; ++j) s += rat_abs(trace.limit_integrands[j].v[u]);
    res.h.v[u] = s;
    for (int j = 0; j < d; ++j) res.directions[j].v[u] = trace.limit_integrands[j].v[u] / s;
  }
  res.fund = AdaptedProcess(tree.node_count());
  for (int j = 0; j < d; ++j) {
    AdaptedProcess part = stoch_integral(tree, res.directions[j], assets[j]);
    for (int i = 0; i < tree.node_count(); ++i) res.fund.v[i] += part.v[i];
  }
  if (!is_admissible_integrand(tree, res.h, res.fund))
    throw Error(Errc::invariant_error, "normalizer not admissible against the fund");
  AdaptedProcess gain = stoch_integral(tree, res.h, res.fund);
  res.replay = AdaptedProcess(tree.node_count());
  for (int i = 0; i < tree.node_count(); ++i) {
    res.replay.v[i] = res.initial_value + gain.v[i];
    if (res.replay.v[i] != Z.v[i])
      throw Error(Errc::non_convergent, "stabilized limit does not replay the target",
                  tree.id(i));
  }

  // float track under Q: rotated representation and its vanishing distance
  {
    RealPredictable h_rot(tree.node_count(), 1.0);
    std::vector<RealPredictable> phi(d, RealPredictable(tree.node_count()));
    for (int u = 0; u < tree.node_count(); ++u) {
      if (tree.is_leaf(u)) continue;
      double s = 1.0;
      for (int j = 0; j < d; ++j) s += std::fabs(trace.rotated_limits[j].v[u]);
      h_rot.v[u] = s;
      for (int j = 0; j < d; ++j) phi[j].v[u] = trace.rotated_limits[j].v[u] / s;
    }
    RealAdapted x_rot(tree.node_count());
    for (int j = 0; j < d; ++j) {
      RealAdapted part = stoch_integral(tree, phi[j], trace.rotated_assets[j]);
      for (int i = 0; i < tree.node_count(); ++i) x_rot.v[i] += part.v[i];
    }
    RealAdapted y_rot = stoch_integral(tree, h_rot, x_rot);
    RealAdapted diff(tree.node_count());
    for (int i = 0; i < tree.node_count(); ++i)
      diff.v[i] = y_rot.v[i] - to_double(Rat(Z.v[i] - Z.v[0]));
    RealAdapted qv = quad_covar(tree, diff, diff);
    for (int leaf : tree.leaves())
      trace.float_qv_residual = std::max(trace.float_qv_residual, std::fabs(qv.v[leaf]));
    if (trace.float_qv_residual > opt.float_tol)
      throw Error(Errc::non_convergent, "float-track residual above tolerance");
  }
  return res;
}

}  // namespace martrep
