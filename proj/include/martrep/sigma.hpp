#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "martrep/calculus.hpp"
#include "martrep/prng.hpp"
#include "martrep/tree.hpp"

namespace martrep {

// ---------------------------------------------------------------------------
// Tree-side sigma-martingale analysis
//
// On a finite tree a strictly positive predictable scaler cannot cancel a
// one-step drift, so the sigma-martingale property collapses to the plain
// martingale property. The witness search below decides the verdict from the
// per-cell drift equations, which keeps it an independent route from the
// aggregated martingale test.
// ---------------------------------------------------------------------------

struct SigmaWitness {
  PredictableProcess phi;    // strictly positive scaler, identity when it works
  AdaptedProcess integral;   // (phi . X)
  bool verdict = false;
  int witness_node = -1;     // first cell with nonzero drift when verdict is false
  Rat drift = 0;             // that cell's exact drift
};

inline SigmaWitness sigma_witness(const ScenarioTree& tree, const MeasureVector& Q,
                                  const AdaptedProcess& X) {
  Q.validate(tree, /*require_positive=*/true);
  std::vector<Rat> mass = Q.node_mass(tree);
  SigmaWitness w;
  w.phi = PredictableProcess(tree.node_count(), Rat(1));
  w.verdict = true;
  for (int u = 0; u < tree.node_count(); ++u) {
    if (tree.is_leaf(u)) continue;
    Rat drift(0);
    for (int c : tree.children(u)) drift += (mass[c] / mass[u]) * (X.v[c] - X.v[u]);
    if (drift != 0) {
      // phi(u) * drift = 0 has no strictly positive solution
      w.verdict = false;
      if (w.witness_node < 0) {
        w.witness_node = u;
        w.drift = drift;
      }
    }
  }
  w.integral = stoch_integral(tree, w.phi, X);
  return w;
}

/// Strictly positive step weights along a stopping-time ladder: on the n-th
/// window the weight is 1 / (2^n (1 + a_n)). The ladder must start at 0,
/// be monotone, and saturate at the horizon so every step is covered.
inline PredictableProcess ladder_weights(const ScenarioTree& tree,
                                         const std::vector<StoppingTime>& ladder,
                                         const std::vector<Rat>& a) {
  if (ladder.size() < 2) throw Error(Errc::bad_ladder, "ladder needs at least one window");
  if (a.size() + 1 != ladder.size())
    throw Error(Errc::bad_ladder, "need one weight parameter per window");
  for (const Rat& an : a)
    if (an < 0) throw Error(Errc::bad_ladder, "window parameters must be nonnegative");
  std::vector<std::vector<int>> reached(ladder.size());
  for (std::size_t k = 0; k < ladder.size(); ++k) reached[k] = ladder[k].reached_time(tree);
  for (int l = 0; l < tree.leaf_count(); ++l) {
    const int leaf = tree.leaves()[l];
    if (ladder[0].value_at_leaf(tree, leaf) != 0)
      throw Error(Errc::bad_ladder, "ladder must start at time zero");
    int prev = 0;
    for (std::size_t k = 1; k < ladder.size(); ++k) {
      const int cur = ladder[k].value_at_leaf(tree, leaf);
      if (cur < prev) throw Error(Errc::bad_ladder, "ladder is not monotone");
      prev = cur;
    }
    if (prev != tree.horizon())
      throw Error(Errc::bad_ladder, "ladder must saturate at the horizon");
  }
  PredictableProcess h(tree.node_count());
  for (int u = 0; u < tree.node_count(); ++u) {
    if (tree.is_leaf(u)) continue;
    for (std::size_t n = 1; n < ladder.size(); ++n) {
      if (reached[n][u] == StoppingTime::kNotYet) {
        h.v[u] = Rat(1) / (Rat(BigInt(1) << n) * (Rat(1) + a[n - 1]));
        break;
      }
    }
    if (h.v[u] == 0)
      throw Error(Errc::bad_ladder, "step not covered by any window", tree.id(u));
  }
  return h;
}

struct SigmaSumResult {
  PredictableProcess xi;                // min(phi1, phi2), strictly positive
  std::vector<PredictableProcess> eta;  // xi / phi^i, in (0, 1]
  SigmaWitness combined;                // witness for a1 X1 + a2 X2
};

/// Closure under linear combination: revalidates both witnesses, takes the
/// pointwise minimum scaler and checks it works for a1 X1 + a2 X2.
inline SigmaSumResult sigma_sum(const ScenarioTree& tree, const MeasureVector& Q,
                                const AdaptedProcess& X1, const SigmaWitness& w1,
                                const AdaptedProcess& X2, const SigmaWitness& w2,
                                const Rat& a1, const Rat& a2) {
  auto revalidate = [&](const AdaptedProcess& X, const SigmaWitness& w, const char* tag) {
    for (int u = 0; u < tree.node_count(); ++u)
      if (!tree.is_leaf(u) && w.phi.v[u] <= 0)
        throw Error(Errc::invalid_witness, std::string(tag) + ": scaler not strictly positive",
                    tree.id(u));
    if (!w.verdict)
      throw Error(Errc::invalid_witness, std::string(tag) + ": witness verdict is false");
    AdaptedProcess m = stoch_integral(tree, w.phi, X);
    if (!is_martingale(tree, Q, m).ok)
      throw Error(Errc::invalid_witness, std::string(tag) + ": scaled process lost martingality");
  };
  revalidate(X1, w1, "first input");
  revalidate(X2, w2, "second input");

  SigmaSumResult out;
  out.xi = PredictableProcess(tree.node_count(), Rat(1));
  out.eta.assign(2, PredictableProcess(tree.node_count(), Rat(1)));
  for (int u = 0; u < tree.node_count(); ++u) {
    if (tree.is_leaf(u)) continue;
    out.xi.v[u] = std::min(w1.phi.v[u], w2.phi.v[u]);
    out.eta[0].v[u] = out.xi.v[u] / w1.phi.v[u];
    out.eta[1].v[u] = out.xi.v[u] / w2.phi.v[u];
  }
  AdaptedProcess combo(tree.node_count());
  for (int i = 0; i < tree.node_count(); ++i) combo.v[i] = a1 * X1.v[i] + a2 * X2.v[i];
  AdaptedProcess lhs = stoch_integral(tree, out.xi, combo);
  AdaptedProcess rhs(tree.node_count());
  {
    AdaptedProcess p1 = stoch_integral(tree, out.xi, X1);
    AdaptedProcess p2 = stoch_integral(tree, out.xi, X2);
    for (int i = 0; i < tree.node_count(); ++i) rhs.v[i] = a1 * p1.v[i] + a2 * p2.v[i];
  }
  if (lhs.v != rhs.v)
    throw Error(Errc::invariant_error, "integral linearity failed");  // bug trap
  out.combined.phi = out.xi;
  out.combined.integral = lhs;
  out.combined.verdict = is_martingale(tree, Q, lhs).ok;
  return out;
}

/// Moves a representation between the original drivers M^j and their scaled
/// versions N^j = (phi^j . M^j): integrands divide by phi^j on the way out
/// and multiply back on the way in; the fund value is unchanged node for
/// node. Returns the transported integrands after verifying that identity.
inline std::vector<PredictableProcess> transfer_integrands(
    const ScenarioTree& tree, const std::vector<PredictableProcess>& integrands,
    const std::vector<PredictableProcess>& phi, const std::vector<AdaptedProcess>& base_assets,
    bool to_scaled) {
  const int d = static_cast<int>(base_assets.size());
  if (static_cast<int>(integrands.size()) != d || static_cast<int>(phi.size()) != d)
    throw Error(Errc::invariant_error, "width mismatch");
  for (int j = 0; j < d; ++j)
    for (int u = 0; u < tree.node_count(); ++u)
      if (!tree.is_leaf(u) && phi[j].v[u] <= 0)
        throw Error(Errc::invalid_witness, "scalers must be strictly positive", tree.id(u));

  std::vector<AdaptedProcess> scaled(d);
  for (int j = 0; j < d; ++j) scaled[j] = stoch_integral(tree, phi[j], base_assets[j]);

  std::vector<PredictableProcess> out(d, PredictableProcess(tree.node_count()));
  for (int j = 0; j < d; ++j)
    for (int u = 0; u < tree.node_count(); ++u) {
      if (tree.is_leaf(u)) continue;
      if (to_scaled)
        out[j].v[u] = integrands[j].v[u] / phi[j].v[u];
      else
        out[j].v[u] = integrands[j].v[u] * phi[j].v[u];
    }
  AdaptedProcess before(tree.node_count()), after(tree.node_count());
  for (int j = 0; j < d; ++j) {
    AdaptedProcess b = stoch_integral(tree, integrands[j], to_scaled ? base_assets[j] : scaled[j]);
    AdaptedProcess a = stoch_integral(tree, out[j], to_scaled ? scaled[j] : base_assets[j]);
    for (int i = 0; i < tree.node_count(); ++i) {
      before.v[i] += b.v[i];
      after.v[i] += a.v[i];
    }
  }
  if (before.v != after.v)
    throw Error(Errc::invariant_error, "transfer changed the fund");  // bug trap
  return out;
}

// ---------------------------------------------------------------------------
// Density-process equivalences under a change of measure
// ---------------------------------------------------------------------------

struct MeasureChangeReport {
  bool base_martingale = false;       // M is a P-martingale (standing premise)
  bool q_martingale = false;          // M is a Q-martingale
  bool product_p_martingale = false;  // M Z is a P-martingale
  bool equiv_one = false;             // the two verdicts above agree
  struct Rung {
    int level = 0;
    bool q_side = false;
    bool p_side = false;
  };
  std::vector<Rung> stopped;  // same equivalence for stopped variants
  bool equiv_two = false;
  bool hypothesis_three = false;  // M is a Q-martingale
  bool conclusion_three = false;  // [M, Z] is a P-martingale
  bool holds_three = false;       // hypothesis => conclusion
  bool holds_four = false;        // sigma-variant: same content on finite trees
  std::string collapse_note;
};

/// Z is the density martingale Z_t = E_P[dQ/dP | F_t]. Reports, exactly:
/// the equivalence "M is a Q-martingale iff M Z is a P-martingale", its
/// stopped variants along a ladder (the time grid by default), and the
/// covariation statement "if M is a Q-martingale then [M, Z] is a
/// P-martingale", whose validity rides on the standing premise that M is a
/// P-martingale (reported alongside). The sigma-martingale variant carries
/// the same content because sigma-, local and true martingales coincide on
/// finite trees.
inline MeasureChangeReport measure_change_report(const ScenarioTree& tree,
                                                 const AdaptedProcess& M,
                                                 const MeasureVector& Q,
                                                 const MeasureVector& P,
                                                 const std::vector<StoppingTime>& ladder = {}) {
  P.validate(tree);
  Q.validate(tree);
  if (!P.strictly_positive() || !Q.strictly_positive())
    throw Error(Errc::not_equivalent, "measures must both be strictly positive");

  std::vector<Rat> density(tree.leaf_count());
  for (int l = 0; l < tree.leaf_count(); ++l) density[l] = Q.leaf_mass[l] / P.leaf_mass[l];
  AdaptedProcess Z = density_process(tree, P, density);

  MeasureChangeReport rep;
  rep.base_martingale = is_martingale(tree, P, M).ok;
  rep.q_martingale = is_martingale(tree, Q, M).ok;
  AdaptedProcess mz(tree.node_count());
  for (int i = 0; i < tree.node_count(); ++i) mz.v[i] = M.v[i] * Z.v[i];
  rep.product_p_martingale = is_martingale(tree, P, mz).ok;
  rep.equiv_one = rep.q_martingale == rep.product_p_martingale;

  std::vector<StoppingTime> rungs = ladder;
  if (rungs.empty()) {
    for (int k = 0; k <= tree.horizon(); ++k) {
      StoppingTime s(tree.node_count());
      for (int i = 0; i < tree.node_count(); ++i) s.flag[i] = tree.time(i) >= k;
      rungs.push_back(std::move(s));
    }
  }
  rep.equiv_two = true;
  for (std::size_t k = 0; k < rungs.size(); ++k) {
    AdaptedProcess ms = stop_process(tree, M, rungs[k]);
    AdaptedProcess zs = stop_process(tree, Z, rungs[k]);
    AdaptedProcess prod(tree.node_count());
    for (int i = 0; i < tree.node_count(); ++i) prod.v[i] = ms.v[i] * zs.v[i];
    MeasureChangeReport::Rung r;
    r.level = static_cast<int>(k);
    r.q_side = is_martingale(tree, Q, ms).ok;
    r.p_side = is_martingale(tree, P, prod).ok;
    rep.equiv_two = rep.equiv_two && (r.q_side == r.p_side);
    rep.stopped.push_back(r);
  }

  rep.hypothesis_three = rep.q_martingale;
  rep.conclusion_three = is_martingale(tree, P, quad_covar(tree, M, Z)).ok;
  rep.holds_three = !rep.hypothesis_three || rep.conclusion_three;
  rep.holds_four = rep.holds_three;
  rep.collapse_note =
      "sigma-, local and true martingales coincide on a finite tree; the "
      "sigma-variant is reported through the covariation statement";
  return rep;
}

// ---------------------------------------------------------------------------
// The unit-rate jump example: a sigma-martingale that is not a martingale.
//
// tau ~ Exp(1), xi = +-1 independent, M_t = xi 1_{[tau, inf)}(t). Integrating
// f_t = 1/t against M gives X with sqrt([X, X]_s) = (1/tau) 1_{tau <= s},
// whose truncated expectation I(eps, a) = int_eps^a t^-1 e^-t dt diverges
// logarithmically as eps -> 0, while phi_t = t scales X back to M exactly.
// ---------------------------------------------------------------------------

/// I(eps, a) = int_eps^a t^-1 e^-t dt by adaptive Simpson bisection on the
/// log-substituted integrand e^{-e^u}, absolute tolerance 1e-9 or better.
inline double emery_truncated_expectation(double eps, double a) {
  if (!(eps > 0) || !(eps < a)) {
    if (eps == a) return 0.0;  // empty interval
    throw Error(Errc::bad_range, "need 0 < eps <= a");
  }
  auto f = [](double u) { return std::exp(-std::exp(u)); };
  const double lo = std::log(eps), hi = std::log(a);
  struct Simpson {
    std::function<double(double)> g;
    double run(double l, double r, double fl, double fm, double fr, double whole,
               double tol, int depth) const {
      const double m = 0.5 * (l + r);
      const double lm = 0.5 * (l + m), rm = 0.5 * (m + r);
      const double flm = g(lm), frm = g(rm);
      const double left = (m - l) / 6.0 * (fl + 4.0 * flm + fm);
      const double right = (r - m) / 6.0 * (fm + 4.0 * frm + fr);
      if (depth <= 0 || std::fabs(left + right - whole) < 15.0 * tol)
        return left + right + (left + right - whole) / 15.0;
      return run(l, m, fl, flm, fm, left, tol * 0.5, depth - 1) +
             run(m, r, fm, frm, fr, right, tol * 0.5, depth - 1);
    }
  };
  Simpson s{f};
  const double fl = f(lo), fr = f(hi), fm = f(0.5 * (lo + hi));
  const double whole = (hi - lo) / 6.0 * (fl + 4.0 * fm + fr);
  return s.run(lo, hi, fl, fm, fr, whole, 1e-12, 48);
}

struct EmeryModel {
  double eps = 1e-3;
  double cap = 1.0;              // evaluation window [0, cap]
  long long samples = 100000;
  std::uint64_t seed = 1;
  int shards = 1;
  std::vector<double> grid;      // pathwise check times; defaults inside
};

struct EmeryStats {
  double quadrature = 0;       // I(eps, cap)
  double mean = 0;             // truncated empirical mean
  double stderr_ = 0;
  double sigma_residual = 0;   // max pathwise |(t . X) - M| at grid times
  long long samples = 0;
};

/// Seeded Monte Carlo for the jump example. Every sample derives its own
/// substream from (seed, index) and lands in a fixed slot, so the merged
/// statistics are bit-identical for any shard count.
inline EmeryStats emery_simulate(const EmeryModel& model) {
  if (!(model.eps > 0) || !(model.eps < model.cap))
    throw Error(Errc::bad_range, "need 0 < eps < cap");
  if (model.samples < 1) throw Error(Errc::bad_params, "need at least one sample");
  if (model.shards < 1) throw Error(Errc::bad_params, "need at least one shard");
  std::vector<double> grid = model.grid;
  if (grid.empty())
    grid = {0.25 * model.cap, 0.5 * model.cap, 0.75 * model.cap, model.cap};

  const long long n = model.samples;
  std::vector<double> value(n);
  std::vector<double> residual(n, 0.0);
  auto worker = [&](long long begin, long long end) {
    for (long long i = begin; i < end; ++i) {
      Prng g(substream_seed(model.seed, static_cast<std::uint64_t>(i)));
      const double tau = -std::log(g.uniform_unit());
      const double xi = g.coin() ? 1.0 : -1.0;
      value[i] = (tau >= model.eps && tau <= model.cap) ? 1.0 / tau : 0.0;
      double res = 0.0;
      for (double t : grid) {
        const double m_t = tau <= t ? xi : 0.0;
        const double integral_t = tau <= t ? tau * (xi / tau) : 0.0;
        res = std::max(res, std::fabs(integral_t - m_t));
      }
      residual[i] = res;
    }
  };
  if (model.shards == 1) {
    worker(0, n);
  } else {
    std::vector<std::thread> pool;
    const long long block = (n + model.shards - 1) / model.shards;
    for (int s = 0; s < model.shards; ++s) {
      const long long b = s * block, e = std::min(n, b + block);
      if (b >= e) break;
      pool.emplace_back(worker, b, e);
    }
    for (auto& th : pool) th.join();
  }

  EmeryStats out;
  out.samples = n;
  out.quadrature = emery_truncated_expectation(model.eps, model.cap);
  double sum = 0;
  for (long long i = 0; i < n; ++i) sum += value[i];  // fixed order: shard-invariant
  out.mean = sum / static_cast<double>(n);
  double ss = 0;
  for (long long i = 0; i < n; ++i) {
    const double dv = value[i] - out.mean;
    ss += dv * dv;
  }
  out.stderr_ = n > 1 ? std::sqrt(ss / (static_cast<double>(n - 1) * static_cast<double>(n)))
                      : 0.0;
  for (long long i = 0; i < n; ++i) out.sigma_residual = std::max(out.sigma_residual, residual[i]);
  return out;
}

struct DivergenceWitness {
  double eps = 0;    // truncation level found
  double value = 0;  // I(eps, cap) at that level, above the requested bound
};

/// Divergence evidence for the jump example: finds a truncation level whose
/// truncated expectation exceeds the requested bound, so no stopping ladder
/// can keep the square-root variation integrable. The level is searched on a
/// fixed power grid, deterministic.
inline DivergenceWitness emery_divergence_probe(double bound, double cap) {
  if (!(cap > 0) || !(bound > 0)) throw Error(Errc::bad_range, "need positive bound and cap");
  for (int k = 1; k <= 2048; ++k) {
    const double eps = std::pow(10.0, -0.25 * k);
    if (eps >= cap) continue;
    const double v = emery_truncated_expectation(eps, cap);
    if (v > bound) return {eps, v};
  }
  throw Error(Errc::bad_range, "bound not exceeded on the search grid");  // unreachable: log divergence
}

struct CollapseProbe {
  std::vector<double> qv_expectations;  // E_Q[sqrt([X,X]_{tau_n})] per rung, finite
  bool martingale = false;              // bounded sigma-martingales are martingales here
};

/// Tree-side probe: the stopped square-root variation expectations are
/// finite outright, and the martingale verdict witnesses the finite-model
/// collapse of the sigma-martingale class.
inline CollapseProbe sigma_collapse_probe(const ScenarioTree& tree, const MeasureVector& Q,
                                          const AdaptedProcess& X,
                                          const std::vector<StoppingTime>& ladder) {
  CollapseProbe out;
  for (const StoppingTime& tau : ladder) {
    AdaptedProcess stopped = stop_process(tree, X, tau);
    AdaptedProcess qv = quad_covar(tree, stopped, stopped);
    double e = 0;
    for (int l = 0; l < tree.leaf_count(); ++l)
      e += to_double(Q.leaf_mass[l]) * std::sqrt(to_double(qv.v[tree.leaves()[l]]));
    out.qv_expectations.push_back(e);
  }
  out.martingale = sigma_witness(tree, Q, X).verdict;
  return out;
}

}  // namespace martrep
