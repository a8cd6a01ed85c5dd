#pragma once

#include <map>
#include <string>
#include <vector>

#include "martrep/emm.hpp"
#include "martrep/prng.hpp"
#include "martrep/representation.hpp"
#include "martrep/tree.hpp"

namespace martrep {

/// A tree market: physical measure P (the tree's branch-probability measure)
/// and already-discounted asset price processes.
struct MarketInstance {
  ScenarioTree tree;
  MeasureVector P;
  std::vector<AdaptedProcess> assets;
  std::vector<std::string> asset_names;
};

inline MarketInstance market_from_document(const TreeDocument& doc) {
  MarketInstance m;
  m.tree = doc.tree;
  m.P = measure_from_branch_probs(doc.tree);
  for (const std::string& name : doc.assets) {
    m.assets.push_back(doc.processes.at(name));
    m.asset_names.push_back(name);
  }
  return m;
}

inline TreeDocument market_to_document(const MarketInstance& m) {
  TreeDocument doc;
  doc.tree = m.tree;
  for (std::size_t j = 0; j < m.assets.size(); ++j)
    doc.processes.emplace(m.asset_names[j], m.assets[j]);
  doc.assets = m.asset_names;
  return doc;
}

/// Hedge of a bounded claim: claim = c + (outer . fund) at the horizon, with
/// fund = sum_j (fund_integrand^j . asset^j) and the running gain bounded by
/// twice the claim bound.
struct HedgeResult {
  bool hedgeable = false;
  int witness_node = -1;   // where replication fails, when it does
  Rat initial_value = 0;   // c
  std::vector<PredictableProcess> fund_integrands;
  AdaptedProcess fund;
  PredictableProcess outer;
  Rat max_abs_gain = 0;
  bool bound_ok = false;
};

/// Prices and replicates a claim bounded by K using the market's reference
/// martingale measure. Requires |claim| <= K and a strictly positive
/// martingale measure (NoEsmm otherwise). Incompleteness surfaces as a
/// non-hedgeable result with the witness node, never as partial output.
inline HedgeResult hedge_claim(const MarketInstance& market, const std::vector<Rat>& xi,
                               const Rat& bound) {
  const ScenarioTree& tree = market.tree;
  if (static_cast<int>(xi.size()) != tree.leaf_count())
    throw Error(Errc::invariant_error, "claim has wrong leaf count");
  if (bound < 0) throw Error(Errc::bad_params, "claim bound must be nonnegative");
  for (int l = 0; l < tree.leaf_count(); ++l)
    if (rat_abs(xi[l]) > bound)
      throw Error(Errc::bad_params, "claim exceeds its stated bound",
                  tree.id(tree.leaves()[l]));
  EmmSet set = emm_affine_hull(tree, market.assets, MeasureMode::equivalent);
  if (!set.strictly_positive_point_exists)
    throw Error(Errc::no_esmm, "market has no strictly positive martingale measure");

  ClaimMembership membership = claim_representable(tree, xi, market.assets, set.reference);
  HedgeResult out;
  if (!membership.representable) {
    out.witness_node = membership.witness_node;
    return out;
  }
  RepresentationResult& rep = *membership.result;
  out.hedgeable = true;
  out.initial_value = rep.initial_value;
  out.fund_integrands = std::move(rep.fund_integrands);
  out.fund = std::move(rep.fund);
  out.outer = std::move(rep.outer_integrand);
  for (int i = 0; i < tree.node_count(); ++i)
    out.max_abs_gain = std::max(out.max_abs_gain, rat_abs(rep.reconstructed.v[i] - out.initial_value));
  out.bound_ok = out.max_abs_gain <= 2 * bound;
  if (!out.bound_ok)
    throw Error(Errc::invariant_error, "gain bound failed after replication");  // impossible
  return out;
}

struct FtapVerdict {
  bool complete = false;
  bool unique_esmm = false;
  bool agree = false;
};

/// Completeness (every leaf-indicator claim hedges; spanning, by linearity)
/// against uniqueness of the equivalent martingale measure, computed
/// independently.
inline FtapVerdict second_ftap_verdict(const MarketInstance& market) {
  FtapVerdict v;
  v.complete = true;
  for (int l = 0; l < market.tree.leaf_count() && v.complete; ++l) {
    std::vector<Rat> indicator(market.tree.leaf_count(), Rat(0));
    indicator[l] = 1;
    v.complete = hedge_claim(market, indicator, Rat(1)).hedgeable;
  }
  v.unique_esmm = is_unique_esmm(market.tree, market.assets);
  v.agree = v.complete == v.unique_esmm;
  return v;
}

struct CrosscheckReport {
  bool representable_all = false;  // every leaf indicator representable
  bool extreme = false;            // reference measure extreme in the set
  bool unique = false;             // affine hull is a point
  bool agree = false;
  int failing_leaf = -1;           // first non-representable indicator, if any
  std::string collapse_note;
};

/// Three independently computed verdicts that the representation theorem
/// ties together: representability of the spanning claims, extremality of
/// the pricing measure, and uniqueness of the measure set.
inline CrosscheckReport completeness_crosscheck(const MarketInstance& market) {
  const ScenarioTree& tree = market.tree;
  EmmSet set = emm_affine_hull(tree, market.assets, MeasureMode::equivalent);
  if (!set.strictly_positive_point_exists)
    throw Error(Errc::no_esmm, "market has no strictly positive martingale measure");
  CrosscheckReport rep;
  rep.representable_all = true;
  for (int l = 0; l < tree.leaf_count(); ++l) {
    std::vector<Rat> indicator(tree.leaf_count(), Rat(0));
    indicator[l] = 1;
    if (!claim_representable(tree, indicator, market.assets, set.reference).representable) {
      rep.representable_all = false;
      rep.failing_leaf = l;
      break;
    }
  }
  rep.extreme = is_extreme(set.reference, tree, market.assets);
  rep.unique = is_unique_esmm(tree, market.assets);
  rep.agree = rep.representable_all == rep.extreme && rep.extreme == rep.unique;
  rep.collapse_note =
      "uniform-integrability and sigma-martingale variants of the "
      "representation property coincide with the bounded one on finite trees";
  return rep;
}

struct CorpusParams {
  int max_depth = 3;
  int max_branch = 4;
  int max_assets = 3;
  long long count = 200;
};

/// Deterministic market corpus. Prices are generated as martingales under a
/// hidden strictly positive measure that is then discarded, so every
/// instance admits an equivalent martingale measure by construction.
inline std::vector<MarketInstance> corpus_generate(std::uint64_t seed,
                                                   const CorpusParams& params) {
  if (params.max_depth < 1 || params.max_depth > 4 || params.max_branch < 2 ||
      params.max_branch > 4 || params.max_assets < 1 || params.max_assets > 4 ||
      params.count < 1 || params.count > 10000)
    throw Error(Errc::bad_params, "corpus caps: depth <= 4, branch in [2,4], assets <= 4, count <= 10^4");

  std::vector<MarketInstance> out;
  out.reserve(params.count);
  for (long long inst = 0; inst < params.count; ++inst) {
    Prng rng(substream_seed(seed, static_cast<std::uint64_t>(inst)));
    const int depth = static_cast<int>(rng.uniform_int(1, params.max_depth));

    std::vector<std::pair<std::string, std::string>> nodes;
    std::map<std::string, Rat> prob;
    nodes.emplace_back("n0", "");
    std::vector<std::string> frontier{"n0"};
    int counter = 1;
    for (int t = 0; t < depth; ++t) {
      std::vector<std::string> next;
      for (const auto& parent : frontier) {
        const int m = static_cast<int>(rng.uniform_int(2, params.max_branch));
        std::vector<Rat> w(m);
        Rat total(0);
        for (int c = 0; c < m; ++c) {
          w[c] = Rat(rng.uniform_int(1, 6));
          total += w[c];
        }
        for (int c = 0; c < m; ++c) {
          std::string id = "n" + std::to_string(counter++);
          nodes.emplace_back(id, parent);
          prob.emplace(id, w[c] / total);
          next.push_back(id);
        }
      }
      frontier = std::move(next);
    }
    MarketInstance market;
    market.tree = ScenarioTree::build(depth, nodes, prob);
    market.P = measure_from_branch_probs(market.tree);

    // hidden pricing measure
    MeasureVector hidden(market.tree.leaf_count());
    Rat total(0);
    for (int l = 0; l < market.tree.leaf_count(); ++l) {
      hidden.leaf_mass[l] = Rat(rng.uniform_int(1, 9));
      total += hidden.leaf_mass[l];
    }
    for (auto& mass : hidden.leaf_mass) mass /= total;

    const int d = static_cast<int>(rng.uniform_int(1, params.max_assets));
    for (int j = 0; j < d; ++j) {
      std::vector<Rat> terminal(market.tree.leaf_count());
      for (auto& v : terminal) v = Rat(rng.uniform_int(0, 8), rng.uniform_int(1, 2));
      market.assets.push_back(density_process(market.tree, hidden, terminal));
      market.asset_names.push_back("X" + std::to_string(j + 1));
    }
    // construction guarantees a strictly positive martingale measure
    EmmSet set = emm_affine_hull(market.tree, market.assets, MeasureMode::equivalent);
    if (!set.strictly_positive_point_exists)
      throw Error(Errc::invariant_error, "corpus instance lost feasibility");  // bug trap
    out.push_back(std::move(market));
  }
  return out;
}

}  // namespace martrep
