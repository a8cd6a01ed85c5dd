#pragma once

#include <cstdio>
#include <string>
#include <thread>
#include <vector>

#include "martrep/calculus.hpp"
#include "martrep/diagonalization.hpp"
#include "martrep/emm.hpp"
#include "martrep/representation.hpp"
#include "martrep/sft.hpp"
#include "martrep/sigma.hpp"
#include "martrep/tree.hpp"

namespace martrep {

// JSON report builders. All fields are emitted in deterministic order and
// all rationals as "p/q" strings, so byte-identical inputs (and any shard
// count) give byte-identical reports.

namespace detail {

inline json rat_map(const ScenarioTree& tree, const std::vector<Rat>& leaf_values) {
  json out = json::object();
  for (int l = 0; l < tree.leaf_count(); ++l)
    out[tree.id(tree.leaves()[l])] = rat_str(leaf_values[l]);
  return out;
}

inline json process_map(const ScenarioTree& tree, const AdaptedProcess& x) {
  json out = json::object();
  for (int i = 0; i < tree.node_count(); ++i) out[tree.id(i)] = rat_str(x.v[i]);
  return out;
}

inline json predictable_map(const ScenarioTree& tree, const PredictableProcess& f) {
  json out = json::object();
  for (int i = 0; i < tree.node_count(); ++i)
    if (!tree.is_leaf(i)) out[tree.id(i)] = rat_str(f.v[i]);
  return out;
}

}  // namespace detail

inline json emm_report(const ScenarioTree& tree, const EmmSet& set) {
  json out;
  out["dimension"] = set.dimension;
  out["unique"] = set.dimension == 0;
  out["strictly_positive_point_exists"] = set.strictly_positive_point_exists;
  out["reference"] = detail::rat_map(tree, set.reference.leaf_mass);
  json basis = json::array();
  for (const auto& dir : set.affine_basis) basis.push_back(detail::rat_map(tree, dir));
  out["basis"] = std::move(basis);
  return out;
}

inline json martingale_report(const ScenarioTree& tree, const MartingaleVerdict& v) {
  json out;
  out["martingale"] = v.ok;
  if (v.ok) {
    out["worst_node"] = nullptr;
    out["violation"] = "0";
  } else {
    out["worst_node"] = tree.id(v.worst_node);
    out["violation"] = rat_str(v.worst_violation);
  }
  return out;
}

inline json extreme_report(bool extreme) {
  json out;
  out["extreme"] = extreme;
  return out;
}

inline json representation_report(const ScenarioTree& tree,
                                  const std::vector<std::string>& asset_names,
                                  const ClaimMembership& m) {
  json out;
  out["representable"] = m.representable;
  if (!m.representable) {
    out["witness_node"] = tree.id(m.witness_node);
    return out;
  }
  const RepresentationResult& rep = *m.result;
  out["witness_node"] = nullptr;
  out["initial_value"] = rat_str(rep.initial_value);
  json funds = json::object();
  for (std::size_t j = 0; j < asset_names.size(); ++j)
    funds[asset_names[j]] = detail::predictable_map(tree, rep.fund_integrands[j]);
  out["fund_integrands"] = std::move(funds);
  out["fund"] = detail::process_map(tree, rep.fund);
  out["outer_integrand"] = detail::predictable_map(tree, rep.outer_integrand);
  json one = json::object();
  for (std::size_t j = 0; j < asset_names.size(); ++j)
    one[asset_names[j]] = detail::predictable_map(tree, m.one_stage[j]);
  out["one_stage_integrands"] = std::move(one);
  return out;
}

inline json sigma_report(const ScenarioTree& tree, const SigmaWitness& w) {
  json out;
  out["sigma_martingale"] = w.verdict;
  out["scaler"] = detail::predictable_map(tree, w.phi);
  if (!w.verdict) {
    out["witness_node"] = tree.id(w.witness_node);
    out["drift"] = rat_str(w.drift);
  } else {
    out["witness_node"] = nullptr;
    out["drift"] = "0";
  }
  return out;
}

inline json hedge_report(const ScenarioTree& tree,
                         const std::vector<std::string>& asset_names,
                         const HedgeResult& h) {
  json out;
  out["hedgeable"] = h.hedgeable;
  if (!h.hedgeable) {
    out["witness_node"] = tree.id(h.witness_node);
    return out;
  }
  out["witness_node"] = nullptr;
  out["initial_value"] = rat_str(h.initial_value);
  json funds = json::object();
  for (std::size_t j = 0; j < asset_names.size(); ++j)
    funds[asset_names[j]] = detail::predictable_map(tree, h.fund_integrands[j]);
  out["fund_integrands"] = std::move(funds);
  out["fund"] = detail::process_map(tree, h.fund);
  out["outer_integrand"] = detail::predictable_map(tree, h.outer);
  out["max_abs_gain"] = rat_str(h.max_abs_gain);
  out["bound_ok"] = h.bound_ok;
  return out;
}

inline json measure_change_json(const MeasureChangeReport& rep) {
  json out;
  out["base_martingale"] = rep.base_martingale;
  out["q_martingale"] = rep.q_martingale;
  out["product_p_martingale"] = rep.product_p_martingale;
  out["equivalence"] = rep.equiv_one;
  json rungs = json::array();
  for (const auto& r : rep.stopped) {
    json rr;
    rr["level"] = r.level;
    rr["q_side"] = r.q_side;
    rr["p_side"] = r.p_side;
    rungs.push_back(std::move(rr));
  }
  out["stopped_equivalences"] = std::move(rungs);
  out["stopped_agree"] = rep.equiv_two;
  out["covariation_hypothesis"] = rep.hypothesis_three;
  out["covariation_conclusion"] = rep.conclusion_three;
  out["covariation_holds"] = rep.holds_three;
  out["sigma_variant_holds"] = rep.holds_four;
  out["note"] = rep.collapse_note;
  return out;
}

inline json diagonalization_report(const ScenarioTree& tree, const CellSystem& sys) {
  json cells = json::array();
  const int d = sys.dim;
  for (int u = 0; u < tree.node_count(); ++u) {
    if (tree.is_leaf(u)) continue;
    const CellDiag& cell = sys.cells[u];
    json c;
    c["node"] = tree.id(u);
    c["active"] = cell.active;
    json gamma = json::array();
    for (int i = 0; i < d; ++i) {
      json row = json::array();
      for (int j = 0; j < d; ++j) row.push_back(rat_str(cell.gamma.at(i, j)));
      gamma.push_back(std::move(row));
    }
    c["gamma"] = std::move(gamma);
    c["lambda"] = rat_str(cell.lambda);
    auto dmat = [&](const DMat& m) {
      json rows = json::array();
      for (int i = 0; i < d; ++i) {
        json row = json::array();
        for (int j = 0; j < d; ++j) row.push_back(m.at(i, j));
        rows.push_back(std::move(row));
      }
      return rows;
    };
    c["C"] = dmat(cell.c);
    c["B"] = dmat(cell.b);
    c["D"] = cell.d;
    json res;
    res["row_orthonormality"] = cell.res_row_orth;
    res["column_orthonormality"] = cell.res_col_orth;
    res["diagonality"] = cell.res_diag;
    c["residuals"] = std::move(res);
    cells.push_back(std::move(c));
  }
  json out;
  out["assets"] = d;
  out["cells"] = std::move(cells);
  return out;
}

inline json emery_json(const EmeryStats& stats) {
  json out;
  out["I"] = stats.quadrature;
  out["mean"] = stats.mean;
  out["stderr"] = stats.stderr_;
  out["sigma_residual"] = stats.sigma_residual;
  out["samples"] = stats.samples;
  return out;
}

inline json crosscheck_json(const ScenarioTree& tree, const CrosscheckReport& rep) {
  json out;
  out["representable_all"] = rep.representable_all;
  out["extreme"] = rep.extreme;
  out["unique"] = rep.unique;
  out["agree"] = rep.agree;
  if (rep.failing_leaf >= 0)
    out["failing_leaf"] = tree.id(tree.leaves()[rep.failing_leaf]);
  else
    out["failing_leaf"] = nullptr;
  out["note"] = rep.collapse_note;
  return out;
}

inline json reconstruct_report(const ScenarioTree& tree,
                               const std::vector<std::string>& asset_names,
                               const ReconstructResult& res) {
  json out;
  out["replay_exact"] = true;  // reconstruct throws otherwise
  out["initial_value"] = rat_str(res.initial_value);
  out["normalizer"] = detail::predictable_map(tree, res.h);
  json dirs = json::object();
  for (std::size_t j = 0; j < asset_names.size(); ++j)
    dirs[asset_names[j]] = detail::predictable_map(tree, res.directions[j]);
  out["directions"] = std::move(dirs);
  out["fund"] = detail::process_map(tree, res.fund);
  json trace;
  trace["schedule_error"] = res.trace.schedule_error;
  trace["zeta"] = res.trace.zeta;
  trace["alpha"] = res.trace.alpha;
  trace["pair_bound_slack"] = res.trace.pair_bound_slack;
  trace["float_qv_residual"] = res.trace.float_qv_residual;
  double worst_cell = 0;
  for (const CellDiag& cell : res.trace.cells.cells)
    worst_cell = std::max({worst_cell, cell.res_row_orth, cell.res_col_orth, cell.res_diag});
  trace["max_cell_residual"] = worst_cell;
  out["trace"] = std::move(trace);
  return out;
}

/// Sharded market sweep: per-instance rows (in index order, independent of
/// the shard count) plus the summary line.
inline json sweep_report(std::uint64_t seed, const CorpusParams& params, int shards) {
  if (shards < 1) throw Error(Errc::bad_params, "need at least one shard");
  std::vector<MarketInstance> corpus = corpus_generate(seed, params);
  const long long n = static_cast<long long>(corpus.size());
  std::vector<json> rows(n);
  auto worker = [&](long long begin, long long end) {
    for (long long i = begin; i < end; ++i) {
      FtapVerdict v = second_ftap_verdict(corpus[i]);
      json row;
      row["index"] = i;
      row["leaves"] = corpus[i].tree.leaf_count();
      row["assets"] = static_cast<int>(corpus[i].assets.size());
      row["complete"] = v.complete;
      row["unique"] = v.unique_esmm;
      row["agree"] = v.agree;
      rows[i] = std::move(row);
    }
  };
  if (shards == 1) {
    worker(0, n);
  } else {
    std::vector<std::thread> pool;
    const long long block = (n + shards - 1) / shards;
    for (int s = 0; s < shards; ++s) {
      const long long b = s * block, e = std::min(n, b + block);
      if (b >= e) break;
      pool.emplace_back(worker, b, e);
    }
    for (auto& th : pool) th.join();
  }
  long long agreements = 0;
  json out_rows = json::array();
  for (long long i = 0; i < n; ++i) {
    if (rows[i]["agree"].get<bool>()) ++agreements;
    out_rows.push_back(std::move(rows[i]));
  }
  json out;
  out["rows"] = std::move(out_rows);
  json summary;
  summary["instances"] = n;
  summary["agreements"] = agreements;
  summary["failures"] = n - agreements;
  out["summary"] = std::move(summary);
  return out;
}

/// Corpus-wide crosscheck rows with the same sharding contract as the sweep.
inline json crosscheck_sweep_report(std::uint64_t seed, const CorpusParams& params,
                                    int shards) {
  if (shards < 1) throw Error(Errc::bad_params, "need at least one shard");
  std::vector<MarketInstance> corpus = corpus_generate(seed, params);
  const long long n = static_cast<long long>(corpus.size());
  std::vector<json> rows(n);
  auto worker = [&](long long begin, long long end) {
    for (long long i = begin; i < end; ++i) {
      CrosscheckReport rep = completeness_crosscheck(corpus[i]);
      json row;
      row["index"] = i;
      row["representable_all"] = rep.representable_all;
      row["extreme"] = rep.extreme;
      row["unique"] = rep.unique;
      row["agree"] = rep.agree;
      rows[i] = std::move(row);
    }
  };
  if (shards == 1) {
    worker(0, n);
  } else {
    std::vector<std::thread> pool;
    const long long block = (n + shards - 1) / shards;
    for (int s = 0; s < shards; ++s) {
      const long long b = s * block, e = std::min(n, b + block);
      if (b >= e) break;
      pool.emplace_back(worker, b, e);
    }
    for (auto& th : pool) th.join();
  }
  long long agreements = 0;
  json out_rows = json::array();
  for (long long i = 0; i < n; ++i) {
    if (rows[i]["agree"].get<bool>()) ++agreements;
    out_rows.push_back(std::move(rows[i]));
  }
  json out;
  out["rows"] = std::move(out_rows);
  json summary;
  summary["instances"] = n;
  summary["agreements"] = agreements;
  summary["failures"] = n - agreements;
  out["summary"] = std::move(summary);
  return out;
}

/// Plain-text rendering: one "path = value" line per scalar, floats at 17
/// significant digits.
inline void render_text_lines(const json& j, const std::string& prefix, std::string& out) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items())
      render_text_lines(v, prefix.empty() ? k : prefix + "." + k, out);
  } else if (j.is_array()) {
    int idx = 0;
    for (const auto& v : j)
      render_text_lines(v, prefix + "[" + std::to_string(idx++) + "]", out);
  } else if (j.is_number_float()) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", j.get<double>());
    out += prefix + " = " + buf + "\n";
  } else {
    out += prefix + " = " + j.dump() + "\n";
  }
}

inline std::string render_report(const json& j, const std::string& format) {
  if (format == "text") {
    std::string out;
    render_text_lines(j, "", out);
    return out;
  }
  return j.dump(2) + "\n";
}

}  // namespace martrep
