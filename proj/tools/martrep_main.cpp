// martrep: exact stochastic-calculus toolkit for scenario-tree markets.
//
// Subcommands: check-martingale, integrate, emm, extreme, represent,
// reconstruct, diagonalize, sigma, emery, lemma53, hedge, sweep, crosscheck.
// Inputs are the tree/market/claim JSON formats described in the README.
// Exit codes: 0 success, 1 verdict failure (with --expect-* flags or a
// failing sweep), 2 input/usage errors.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "martrep/martrep.hpp"

namespace {

using namespace martrep;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

MarketInstance load_market(const std::string& path) {
  TreeDocument doc = load_tree_document(read_file(path));
  if (doc.assets.empty())
    throw Error(Errc::invariant_error, "market file lists no assets");
  return market_from_document(doc);
}

std::vector<Rat> load_claim(const std::string& path, const ScenarioTree& tree) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(Errc::parse_error, e.what());
  }
  return claim_from_json(doc, tree);
}

MeasureVector load_measure(const std::string& path, const ScenarioTree& tree) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(Errc::parse_error, e.what());
  }
  return measure_from_json(doc, tree);
}

std::uint64_t effective_seed(std::uint64_t cli_seed) {
  if (const char* env = std::getenv("MARTREP_SEED")) {
    try {
      return std::stoull(env);
    } catch (...) {
      throw Error(Errc::bad_params, "MARTREP_SEED is not an integer");
    }
  }
  return cli_seed;
}

StoppingTime never_stop(const ScenarioTree& tree) { return StoppingTime(tree.node_count()); }

const AdaptedProcess& named_process(const TreeDocument& doc, const std::string& name) {
  auto it = doc.processes.find(name);
  if (it == doc.processes.end())
    throw Error(Errc::invariant_error, "no process named \"" + name + "\" in the market file");
  return it->second;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"exact stochastic calculus and hedging on scenario trees"};
  app.require_subcommand(1);

  std::string format = "json";
  app.add_option("--format", format, "output format: json or text")
      ->check(CLI::IsMember({"json", "text"}));

  std::string market_path, claim_path, measure_path, process_name, integrand_name,
      against_name, mode = "equivalent";
  double epsilon = 1e-3, cap = 1.0, tol = 1e-9;
  long long samples = 100000, count = 200;
  std::uint64_t seed = 1;
  int shards = 1, levels = 6, depth = 3, branch = 4, assets = 3;
  std::string bound_text = "1";
  bool expect_hedgeable = false;

  auto* c_mart = app.add_subcommand("check-martingale", "exact martingale test for a process");
  c_mart->add_option("--market", market_path)->required();
  c_mart->add_option("--process", process_name)->required();
  c_mart->add_option("--measure", measure_path, "leaf-measure file; default branch measure");

  auto* c_int = app.add_subcommand("integrate", "stochastic integral of one process against another");
  c_int->add_option("--market", market_path)->required();
  c_int->add_option("--integrand", integrand_name, "process whose non-leaf values integrate")->required();
  c_int->add_option("--against", against_name, "integrator process")->required();

  auto* c_emm = app.add_subcommand("emm", "martingale-measure affine hull");
  c_emm->add_option("--market", market_path)->required();
  c_emm->add_option("--mode", mode)->check(CLI::IsMember({"equivalent", "abs-continuous"}));

  auto* c_ext = app.add_subcommand("extreme", "extremality of the physical measure");
  c_ext->add_option("--market", market_path)->required();
  c_ext->add_option("--measure", measure_path, "measure to test; default branch measure");

  auto* c_rep = app.add_subcommand("represent", "two-stage representability of a claim");
  c_rep->add_option("--market", market_path)->required();
  c_rep->add_option("--claim", claim_path)->required();

  auto* c_rec = app.add_subcommand("reconstruct", "run the reconstruction pipeline on a claim");
  c_rec->add_option("--market", market_path)->required();
  c_rec->add_option("--claim", claim_path)->required();
  c_rec->add_option("--levels", levels, "approximation levels (default 6)");
  c_rec->add_option("--tol", tol, "float-track tolerance (default 1e-9)");

  auto* c_diag = app.add_subcommand("diagonalize", "per-cell covariation diagnostics");
  c_diag->add_option("--market", market_path)->required();
  c_diag->add_option("--measure", measure_path, "measure for the cell weights; default branch measure");

  auto* c_sigma = app.add_subcommand("sigma", "sigma-martingale witness for a process");
  c_sigma->add_option("--market", market_path)->required();
  c_sigma->add_option("--process", process_name)->required();
  c_sigma->add_option("--measure", measure_path);

  auto* c_emery = app.add_subcommand("emery", "jump-example quadrature and Monte Carlo");
  c_emery->add_option("--epsilon", epsilon);
  c_emery->add_option("--cap", cap);
  c_emery->add_option("--samples", samples);
  c_emery->add_option("--seed", seed);
  c_emery->add_option("--shards", shards);

  auto* c_l53 = app.add_subcommand("lemma53", "density-process equivalences under a measure change");
  c_l53->add_option("--market", market_path)->required();
  c_l53->add_option("--process", process_name)->required();
  c_l53->add_option("--q", measure_path, "the equivalent measure Q (leaf-measure file)")->required();

  auto* c_hedge = app.add_subcommand("hedge", "replicate a bounded claim");
  c_hedge->add_option("--market", market_path)->required();
  c_hedge->add_option("--claim", claim_path)->required();
  c_hedge->add_option("--bound", bound_text, "claim bound K as p/q")->required();
  c_hedge->add_flag("--expect-hedgeable", expect_hedgeable, "exit 1 when not hedgeable");

  auto* c_sweep = app.add_subcommand("sweep", "completeness/uniqueness sweep over a random corpus");
  c_sweep->add_option("--seed", seed);
  c_sweep->add_option("--count", count);
  c_sweep->add_option("--depth", depth);
  c_sweep->add_option("--branch", branch);
  c_sweep->add_option("--assets", assets);
  c_sweep->add_option("--shards", shards);

  auto* c_cross = app.add_subcommand("crosscheck", "three-way representability/extremality/uniqueness check");
  c_cross->add_option("--market", market_path);
  c_cross->add_option("--seed", seed);
  c_cross->add_option("--count", count);
  c_cross->add_option("--depth", depth);
  c_cross->add_option("--branch", branch);
  c_cross->add_option("--assets", assets);
  c_cross->add_option("--shards", shards);

  // global flags (--format) may follow the subcommand
  for (CLI::App* sub : app.get_subcommands([](const CLI::App*) { return true; }))
    sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }

  int exit_code = 0;
  try {
    json report;

    if (c_mart->parsed()) {
      TreeDocument doc = load_tree_document(read_file(market_path));
      MeasureVector q = measure_path.empty() ? measure_from_branch_probs(doc.tree)
                                             : load_measure(measure_path, doc.tree);
      report = martingale_report(doc.tree, is_martingale(doc.tree, q, named_process(doc, process_name)));
    } else if (c_int->parsed()) {
      TreeDocument doc = load_tree_document(read_file(market_path));
      const AdaptedProcess& source = named_process(doc, integrand_name);
      PredictableProcess f(doc.tree.node_count());
      for (int i = 0; i < doc.tree.node_count(); ++i)
        if (!doc.tree.is_leaf(i)) f.v[i] = source.v[i];
      AdaptedProcess integral = stoch_integral(doc.tree, f, named_process(doc, against_name));
      report["integral"] = detail::process_map(doc.tree, integral);
    } else if (c_emm->parsed()) {
      MarketInstance m = load_market(market_path);
      EmmSet set = emm_affine_hull(m.tree, m.assets,
                                   mode == "equivalent" ? MeasureMode::equivalent
                                                        : MeasureMode::abs_continuous);
      report = emm_report(m.tree, set);
    } else if (c_ext->parsed()) {
      MarketInstance m = load_market(market_path);
      MeasureVector p = measure_path.empty() ? m.P : load_measure(measure_path, m.tree);
      report = extreme_report(is_extreme(p, m.tree, m.assets));
    } else if (c_rep->parsed()) {
      MarketInstance m = load_market(market_path);
      std::vector<Rat> xi = load_claim(claim_path, m.tree);
      EmmSet set = emm_affine_hull(m.tree, m.assets);
      if (!set.strictly_positive_point_exists)
        throw Error(Errc::no_esmm, "market has no strictly positive martingale measure");
      report = representation_report(
          m.tree, m.asset_names, claim_representable(m.tree, xi, m.assets, set.reference));
    } else if (c_rec->parsed()) {
      MarketInstance m = load_market(market_path);
      std::vector<Rat> xi = load_claim(claim_path, m.tree);
      if (levels < 4) throw Error(Errc::bad_params, "need at least 4 levels");
      EmmSet set = emm_affine_hull(m.tree, m.assets);
      if (!set.strictly_positive_point_exists)
        throw Error(Errc::no_esmm, "market has no strictly positive martingale measure");
      const MeasureVector& ref = set.reference;
      ClaimMembership membership = claim_representable(m.tree, xi, m.assets, ref);
      if (!membership.representable) {
        report["replay_exact"] = false;
        report["witness_node"] = m.tree.id(membership.witness_node);
      } else {
        AdaptedProcess z = density_process(m.tree, ref, xi);
        // perturbation scale so every level meets its 4^-n budget
        AdaptedProcess drift_sum(m.tree.node_count());
        for (const auto& a : m.assets)
          for (int i = 0; i < m.tree.node_count(); ++i) drift_sum.v[i] += a.v[i] - a.v[0];
        AdaptedProcess qv = quad_covar(m.tree, drift_sum, drift_sum);
        double scale = 0;
        for (int l = 0; l < m.tree.leaf_count(); ++l)
          scale += to_double(ref.leaf_mass[l]) *
                   std::sqrt(to_double(qv.v[m.tree.leaves()[l]]));
        int k = 1;
        while ((1 << k) < scale && k < 60) ++k;
        std::vector<CbApproximant> approx(levels);
        for (int n = 0; n < levels; ++n) {
          approx[n].integrands = membership.one_stage;
          if (n >= levels - 3) continue;  // exact tail
          Rat delta(BigInt(1), BigInt(1) << (2 * (n + 1) + 2 + k));
          for (auto& f : approx[n].integrands)
            for (int u = 0; u < m.tree.node_count(); ++u)
              if (!m.tree.is_leaf(u)) f.v[u] += delta;
        }
        ReconstructOptions opt;
        opt.float_tol = tol;
        ReconstructResult res =
            reconstruct(m.tree, ref, z, approx, never_stop(m.tree), m.assets, opt);
        report = reconstruct_report(m.tree, m.asset_names, res);
      }
    } else if (c_diag->parsed()) {
      MarketInstance m = load_market(market_path);
      MeasureVector q = measure_path.empty() ? m.P : load_measure(measure_path, m.tree);
      CellSystem sys = diagonalize_cells(m.tree, m.assets, never_stop(m.tree), q);
      report = diagonalization_report(m.tree, sys);
    } else if (c_sigma->parsed()) {
      TreeDocument doc = load_tree_document(read_file(market_path));
      MeasureVector q = measure_path.empty() ? measure_from_branch_probs(doc.tree)
                                             : load_measure(measure_path, doc.tree);
      report = sigma_report(doc.tree, sigma_witness(doc.tree, q, named_process(doc, process_name)));
    } else if (c_emery->parsed()) {
      EmeryModel model;
      model.eps = epsilon;
      model.cap = cap;
      model.samples = samples;
      model.seed = effective_seed(seed);
      model.shards = shards;
      report = emery_json(emery_simulate(model));
    } else if (c_l53->parsed()) {
      TreeDocument doc = load_tree_document(read_file(market_path));
      MeasureVector q = load_measure(measure_path, doc.tree);
      MeasureVector p = measure_from_branch_probs(doc.tree);
      report = measure_change_json(
          measure_change_report(doc.tree, named_process(doc, process_name), q, p));
    } else if (c_hedge->parsed()) {
      MarketInstance m = load_market(market_path);
      std::vector<Rat> xi = load_claim(claim_path, m.tree);
      auto bound = parse_rat(bound_text);
      if (!bound) throw Error(Errc::bad_params, "bound must be a rational p/q");
      HedgeResult h = hedge_claim(m, xi, *bound);
      report = hedge_report(m.tree, m.asset_names, h);
      if (!h.hedgeable && expect_hedgeable) exit_code = 1;
    } else if (c_sweep->parsed()) {
      CorpusParams params;
      params.max_depth = depth;
      params.max_branch = branch;
      params.max_assets = assets;
      params.count = count;
      report = sweep_report(effective_seed(seed), params, shards);
      if (report["summary"]["failures"].get<long long>() != 0) exit_code = 1;
    } else if (c_cross->parsed()) {
      if (!market_path.empty()) {
        MarketInstance m = load_market(market_path);
        report = crosscheck_json(m.tree, completeness_crosscheck(m));
        if (!report["agree"].get<bool>()) exit_code = 1;
      } else {
        CorpusParams params;
        params.max_depth = depth;
        params.max_branch = branch;
        params.max_assets = assets;
        params.count = count;
        report = crosscheck_sweep_report(effective_seed(seed), params, shards);
        if (report["summary"]["failures"].get<long long>() != 0) exit_code = 1;
      }
    }

    std::cout << render_report(report, format);
  } catch (const Error& e) {
    json err;
    err["error"] = e.what();
    if (!e.node().empty()) err["node"] = e.node();
    std::cerr << err.dump() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << R"({"error": ")" << e.what() << "\"}\n";
    return 2;
  }
  return exit_code;
}
