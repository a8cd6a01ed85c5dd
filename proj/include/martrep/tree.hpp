#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "martrep/error.hpp"
#include "martrep/rational.hpp"

namespace martrep {

using json = nlohmann::ordered_json;

/// Finite filtered probability space: a rooted tree with one-step branch
/// probabilities. Nodes at depth t are the atoms of F_t; all leaves sit at
/// the horizon T. Immutable after construction; all invariants are enforced
/// by the builders.
class ScenarioTree {
 public:
  struct Node {
    std::string id;
    int parent = -1;  // -1 for the root
    int time = 0;
    std::vector<int> children;
  };

  /// Builds and validates. `nodes` lists (id, parent-id) pairs in any order
  /// (the root carries an empty parent id); `branch_prob` maps each non-root
  /// id to its one-step probability given the parent. Internally nodes are
  /// stored in a stable topological order, so equal documents build equal
  /// trees regardless of listing order.
  static ScenarioTree build(int horizon,
                            const std::vector<std::pair<std::string, std::string>>& raw_nodes,
                            const std::map<std::string, Rat>& branch_prob) {
    ScenarioTree t;
    t.horizon_ = horizon;
    if (horizon < 0) throw Error(Errc::invariant_error, "horizon must be >= 0");

    // stable topological order: repeatedly append nodes whose parent is placed
    std::unordered_map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < raw_nodes.size(); ++i) {
      if (!pos.emplace(raw_nodes[i].first, i).second)
        throw Error(Errc::invariant_error, "duplicate node id", raw_nodes[i].first);
      if (!raw_nodes[i].second.empty() && !pos.count(raw_nodes[i].second) &&
          std::none_of(raw_nodes.begin(), raw_nodes.end(),
                       [&](const auto& n) { return n.first == raw_nodes[i].second; }))
        throw Error(Errc::invariant_error, "dangling parent", raw_nodes[i].first);
    }
    std::vector<std::pair<std::string, std::string>> nodes;
    nodes.reserve(raw_nodes.size());
    {
      std::vector<bool> placed(raw_nodes.size(), false);
      std::unordered_map<std::string, bool> id_placed;
      bool progress = true;
      while (nodes.size() < raw_nodes.size() && progress) {
        progress = false;
        for (std::size_t i = 0; i < raw_nodes.size(); ++i) {
          if (placed[i]) continue;
          const auto& [id, parent] = raw_nodes[i];
          if (parent.empty() || id_placed.count(parent)) {
            nodes.push_back(raw_nodes[i]);
            placed[i] = true;
            id_placed.emplace(id, true);
            progress = true;
          }
        }
      }
      if (nodes.size() < raw_nodes.size())
        throw Error(Errc::invariant_error, "node list contains a parent cycle");
    }

    std::unordered_map<std::string, int> idx;
    for (const auto& [id, parent] : nodes) {
      idx.emplace(id, static_cast<int>(t.nodes_.size()));
      Node n;
      n.id = id;
      n.parent = -2;  // parent id resolved in the second pass
      t.nodes_.push_back(std::move(n));
    }
    int root = -1;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto& parent_id = nodes[i].second;
      if (parent_id.empty()) {
        if (root >= 0) throw Error(Errc::invariant_error, "more than one root");
        root = static_cast<int>(i);
        t.nodes_[i].parent = -1;
      } else {
        t.nodes_[i].parent = idx.at(parent_id);
      }
    }
    if (root < 0) throw Error(Errc::invariant_error, "no root node");
    // topological order puts the root first
    for (std::size_t i = 1; i < t.nodes_.size(); ++i) {
      int p = t.nodes_[i].parent;
      t.nodes_[i].time = t.nodes_[p].time + 1;
      if (t.nodes_[i].time > horizon)
        throw Error(Errc::invariant_error, "node deeper than horizon", t.nodes_[i].id);
      t.nodes_[p].children.push_back(static_cast<int>(i));
    }
    for (std::size_t i = 0; i < t.nodes_.size(); ++i) {
      const Node& n = t.nodes_[i];
      if (n.children.empty() && n.time != horizon)
        throw Error(Errc::invariant_error, "leaf not at horizon", n.id);
    }
    // Branch probabilities: positive, exact unit sum per family.
    t.branch_prob_.assign(t.nodes_.size(), Rat(1));
    for (std::size_t i = 1; i < t.nodes_.size(); ++i) {
      auto it = branch_prob.find(t.nodes_[i].id);
      if (it == branch_prob.end())
        throw Error(Errc::invariant_error, "missing branch probability", t.nodes_[i].id);
      if (it->second <= 0)
        throw Error(Errc::invariant_error, "branch probability must be positive",
                    t.nodes_[i].id);
      t.branch_prob_[i] = it->second;
    }
    for (std::size_t i = 0; i < t.nodes_.size(); ++i) {
      if (t.nodes_[i].children.empty()) continue;
      Rat s(0);
      for (int c : t.nodes_[i].children) s += t.branch_prob_[c];
      if (s != 1)
        throw Error(Errc::invariant_error,
                    "branch probabilities sum to " + rat_str(s) + ", expected 1",
                    t.nodes_[i].id);
    }
    for (std::size_t i = 0; i < t.nodes_.size(); ++i) {
      if (t.nodes_[i].children.empty()) t.leaves_.push_back(static_cast<int>(i));
    }
    t.leaf_ordinal_.assign(t.nodes_.size(), -1);
    for (std::size_t k = 0; k < t.leaves_.size(); ++k) t.leaf_ordinal_[t.leaves_[k]] = static_cast<int>(k);
    t.index_of_ = std::move(idx);
    return t;
  }

  int horizon() const { return horizon_; }
  int node_count() const { return static_cast<int>(nodes_.size()); }
  int leaf_count() const { return static_cast<int>(leaves_.size()); }
  const std::vector<int>& leaves() const { return leaves_; }
  const Node& node(int i) const { return nodes_[i]; }
  bool is_leaf(int i) const { return nodes_[i].children.empty(); }
  int time(int i) const { return nodes_[i].time; }
  int parent(int i) const { return nodes_[i].parent; }
  const std::vector<int>& children(int i) const { return nodes_[i].children; }
  const std::string& id(int i) const { return nodes_[i].id; }
  const Rat& branch_prob(int i) const { return branch_prob_[i]; }

  /// Leaf ordinal (position within leaves()), -1 for internal nodes.
  int leaf_ordinal(int i) const { return leaf_ordinal_[i]; }

  int index_of(const std::string& id) const {
    auto it = index_of_.find(id);
    if (it == index_of_.end()) throw Error(Errc::invariant_error, "unknown node id", id);
    return it->second;
  }
  bool has_node(const std::string& id) const { return index_of_.count(id) != 0; }

  /// Ancestor of `node` at the given time (time <= time(node)).
  int ancestor_at(int node, int t) const {
    int u = node;
    while (nodes_[u].time > t) u = nodes_[u].parent;
    return u;
  }

 private:
  int horizon_ = 0;
  std::vector<Node> nodes_;
  std::vector<Rat> branch_prob_;
  std::vector<int> leaves_;
  std::vector<int> leaf_ordinal_;
  std::unordered_map<std::string, int> index_of_;
};

/// Node-indexed exact-rational process: one value per node, so
/// F_t-measurability is structural.
struct AdaptedProcess {
  std::vector<Rat> v;

  AdaptedProcess() = default;
  explicit AdaptedProcess(int n, const Rat& fill = Rat(0)) : v(n, fill) {}
  Rat& at(int node) { return v[node]; }
  const Rat& at(int node) const { return v[node]; }
  int size() const { return static_cast<int>(v.size()); }
};

/// Value attached to each non-leaf node u, applied to the step out of u
/// (constant across u's children). Leaf slots are carried but ignored.
struct PredictableProcess {
  std::vector<Rat> v;

  PredictableProcess() = default;
  explicit PredictableProcess(int n, const Rat& fill = Rat(0)) : v(n, fill) {}
  Rat& at(int node) { return v[node]; }
  const Rat& at(int node) const { return v[node]; }
  int size() const { return static_cast<int>(v.size()); }
};

/// Float-valued counterparts for the numeric track.
struct RealAdapted {
  std::vector<double> v;
  RealAdapted() = default;
  explicit RealAdapted(int n, double fill = 0.0) : v(n, fill) {}
};
struct RealPredictable {
  std::vector<double> v;
  RealPredictable() = default;
  explicit RealPredictable(int n, double fill = 0.0) : v(n, fill) {}
};

/// Adapted first-hitting flag pattern. The effective random time on a path is
/// the first flagged node's time, saturating at the horizon.
struct StoppingTime {
  std::vector<std::uint8_t> flag;

  StoppingTime() = default;
  explicit StoppingTime(int n) : flag(n, 0) {}

  static constexpr int kNotYet = std::numeric_limits<int>::max();

  /// For each node n: the stop time if it is already determined on the path
  /// to n (value <= time(n)), else kNotYet. With all-leaves-at-T trees this
  /// saturates to T at the leaves automatically when no flag fires.
  std::vector<int> reached_time(const ScenarioTree& tree) const {
    std::vector<int> r(tree.node_count(), kNotYet);
    for (int i = 0; i < tree.node_count(); ++i) {
      int p = tree.parent(i);
      if (p >= 0 && r[p] != kNotYet)
        r[i] = r[p];
      else if (flag[i])
        r[i] = tree.time(i);
      else if (tree.is_leaf(i))
        r[i] = tree.horizon();  // saturation at the horizon
    }
    return r;
  }

  /// Stop time evaluated on the path through a leaf.
  int value_at_leaf(const ScenarioTree& tree, int leaf) const {
    int u = leaf;
    int val = tree.horizon();
    while (u >= 0) {
      if (flag[u]) val = tree.time(u);
      u = tree.parent(u);
    }
    return val;
  }
};

/// Probability measure as exact leaf-path masses (indexed by leaf ordinal).
struct MeasureVector {
  std::vector<Rat> leaf_mass;

  MeasureVector() = default;
  explicit MeasureVector(int leaf_count, const Rat& fill = Rat(0))
      : leaf_mass(leaf_count, fill) {}

  Rat total() const {
    Rat s(0);
    for (const Rat& m : leaf_mass) s += m;
    return s;
  }
  bool strictly_positive() const {
    for (const Rat& m : leaf_mass)
      if (m <= 0) return false;
    return !leaf_mass.empty();
  }
  void validate(const ScenarioTree& tree, bool require_positive = false) const {
    if (static_cast<int>(leaf_mass.size()) != tree.leaf_count())
      throw Error(Errc::invariant_error, "measure has wrong leaf count");
    for (std::size_t k = 0; k < leaf_mass.size(); ++k) {
      if (leaf_mass[k] < 0)
        throw Error(Errc::invariant_error, "negative leaf mass",
                    tree.id(tree.leaves()[k]));
      if (require_positive && leaf_mass[k] == 0)
        throw Error(Errc::not_equivalent, "zero leaf mass", tree.id(tree.leaves()[k]));
    }
    if (total() != 1)
      throw Error(Errc::invariant_error, "leaf masses sum to " + rat_str(total()));
  }

  /// Subtree mass per node (mass of the atom at that node).
  std::vector<Rat> node_mass(const ScenarioTree& tree) const {
    std::vector<Rat> m(tree.node_count(), Rat(0));
    for (int k = 0; k < tree.leaf_count(); ++k) m[tree.leaves()[k]] = leaf_mass[k];
    for (int i = tree.node_count() - 1; i >= 0; --i) {
      int p = tree.parent(i);
      if (p >= 0) m[p] += m[i];
    }
    return m;
  }
};

/// Path measure induced by the branch probabilities (the physical measure of
/// the tree file).
inline MeasureVector measure_from_branch_probs(const ScenarioTree& tree) {
  std::vector<Rat> path(tree.node_count(), Rat(1));
  for (int i = 1; i < tree.node_count(); ++i)
    path[i] = path[tree.parent(i)] * tree.branch_prob(i);
  MeasureVector P(tree.leaf_count());
  for (int k = 0; k < tree.leaf_count(); ++k) P.leaf_mass[k] = path[tree.leaves()[k]];
  return P;
}

// ---------------------------------------------------------------------------
// File format
//
// {"T": int,
//  "nodes": [{"id": str, "parent": str|null}, ...],
//  "prob": {"child-id": "p/q", ...},
//  "processes": {"name": {"node-id": "p/q", ...}, ...},
//  "assets": ["name", ...]}            // optional; defaults to all processes
//
// Rationals are strings "p/q" or "n" (plain JSON integers also accepted).
// Node times are derived from parent depth, not stored.
// ---------------------------------------------------------------------------

struct TreeDocument {
  ScenarioTree tree;
  std::map<std::string, AdaptedProcess> processes;
  std::vector<std::string> assets;
};

namespace detail {
inline Rat json_rat(const json& j, const std::string& context) {
  if (j.is_number_integer())
    return Rat(BigInt(j.get<long long>()));
  if (j.is_string()) {
    auto r = parse_rat(j.get<std::string>());
    if (r) return *r;
  }
  throw Error(Errc::parse_error, "expected rational \"p/q\" at " + context);
}
}  // namespace detail

inline TreeDocument tree_document_from_json(const json& doc) {
  if (!doc.is_object()) throw Error(Errc::parse_error, "document is not a JSON object");
  if (!doc.contains("T") || !doc["T"].is_number_integer())
    throw Error(Errc::parse_error, "missing integer field \"T\"");
  if (!doc.contains("nodes") || !doc["nodes"].is_array())
    throw Error(Errc::parse_error, "missing array field \"nodes\"");
  const int horizon = doc["T"].get<int>();

  std::vector<std::pair<std::string, std::string>> nodes;
  for (const auto& n : doc["nodes"]) {
    if (!n.is_object() || !n.contains("id") || !n["id"].is_string())
      throw Error(Errc::parse_error, "node entry needs a string \"id\"");
    std::string parent;
    if (n.contains("parent") && !n["parent"].is_null()) {
      if (!n["parent"].is_string())
        throw Error(Errc::parse_error, "node \"parent\" must be string or null");
      parent = n["parent"].get<std::string>();
    }
    nodes.emplace_back(n["id"].get<std::string>(), parent);
  }

  std::map<std::string, Rat> prob;
  if (doc.contains("prob")) {
    if (!doc["prob"].is_object()) throw Error(Errc::parse_error, "\"prob\" must be an object");
    for (const auto& [k, v] : doc["prob"].items())
      prob.emplace(k, detail::json_rat(v, "prob." + k));
  }

  TreeDocument out{ScenarioTree::build(horizon, nodes, prob), {}, {}};
  const ScenarioTree& tree = out.tree;

  if (doc.contains("processes")) {
    if (!doc["processes"].is_object())
      throw Error(Errc::parse_error, "\"processes\" must be an object");
    for (const auto& [name, table] : doc["processes"].items()) {
      if (!table.is_object())
        throw Error(Errc::parse_error, "process \"" + name + "\" must be an object");
      AdaptedProcess x(tree.node_count());
      std::vector<bool> seen(tree.node_count(), false);
      for (const auto& [nid, val] : table.items()) {
        if (!tree.has_node(nid))
          throw Error(Errc::parse_error, "process \"" + name + "\" names unknown node", nid);
        int i = tree.index_of(nid);
        x.v[i] = detail::json_rat(val, "processes." + name + "." + nid);
        seen[i] = true;
      }
      for (int i = 0; i < tree.node_count(); ++i)
        if (!seen[i])
          throw Error(Errc::parse_error,
                      "process \"" + name + "\" missing value at node", tree.id(i));
      out.processes.emplace(name, std::move(x));
    }
  }

  if (doc.contains("assets")) {
    if (!doc["assets"].is_array()) throw Error(Errc::parse_error, "\"assets\" must be an array");
    for (const auto& a : doc["assets"]) {
      if (!a.is_string()) throw Error(Errc::parse_error, "asset names must be strings");
      const std::string name = a.get<std::string>();
      if (!out.processes.count(name))
        throw Error(Errc::parse_error, "asset \"" + name + "\" has no process table");
      out.assets.push_back(name);
    }
  } else {
    for (const auto& [name, _] : out.processes) out.assets.push_back(name);
  }
  return out;
}

inline TreeDocument load_tree_document(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const std::exception& e) {
    throw Error(Errc::parse_error, e.what());
  }
  return tree_document_from_json(doc);
}

/// Loads and validates just the tree from a document.
inline ScenarioTree load_tree(const std::string& text) {
  return load_tree_document(text).tree;
}

inline json tree_document_to_json(const TreeDocument& d) {
  const ScenarioTree& t = d.tree;
  json nodes = json::array();
  for (int i = 0; i < t.node_count(); ++i) {
    json n;
    n["id"] = t.id(i);
    if (t.parent(i) < 0)
      n["parent"] = nullptr;
    else
      n["parent"] = t.id(t.parent(i));
    nodes.push_back(std::move(n));
  }
  json prob = json::object();
  for (int i = 1; i < t.node_count(); ++i) prob[t.id(i)] = rat_str(t.branch_prob(i));
  json procs = json::object();
  for (const auto& [name, x] : d.processes) {
    json table = json::object();
    for (int i = 0; i < t.node_count(); ++i) table[t.id(i)] = rat_str(x.v[i]);
    procs[name] = std::move(table);
  }
  json out;
  out["T"] = t.horizon();
  out["nodes"] = std::move(nodes);
  out["prob"] = std::move(prob);
  out["processes"] = std::move(procs);
  out["assets"] = d.assets;
  return out;
}

/// Leaf-indexed values ("claims"), file format {"values": {"leaf-id": "p/q"}}.
inline std::vector<Rat> claim_from_json(const json& doc, const ScenarioTree& tree) {
  if (!doc.is_object() || !doc.contains("values") || !doc["values"].is_object())
    throw Error(Errc::parse_error, "claim document needs an object field \"values\"");
  std::vector<Rat> xi(tree.leaf_count(), Rat(0));
  std::vector<bool> seen(tree.leaf_count(), false);
  for (const auto& [nid, val] : doc["values"].items()) {
    if (!tree.has_node(nid)) throw Error(Errc::parse_error, "unknown node id", nid);
    int i = tree.index_of(nid);
    int k = tree.leaf_ordinal(i);
    if (k < 0) throw Error(Errc::parse_error, "claim value on a non-leaf node", nid);
    xi[k] = detail::json_rat(val, "values." + nid);
    seen[k] = true;
  }
  for (int k = 0; k < tree.leaf_count(); ++k)
    if (!seen[k])
      throw Error(Errc::parse_error, "claim missing value at leaf",
                  tree.id(tree.leaves()[k]));
  return xi;
}

inline json claim_to_json(const ScenarioTree& tree, const std::vector<Rat>& xi) {
  json values = json::object();
  for (int k = 0; k < tree.leaf_count(); ++k)
    values[tree.id(tree.leaves()[k])] = rat_str(xi[k]);
  json out;
  out["values"] = std::move(values);
  return out;
}

inline json measure_to_json(const ScenarioTree& tree, const MeasureVector& q) {
  return claim_to_json(tree, q.leaf_mass);
}

inline MeasureVector measure_from_json(const json& doc, const ScenarioTree& tree) {
  MeasureVector q;
  q.leaf_mass = claim_from_json(doc, tree);
  q.validate(tree);
  return q;
}

}  // namespace martrep
