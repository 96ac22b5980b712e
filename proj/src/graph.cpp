#include "dwfs/graph.hpp"

#include <algorithm>
#include <deque>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "dwfs/common.hpp"

namespace dwfs {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

ordered_json sparse_to_json(const SparseFeatures& f) {
  ordered_json j = ordered_json::object();
  for (const auto& [k, v] : f) j[std::to_string(k)] = v;
  return j;
}

SparseFeatures sparse_from_json(const json& j, const std::string& where) {
  if (!j.is_object()) fail(ErrorKind::Parse, where + ": features must be an object");
  SparseFeatures f;
  for (const auto& [key, value] : j.items()) {
    std::size_t pos = 0;
    unsigned long idx = 0;
    try {
      idx = std::stoul(key, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != key.size() || key.empty()) fail(ErrorKind::Parse, where + ": feature key '" + key + "' is not an index");
    if (!value.is_number()) fail(ErrorKind::Parse, where + ": feature '" + key + "' is not numeric");
    f.emplace_back(static_cast<std::uint32_t>(idx), value.get<double>());
  }
  std::sort(f.begin(), f.end());
  return f;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

}  // namespace

std::size_t CallGraph::sensitive_count() const {
  return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const CallNode& n) { return n.sensitive; }));
}

void CallGraph::normalize() {
  std::unordered_set<std::int64_t> ids;
  for (const auto& n : nodes)
    if (!ids.insert(n.id).second) fail(ErrorKind::Validation, "duplicate node id " + std::to_string(n.id));
  for (const auto& [u, v] : edges)
    if (u >= nodes.size() || v >= nodes.size())
      fail(ErrorKind::Validation, "edge endpoint out of range (" + std::to_string(u) + ", " + std::to_string(v) + ")");
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
}

ordered_json CallGraph::to_json() const {
  ordered_json j;
  ordered_json ns = ordered_json::array();
  for (const auto& n : nodes)
    ns.push_back({{"id", n.id}, {"sig", n.signature}, {"sensitive", n.sensitive}, {"features", sparse_to_json(n.features)}});
  j["nodes"] = std::move(ns);
  ordered_json es = ordered_json::array();
  for (const auto& [u, v] : edges) es.push_back({nodes[u].id, nodes[v].id});
  j["edges"] = std::move(es);
  j["label"] = label;
  if (!app_features.empty()) j["app_features"] = sparse_to_json(app_features);
  return j;
}

CallGraph CallGraph::from_json(const json& j) {
  if (!j.is_object() || !j.contains("nodes") || !j.contains("edges"))
    fail(ErrorKind::Schema, "graph document needs 'nodes' and 'edges'");
  CallGraph g;
  std::unordered_map<std::int64_t, std::uint32_t> pos;
  for (const auto& n : j.at("nodes")) {
    CallNode node;
    node.id = n.at("id").get<std::int64_t>();
    node.signature = n.value("sig", std::string());
    node.sensitive = n.value("sensitive", false);
    if (n.contains("features"))
      node.features = sparse_from_json(n.at("features"), "node " + std::to_string(node.id));
    if (!pos.emplace(node.id, static_cast<std::uint32_t>(g.nodes.size())).second)
      fail(ErrorKind::Validation, "duplicate node id " + std::to_string(node.id));
    g.nodes.push_back(std::move(node));
  }
  for (const auto& e : j.at("edges")) {
    if (!e.is_array() || e.size() != 2) fail(ErrorKind::Parse, "edge must be a [caller, callee] pair");
    const auto a = pos.find(e[0].get<std::int64_t>()), b = pos.find(e[1].get<std::int64_t>());
    if (a == pos.end() || b == pos.end()) fail(ErrorKind::Validation, "edge " + e.dump() + " refers to a missing node");
    g.edges.emplace_back(a->second, b->second);
  }
  g.label = j.value("label", -1);
  if (j.contains("app_features")) g.app_features = sparse_from_json(j.at("app_features"), "app_features");
  g.normalize();
  return g;
}

std::string CallGraph::serialize() const { return to_json().dump(); }

CallGraph load_graph(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Parse, path.string() + ": " + e.what());
  }
  try {
    return CallGraph::from_json(j);
  } catch (const json::exception& e) {
    fail(ErrorKind::Schema, path.string() + ": " + e.what());
  } catch (const Error& e) {
    fail(e.kind(), path.string() + ": " + e.what());
  }
}

void save_graph(const CallGraph& g, const std::filesystem::path& path) { write_file_atomic(path, g.serialize() + "\n"); }

bool glob_match(std::string_view pattern, std::string_view text) {
  std::size_t p = 0, t = 0, star = std::string_view::npos, mark = 0;
  while (t < text.size()) {
    if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      mark = t;
    } else if (p < pattern.size() && pattern[p] == text[t]) {
      ++p;
      ++t;
    } else if (star != std::string_view::npos) {
      p = star + 1;
      t = ++mark;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

bool SensitiveApiList::matches(std::string_view signature) const {
  return std::any_of(patterns.begin(), patterns.end(), [&](const std::string& p) { return glob_match(p, signature); });
}

SensitiveApiList SensitiveApiList::parse(std::string_view text) {
  SensitiveApiList list;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    const auto e = line.find_last_not_of(" \t\r");
    list.patterns.push_back(line.substr(b, e - b + 1));
  }
  return list;
}

SensitiveApiList SensitiveApiList::load(const std::filesystem::path& path) { return parse(read_text_file(path)); }

CallGraph mark_sensitive(const CallGraph& g, const SensitiveApiList& list) {
  CallGraph out = g;
  for (auto& n : out.nodes) n.sensitive = list.matches(n.signature);
  return out;
}

CallGraph extract_sbs(const CallGraph& g, const SbsConfig& cfg) {
  const std::size_t n = g.nodes.size();
  std::vector<std::vector<std::uint32_t>> preds(n), succs(n);
  for (const auto& [u, v] : g.edges) {
    succs[u].push_back(v);
    preds[v].push_back(u);
  }
  const std::size_t limit = cfg.origin == HopOrigin::Sensitive ? cfg.hops : cfg.hops + 1;

  std::vector<char> keep(n, 0);
  std::vector<char> visited(n, 0);
  std::vector<std::uint32_t> touched;
  std::deque<std::pair<std::uint32_t, std::size_t>> queue;
  for (std::uint32_t s = 0; s < n; ++s) {
    if (!g.nodes[s].sensitive) continue;
    keep[s] = 1;
    for (auto p : preds[s]) keep[p] = 1;
    for (auto c : succs[s]) keep[c] = 1;
    if (cfg.hops == 0) continue;

    // Per-node visited set, as a reusable mask reset after each search.
    for (auto t : touched) visited[t] = 0;
    touched.assign(1, s);
    visited[s] = 1;
    queue.assign(1, {s, 0});
    while (!queue.empty()) {
      const auto [u, h] = queue.front();
      queue.pop_front();
      if (h >= limit) continue;
      for (const auto* adj : {&preds[u], &succs[u]})
        for (auto w : *adj) {
          if (visited[w]) continue;
          visited[w] = 1;
          keep[w] = 1;
          touched.push_back(w);
          queue.emplace_back(w, h + 1);
        }
    }
  }

  CallGraph out;
  out.label = g.label;
  out.app_features = g.app_features;
  std::vector<std::uint32_t> remap(n, 0);
  for (std::uint32_t i = 0; i < n; ++i) {
    if (!keep[i]) continue;
    remap[i] = static_cast<std::uint32_t>(out.nodes.size());
    out.nodes.push_back(g.nodes[i]);
  }
  for (const auto& [u, v] : g.edges)
    if (keep[u] && keep[v]) out.edges.emplace_back(remap[u], remap[v]);
  std::sort(out.edges.begin(), out.edges.end());
  return out;
}

FeaturedGraph assign_node_features(const CallGraph& g, const std::vector<std::size_t>& selected,
                                   const FeatureSchema& schema) {
  for (std::size_t c : selected)
    if (c >= schema.dimension())
      fail(ErrorKind::Argument, "selected feature index " + std::to_string(c) + " outside schema of dimension " +
                                    std::to_string(schema.dimension()));
  FeaturedGraph fg;
  fg.n_nodes = g.nodes.size();
  fg.n_features = selected.size();
  fg.edges = g.edges;
  fg.label = g.label;
  fg.x.assign(fg.n_nodes * fg.n_features, 0.0);
  if (selected.empty()) fg.warnings.push_back("no features selected; node feature matrix has 0 columns");

  auto lookup = [](const SparseFeatures& f, std::size_t idx) {
    const auto it = std::lower_bound(f.begin(), f.end(), std::pair<std::uint32_t, double>(static_cast<std::uint32_t>(idx), -1e308));
    return it != f.end() && it->first == idx ? it->second : 0.0;
  };
  for (std::size_t k = 0; k < selected.size(); ++k) {
    const std::size_t col = selected[k];
    const bool app_level = schema.kind(col) == FeatureKind::PermissionFlag;
    const double app_value = app_level ? lookup(g.app_features, col) : 0.0;
    for (std::size_t r = 0; r < fg.n_nodes; ++r)
      fg.x[r * fg.n_features + k] = app_level ? app_value : lookup(g.nodes[r].features, col);
  }
  return fg;
}

GraphSummary summarize(const CallGraph& g) { return {g.label, g.nodes.size(), g.edges.size(), g.serialize().size()}; }

GraphStats graph_stats(const std::vector<GraphSummary>& graphs, const FamilyLabelMap& families,
                       const std::vector<GraphSummary>* originals) {
  if (originals && originals->size() != graphs.size())
    fail(ErrorKind::Argument, "graph_stats: originals are not paired with the reduced graphs");
  auto make_row = [&](const std::string& group, const std::vector<std::size_t>& members) {
    GraphStatsRow row;
    row.group = group;
    row.graphs = members.size();
    std::vector<double> nodes, edges;
    double on = 0, oe = 0, rn = 0, re = 0;
    for (std::size_t i : members) {
      nodes.push_back(static_cast<double>(graphs[i].nodes));
      edges.push_back(static_cast<double>(graphs[i].edges));
      row.total_bytes += graphs[i].bytes;
      rn += static_cast<double>(graphs[i].nodes);
      re += static_cast<double>(graphs[i].edges);
      if (originals) {
        on += static_cast<double>((*originals)[i].nodes);
        oe += static_cast<double>((*originals)[i].edges);
      }
    }
    row.mean_nodes = rn / static_cast<double>(members.size());
    row.mean_edges = re / static_cast<double>(members.size());
    row.median_nodes = median(nodes);
    row.median_edges = median(edges);
    if (originals) {
      if (on > 0) row.node_reduction = 1.0 - rn / on;
      if (oe > 0) row.edge_reduction = 1.0 - re / oe;
      if (on + oe > 0) row.combined_reduction = 1.0 - (rn + re) / (on + oe);
    }
    return row;
  };

  GraphStats stats;
  std::map<int, std::vector<std::size_t>> by_label;
  std::vector<std::size_t> all;
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    by_label[graphs[i].label].push_back(i);
    all.push_back(i);
  }
  for (const auto& [label, members] : by_label) {
    const std::string name = families.contains(label) ? families.name(static_cast<std::size_t>(label))
                                                      : "label " + std::to_string(label);
    stats.rows.push_back(make_row(name, members));
  }
  if (!all.empty()) stats.rows.push_back(make_row("overall", all));
  return stats;
}

ordered_json GraphStats::to_json() const {
  ordered_json arr = ordered_json::array();
  for (const auto& r : rows) {
    ordered_json j;
    j["group"] = r.group;
    j["graphs"] = r.graphs;
    j["mean_nodes"] = r.mean_nodes;
    j["median_nodes"] = r.median_nodes;
    j["mean_edges"] = r.mean_edges;
    j["median_edges"] = r.median_edges;
    j["total_bytes"] = r.total_bytes;
    if (r.node_reduction) j["node_reduction"] = *r.node_reduction;
    if (r.edge_reduction) j["edge_reduction"] = *r.edge_reduction;
    if (r.combined_reduction) j["combined_reduction"] = *r.combined_reduction;
    arr.push_back(std::move(j));
  }
  return {{"format", "dwfs-graph-stats"}, {"version", 1}, {"rows", std::move(arr)}};
}

std::string GraphStats::to_markdown() const {
  std::ostringstream out;
  out << "| Family | Graphs | Avg nodes | Median nodes | Avg edges | Median edges | Bytes | Node red. | Edge red. |\n";
  out << "|---|---|---|---|---|---|---|---|---|\n";
  auto pct = [](const std::optional<double>& v) {
    if (!v) return std::string("—");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", *v * 100.0);
    return std::string(buf);
  };
  for (const auto& r : rows) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "| %s | %zu | %.2f | %.1f | %.2f | %.1f | %zu | %s | %s |\n", r.group.c_str(), r.graphs,
                  r.mean_nodes, r.median_nodes, r.mean_edges, r.median_edges, r.total_bytes,
                  pct(r.node_reduction).c_str(), pct(r.edge_reduction).c_str());
    out << buf;
  }
  return out.str();
}

}  // namespace dwfs
