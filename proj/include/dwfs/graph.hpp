#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dwfs/dataset.hpp"

namespace dwfs {

using SparseFeatures = std::vector<std::pair<std::uint32_t, double>>;  // sorted by index

struct CallNode {
  std::int64_t id = 0;
  std::string signature;
  bool sensitive = false;
  SparseFeatures features;
};

/// Directed method-level call graph. Edges hold positions into `nodes`.
struct CallGraph {
  std::vector<CallNode> nodes;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  int label = -1;
  SparseFeatures app_features;  // app-level values (permissions), broadcast to nodes

  std::size_t sensitive_count() const;
  /// Sorts and deduplicates edges; checks ids are unique and endpoints exist.
  void normalize();

  nlohmann::ordered_json to_json() const;
  /// Edges in the file refer to node ids.
  static CallGraph from_json(const nlohmann::json& j);
  std::string serialize() const;
};

CallGraph load_graph(const std::filesystem::path& path);
void save_graph(const CallGraph& g, const std::filesystem::path& path);

/// Signature patterns; '*' matches any run of characters, everything else is literal.
struct SensitiveApiList {
  std::vector<std::string> patterns;

  bool matches(std::string_view signature) const;
  /// One pattern per line; blank lines and lines starting with '#' are ignored.
  static SensitiveApiList parse(std::string_view text);
  static SensitiveApiList load(const std::filesystem::path& path);
};

bool glob_match(std::string_view pattern, std::string_view text);

/// Returns a copy with `sensitive` set iff the signature matches the list.
CallGraph mark_sensitive(const CallGraph& g, const SensitiveApiList& list);

/// Where the N-hop extension is measured from.
enum class HopOrigin {
  Sensitive,  // BFS of depth N from each sensitive node (retains distance <= max(1, N))
  Neighbors,  // BFS of depth N beyond the direct neighbors (retains distance <= N + 1)
};

struct SbsConfig {
  std::size_t hops = 0;
  HopOrigin origin = HopOrigin::Sensitive;
};

/// Keeps every sensitive node, its direct predecessors and successors, and the
/// N-hop undirected neighborhood, then returns the induced subgraph. Node ids
/// and relative order are preserved.
CallGraph extract_sbs(const CallGraph& g, const SbsConfig& cfg);

struct FeaturedGraph {
  std::size_t n_nodes = 0;
  std::size_t n_features = 0;
  std::vector<double> x;  // row-major n_nodes x n_features
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  int label = -1;
  std::vector<std::string> warnings;
};

/// Projects raw node features onto the selected schema columns. Permission
/// columns take the graph's app-level value on every node.
FeaturedGraph assign_node_features(const CallGraph& g, const std::vector<std::size_t>& selected,
                                   const FeatureSchema& schema);

struct GraphSummary {
  int label = -1;
  std::size_t nodes = 0;
  std::size_t edges = 0;
  std::size_t bytes = 0;
};

GraphSummary summarize(const CallGraph& g);

struct GraphStatsRow {
  std::string group;  // family name or "overall"
  std::size_t graphs = 0;
  double mean_nodes = 0, median_nodes = 0;
  double mean_edges = 0, median_edges = 0;
  std::size_t total_bytes = 0;
  // 1 - reduced/original over paired totals; present only with originals.
  std::optional<double> node_reduction, edge_reduction, combined_reduction;
};

struct GraphStats {
  std::vector<GraphStatsRow> rows;  // one per non-empty family, then "overall"

  const GraphStatsRow& overall() const { return rows.back(); }
  nlohmann::ordered_json to_json() const;
  std::string to_markdown() const;
};

/// `originals`, when given, must be paired index-by-index with `graphs`.
GraphStats graph_stats(const std::vector<GraphSummary>& graphs, const FamilyLabelMap& families,
                       const std::vector<GraphSummary>* originals = nullptr);

}  // namespace dwfs
